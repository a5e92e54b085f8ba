#include "cefm/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cefm {

namespace {

void check_pair(const RgbImage& image, const BinaryMask& mask) {
    if (image.width != mask.width || image.height != mask.height)
        throw DimensionMismatch("image " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + " vs mask " +
                                std::to_string(mask.width) + "x" + std::to_string(mask.height));
}

struct Centroid {
    double x = 0.0;
    double y = 0.0;
    std::size_t count = 0;
};

Centroid mask_centroid(const BinaryMask& mask) {
    Centroid c;
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                ++c.count;
            }
    if (c.count > 0) {
        c.x = sx / static_cast<double>(c.count);
        c.y = sy / static_cast<double>(c.count);
    }
    return c;
}

}  // namespace

double compute_asymmetry(const RgbImage& image, const BinaryMask& mask, AsymmetryAxis axis) {
    check_pair(image, mask);
    const Centroid c = mask_centroid(mask);
    if (c.count == 0) throw EmptyMask("asymmetry: mask has no true pixels");

    const std::vector<double> intensity = luma(image);
    auto sample = [&](long x, long y) -> double {
        if (x < 0 || y < 0 || x >= image.width || y >= image.height) return 0.0;
        return intensity[static_cast<std::size_t>(y) * image.width + x];
    };

    double axis_dx = 0.0, axis_dy = 1.0;  // vertical line through the centroid
    if (axis == AsymmetryAxis::Principal) {
        // principal eigenvector of the mask coordinate covariance
        double sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x)
                if (mask.at(x, y)) {
                    const double dx = x - c.x;
                    const double dy = y - c.y;
                    sxx += dx * dx;
                    syy += dy * dy;
                    sxy += dx * dy;
                }
        const double tr = sxx + syy;
        const double det = sxx * syy - sxy * sxy;
        const double lam = tr / 2.0 + std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
        // eigenvector for lam
        if (std::abs(sxy) > 1e-12) {
            axis_dx = lam - syy;
            axis_dy = sxy;
        } else {
            axis_dx = sxx >= syy ? 1.0 : 0.0;
            axis_dy = sxx >= syy ? 0.0 : 1.0;
        }
        const double n = std::hypot(axis_dx, axis_dy);
        axis_dx /= n;
        axis_dy /= n;
    }

    double num = 0.0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            long mx, my;
            if (axis == AsymmetryAxis::VerticalCentroid) {
                mx = std::lround(2.0 * c.x - x);
                my = y;
            } else {
                // reflect (x,y) about the line through the centroid along (axis_dx, axis_dy)
                const double px = x - c.x;
                const double py = y - c.y;
                const double dot = px * axis_dx + py * axis_dy;
                const double rx = 2.0 * dot * axis_dx - px;
                const double ry = 2.0 * dot * axis_dy - py;
                mx = std::lround(c.x + rx);
                my = std::lround(c.y + ry);
            }
            const double here = intensity[static_cast<std::size_t>(y) * image.width + x];
            num += std::abs(here - sample(mx, my));
        }
    }
    return num / static_cast<double>(c.count);
}

namespace {

// 8-connected component labelling; returns label per pixel (-1 outside) and
// the label of the largest component.
int largest_component(const BinaryMask& mask, std::vector<int>& labels) {
    const int w = mask.width, h = mask.height;
    labels.assign(static_cast<std::size_t>(w) * h, -1);
    int next = 0;
    std::vector<std::size_t> sizes;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t p0 = static_cast<std::size_t>(y0) * w + x0;
            if (!mask.values[p0] || labels[p0] >= 0) continue;
            const int lab = next++;
            sizes.push_back(0);
            stack.push_back({x0, y0});
            labels[p0] = lab;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                ++sizes[lab];
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t np = static_cast<std::size_t>(ny) * w + nx;
                        if (mask.values[np] && labels[np] < 0) {
                            labels[np] = lab;
                            stack.push_back({nx, ny});
                        }
                    }
                }
            }
        }
    }
    if (next == 0) return -1;
    int best = 0;
    for (int l = 1; l < next; ++l)
        if (sizes[l] > sizes[best]) best = l;
    return best;
}

double shoelace_area(const std::vector<Point>& pts) {
    double a = 0.0;
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = pts[i];
        const Point& q = pts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return a / 2.0;
}

}  // namespace

Contour trace_contour(const BinaryMask& mask) {
    std::vector<int> labels;
    const int target = largest_component(mask, labels);
    if (target < 0) throw EmptyMask("trace_contour: mask has no true pixels");

    const int w = mask.width, h = mask.height;
    auto inside = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < w && y < h &&
               labels[static_cast<std::size_t>(y) * w + x] == target;
    };

    // start: first component pixel in row-major order
    int sx = -1, sy = -1;
    for (int y = 0; y < h && sx < 0; ++y)
        for (int x = 0; x < w; ++x)
            if (inside(x, y)) {
                sx = x;
                sy = y;
                break;
            }

    // Moore neighborhood, clockwise starting west
    static const int nbr[8][2] = {{-1, 0}, {-1, -1}, {0, -1}, {1, -1},
                                  {1, 0},  {1, 1},   {0, 1},  {-1, 1}};

    auto advance = [&](int cx, int cy, int back, int& nx, int& ny, int& nback) -> bool {
        for (int k = 0; k < 8; ++k) {
            const int idx = (back + k) % 8;
            const int tx = cx + nbr[idx][0];
            const int ty = cy + nbr[idx][1];
            if (inside(tx, ty)) {
                // new backtrack points at the last empty cell checked
                const int prev = (idx + 7) % 8;
                const int ex = cx + nbr[prev][0];
                const int ey = cy + nbr[prev][1];
                nback = -1;
                for (int m = 0; m < 8; ++m)
                    if (tx + nbr[m][0] == ex && ty + nbr[m][1] == ey) {
                        nback = m;
                        break;
                    }
                nx = tx;
                ny = ty;
                return nback >= 0;
            }
        }
        return false;  // isolated pixel
    };

    std::vector<Point> pts;
    pts.push_back({static_cast<double>(sx), static_cast<double>(sy)});

    int cx = sx, cy = sy, back = 0;
    int fx, fy, fback;
    if (!advance(cx, cy, back, fx, fy, fback)) {
        throw DegenerateMask("trace_contour: component too small to form a boundary polygon");
    }
    // Jacob's stopping criterion: terminate when the first move is repeated
    const int stop_x = fx, stop_y = fy, stop_back = fback;
    cx = fx;
    cy = fy;
    back = fback;

    const std::size_t cap = 4 * static_cast<std::size_t>(w) * h + 16;
    std::size_t steps = 0;
    while (true) {
        if (pts.back().x != cx || pts.back().y != cy)
            pts.push_back({static_cast<double>(cx), static_cast<double>(cy)});
        int nx, ny, nback;
        if (!advance(cx, cy, back, nx, ny, nback)) break;
        cx = nx;
        cy = ny;
        back = nback;
        if (cx == stop_x && cy == stop_y && back == stop_back) break;
        if (++steps > cap) throw RasterError("trace_contour: boundary walk did not terminate");
    }

    // drop a duplicated closing point
    while (pts.size() > 1 && pts.back().x == pts.front().x && pts.back().y == pts.front().y)
        pts.pop_back();

    if (pts.size() < 3)
        throw DegenerateMask("trace_contour: fewer than 3 boundary points");

    if (shoelace_area(pts) < 0.0) std::reverse(pts.begin() + 1, pts.end());

    return Contour{std::move(pts)};
}

std::vector<Point> resample_closed(const std::vector<Point>& pts, int samples) {
    const std::size_t n = pts.size();
    std::vector<double> cum(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = pts[i];
        const Point& q = pts[(i + 1) % n];
        cum[i + 1] = cum[i] + std::hypot(q.x - p.x, q.y - p.y);
    }
    const double total = cum[n];

    std::vector<Point> out(samples);
    std::size_t seg = 0;
    for (int k = 0; k < samples; ++k) {
        const double t = total * k / samples;
        while (seg + 1 < n && cum[seg + 1] < t) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const Point& p = pts[seg];
        const Point& q = pts[(seg + 1) % n];
        if (len <= 0.0) {
            out[k] = p;
        } else {
            const double a = (t - cum[seg]) / len;
            out[k] = {p.x + a * (q.x - p.x), p.y + a * (q.y - p.y)};
        }
    }
    return out;
}

double compute_border_irregularity(const Contour& contour, int samples, bool signed_mode) {
    if (samples < 8) throw DegenerateContour("border irregularity needs samples >= 8");
    if (contour.pts.size() < 3) throw DegenerateContour("contour has fewer than 3 points");

    double perimeter = 0.0;
    for (std::size_t i = 0; i < contour.pts.size(); ++i) {
        const Point& p = contour.pts[i];
        const Point& q = contour.pts[(i + 1) % contour.pts.size()];
        perimeter += std::hypot(q.x - p.x, q.y - p.y);
    }
    if (perimeter < samples * 1e-12)
        throw DegenerateContour("contour perimeter is numerically zero");

    const std::vector<Point> poly = resample_closed(contour.pts, samples);

    double acc = 0.0;
    for (int i = 0; i < samples; ++i) {
        const Point& p0 = poly[(i + samples - 1) % samples];
        const Point& p1 = poly[i];
        const Point& p2 = poly[(i + 1) % samples];
        const double v1x = p1.x - p0.x, v1y = p1.y - p0.y;
        const double v2x = p2.x - p1.x, v2y = p2.y - p1.y;
        double dtheta = std::atan2(v2y, v2x) - std::atan2(v1y, v1x);
        while (dtheta <= -M_PI) dtheta += 2.0 * M_PI;
        while (dtheta > M_PI) dtheta -= 2.0 * M_PI;
        const double ds = (std::hypot(v1x, v1y) + std::hypot(v2x, v2y)) / 2.0;
        const double kappa = dtheta / ds;
        acc += signed_mode ? kappa : std::abs(kappa);
    }
    return acc / samples;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    v = mx;
    s = mx > 0.0 ? delta / mx : 0.0;
    if (delta <= 0.0) {
        h = 0.0;
        return;
    }
    double deg;
    if (mx == r) {
        deg = 60.0 * ((g - b) / delta);
    } else if (mx == g) {
        deg = 60.0 * ((b - r) / delta + 2.0);
    } else {
        deg = 60.0 * ((r - g) / delta + 4.0);
    }
    if (deg < 0.0) deg += 360.0;
    h = deg / 360.0;
    if (h >= 1.0) h -= 1.0;
}

std::array<double, 3> compute_color_variation(const RgbImage& image, const BinaryMask& mask) {
    check_pair(image, mask);

    std::vector<std::array<double, 3>> hsv;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (!mask.at(x, y)) continue;
            double h, s, v;
            rgb_to_hsv(image.r(x, y) / 255.0, image.g(x, y) / 255.0, image.b(x, y) / 255.0, h, s,
                       v);
            hsv.push_back({h, s, v});
        }
    }
    if (hsv.empty()) throw EmptyMask("color variation: mask has no true pixels");

    std::array<double, 3> mean = {0, 0, 0};
    std::array<double, 3> lo = hsv.front();
    std::array<double, 3> hi = hsv.front();
    for (const auto& p : hsv)
        for (int c = 0; c < 3; ++c) {
            mean[c] += p[c];
            lo[c] = std::min(lo[c], p[c]);
            hi[c] = std::max(hi[c], p[c]);
        }
    for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(hsv.size());

    std::array<double, 3> var = {0, 0, 0};
    for (const auto& p : hsv)
        for (int c = 0; c < 3; ++c) {
            const double d = p[c] - mean[c];
            var[c] += d * d;
        }
    std::array<double, 3> sigma;
    for (int c = 0; c < 3; ++c) {
        // a constant channel is exactly zero spread; the mean of n identical
        // doubles need not round back to that value, so short-circuit
        sigma[c] = lo[c] == hi[c] ? 0.0
                                  : std::sqrt(var[c] / static_cast<double>(hsv.size()));
    }
    return sigma;
}

ClinicalFeatures extract_all(const RgbImage& image, const BinaryMask& mask,
                             const FeatureConfig& cfg) {
    ClinicalFeatures f;
    f.a = compute_asymmetry(image, mask, cfg.axis);
    const Contour contour = trace_contour(mask);
    f.b2 = compute_border_irregularity(contour, cfg.contour_samples, cfg.signed_curvature);
    const auto sigma = compute_color_variation(image, mask);
    f.sigma_h = sigma[0];
    f.sigma_s = sigma[1];
    f.sigma_v = sigma[2];
    return f;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_feature_csv(const std::vector<FeatureRow>& rows, const std::string& path,
                       const std::string& provenance) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RasterError("cannot write: " + path);
    if (!provenance.empty()) out << "# " << provenance << "\n";
    out << "id,a,b2,sigma_h,sigma_s,sigma_v,label\n";
    for (const FeatureRow& r : rows) {
        out << r.id << ',' << format_double(r.f.a) << ',' << format_double(r.f.b2) << ','
            << format_double(r.f.sigma_h) << ',' << format_double(r.f.sigma_s) << ','
            << format_double(r.f.sigma_v) << ',' << r.label << '\n';
    }
}

std::vector<FeatureRow> read_feature_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("no such file: " + path);
    std::vector<FeatureRow> rows;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line.rfind("id,a,b2,sigma_h,sigma_s,sigma_v,label", 0) != 0)
                throw RasterError("feature CSV: unexpected header in " + path);
            header_seen = true;
            continue;
        }
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7) throw RasterError("feature CSV: malformed row in " + path);
        FeatureRow r;
        r.id = fields[0];
        r.f.a = std::stod(fields[1]);
        r.f.b2 = std::stod(fields[2]);
        r.f.sigma_h = std::stod(fields[3]);
        r.f.sigma_s = std::stod(fields[4]);
        r.f.sigma_v = std::stod(fields[5]);
        r.label = std::stoi(fields[6]);
        rows.push_back(std::move(r));
    }
    if (!header_seen) throw RasterError("feature CSV: missing header in " + path);
    return rows;
}

}  // namespace cefm
