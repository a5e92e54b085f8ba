#pragma once

#include <array>
#include <string>
#include <vector>

#include "cefm/raster.hpp"

namespace cefm {

struct EmptyMask : RasterError {
    using RasterError::RasterError;
};
struct DegenerateMask : RasterError {
    using RasterError::RasterError;
};
struct DegenerateContour : RasterError {
    using RasterError::RasterError;
};

// The five ABC descriptors: asymmetry, mean absolute border curvature
// (1/pixel), and HSV channel standard deviations over the lesion.
struct ClinicalFeatures {
    double a = 0.0;
    double b2 = 0.0;
    double sigma_h = 0.0;
    double sigma_s = 0.0;
    double sigma_v = 0.0;

    std::array<double, 5> as_array() const { return {a, b2, sigma_h, sigma_s, sigma_v}; }
};

inline constexpr std::array<const char*, 5> kFeatureNames = {"a", "b2", "sigma_h", "sigma_s",
                                                             "sigma_v"};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Ordered closed polygon of boundary points, pixel units. Last point is
// adjacent to the first; no consecutive duplicates.
struct Contour {
    std::vector<Point> pts;
};

enum class AsymmetryAxis { VerticalCentroid, Principal };

// A = sum over mask pixels of |I - I_mirror| / mask area, I = luma in [0,1].
// Reflections landing outside the image read as intensity 0.
double compute_asymmetry(const RgbImage& image, const BinaryMask& mask,
                         AsymmetryAxis axis = AsymmetryAxis::VerticalCentroid);

// Moore boundary following on the largest 8-connected component,
// counter-clockwise (positive shoelace area).
Contour trace_contour(const BinaryMask& mask);

// Resamples the contour to `samples` equal-arc-length points, then
// b2 = mean |dtheta/ds| over the resampled polygon. Signed mode keeps the
// sign of the turning angle (mean is then dominated by total turning).
double compute_border_irregularity(const Contour& contour, int samples = 128,
                                   bool signed_mode = false);

// Equal-arc-length resampling of a closed polygon; exposed because tests
// and the curvature oracle share it.
std::vector<Point> resample_closed(const std::vector<Point>& pts, int samples);

// Hexcone conversion; h in [0,1) as degrees/360, s = (max-min)/max, v = max.
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);

// Population standard deviation of each HSV channel over mask pixels.
std::array<double, 3> compute_color_variation(const RgbImage& image, const BinaryMask& mask);

struct FeatureConfig {
    AsymmetryAxis axis = AsymmetryAxis::VerticalCentroid;
    int contour_samples = 128;
    bool signed_curvature = false;
};

ClinicalFeatures extract_all(const RgbImage& image, const BinaryMask& mask,
                             const FeatureConfig& cfg = {});

// ---- feature CSV ----

struct FeatureRow {
    std::string id;
    ClinicalFeatures f;
    int label = -1;  // 0 nevus, 1 melanoma, -1 unlabeled
};

// Header `id,a,b2,sigma_h,sigma_s,sigma_v,label`, floats at 17 significant
// digits. `provenance` is written as a leading `# ` comment line when nonempty.
void write_feature_csv(const std::vector<FeatureRow>& rows, const std::string& path,
                       const std::string& provenance = "");
std::vector<FeatureRow> read_feature_csv(const std::string& path);

// 17-significant-digit rendering used by every CSV writer.
std::string format_double(double v);

}  // namespace cefm
