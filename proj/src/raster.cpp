#include "cefm/raster.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

namespace cefm {

std::size_t BinaryMask::true_count() const {
    std::size_t n = 0;
    for (std::uint8_t v : values)
        if (v) ++n;
    return n;
}

double luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
}

std::vector<double> luma(const RgbImage& image) {
    std::vector<double> out(static_cast<std::size_t>(image.width) * image.height);
    for (std::size_t p = 0, i = 0; p < out.size(); ++p, i += 3)
        out[p] = luma(image.pixels[i], image.pixels[i + 1], image.pixels[i + 2]);
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_checked(const std::string& path, const char* mode) {
    if (mode[0] == 'r' && !std::filesystem::exists(path))
        throw FileNotFound("no such file: " + path);
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw RasterError("cannot open: " + path);
    return f;
}

// ---- PNG ----

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    (void)msg;
    longjmp(png_jmpbuf(png), 1);
}

void png_warn_fn(png_structp, png_const_charp) {}

RgbImage load_png(std::FILE* f, const std::string& path) {
    PngReader rd;
    rd.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (!rd.png) throw RasterError("libpng init failed");
    rd.info = png_create_info_struct(rd.png);
    if (!rd.info) throw RasterError("libpng init failed");

    if (setjmp(png_jmpbuf(rd.png)))
        throw DecodeError("corrupt or truncated PNG: " + path);

    png_init_io(rd.png, f);
    png_read_info(rd.png, rd.info);

    const png_uint_32 w = png_get_image_width(rd.png, rd.info);
    const png_uint_32 h = png_get_image_height(rd.png, rd.info);
    const int depth = png_get_bit_depth(rd.png, rd.info);
    const int color = png_get_color_type(rd.png, rd.info);

    if (depth != 8)
        throw UnsupportedFormat("PNG bit depth " + std::to_string(depth) +
                                " not supported (8-bit only): " + path);
    if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY)
        throw UnsupportedFormat("PNG color type " + std::to_string(color) +
                                " not supported (8-bit RGB or grayscale): " + path);
    if (w < 1 || h < 1) throw DecodeError("empty PNG: " + path);

    if (color == PNG_COLOR_TYPE_GRAY) png_set_gray_to_rgb(rd.png);
    png_read_update_info(rd.png, rd.info);

    RgbImage img(static_cast<int>(w), static_cast<int>(h));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * 3;

    // re-arm after the allocations: a longjmp over their construction would
    // skip the destructors
    if (setjmp(png_jmpbuf(rd.png)))
        throw DecodeError("corrupt or truncated PNG: " + path);
    png_read_image(rd.png, rows.data());
    png_read_end(rd.png, nullptr);
    return img;
}

// ---- PPM / PGM (binary, 8-bit) ----

int ppm_next_token(std::FILE* f, char* buf, int cap) {
    int c;
    do {
        c = std::fgetc(f);
        if (c == '#') {
            while (c != '\n' && c != EOF) c = std::fgetc(f);
        }
    } while (c == ' ' || c == '\t' || c == '\n' || c == '\r');
    int n = 0;
    while (c != EOF && c != ' ' && c != '\t' && c != '\n' && c != '\r' && n < cap - 1) {
        buf[n++] = static_cast<char>(c);
        c = std::fgetc(f);
    }
    buf[n] = '\0';
    return n;
}

long ppm_read_int(std::FILE* f, const std::string& path) {
    char buf[32];
    if (ppm_next_token(f, buf, sizeof buf) == 0)
        throw DecodeError("truncated PNM header: " + path);
    char* end = nullptr;
    long v = std::strtol(buf, &end, 10);
    if (end == buf || *end != '\0' || v < 0)
        throw DecodeError("bad PNM header token: " + path);
    return v;
}

RgbImage load_pnm(std::FILE* f, const std::string& path, bool gray) {
    const long w = ppm_read_int(f, path);
    const long h = ppm_read_int(f, path);
    const long maxval = ppm_read_int(f, path);
    if (w < 1 || h < 1) throw DecodeError("bad PNM dimensions: " + path);
    if (maxval != 255)
        throw UnsupportedFormat("PNM maxval " + std::to_string(maxval) +
                                " not supported (8-bit only): " + path);

    const std::size_t channels = gray ? 1 : 3;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * channels);
    if (std::fread(raw.data(), 1, raw.size(), f) != raw.size())
        throw DecodeError("truncated PNM payload: " + path);

    RgbImage img(static_cast<int>(w), static_cast<int>(h));
    if (gray) {
        for (std::size_t p = 0; p < raw.size(); ++p) {
            img.pixels[p * 3] = raw[p];
            img.pixels[p * 3 + 1] = raw[p];
            img.pixels[p * 3 + 2] = raw[p];
        }
    } else {
        img.pixels = std::move(raw);
    }
    return img;
}

}  // namespace

RgbImage load_image(const std::string& path) {
    FilePtr f = open_checked(path, "rb");

    unsigned char magic[8] = {0};
    const std::size_t got = std::fread(magic, 1, sizeof magic, f.get());
    std::rewind(f.get());

    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (got >= 8 && std::memcmp(magic, png_sig, 8) == 0) return load_png(f.get(), path);
    if (got >= 2 && magic[0] == 'P' && magic[1] == '6') {
        std::fseek(f.get(), 2, SEEK_SET);
        return load_pnm(f.get(), path, false);
    }
    if (got >= 2 && magic[0] == 'P' && magic[1] == '5') {
        std::fseek(f.get(), 2, SEEK_SET);
        return load_pnm(f.get(), path, true);
    }
    throw UnsupportedFormat("not a PNG or binary PPM/PGM file: " + path);
}

MaskLoadResult load_mask(const std::string& path, int threshold) {
    const RgbImage img = load_image(path);
    MaskLoadResult res;
    res.mask = BinaryMask(img.width, img.height);
    std::size_t on = 0;
    for (std::size_t p = 0, i = 0; p < res.mask.values.size(); ++p, i += 3) {
        const double y =
            0.299 * img.pixels[i] + 0.587 * img.pixels[i + 1] + 0.114 * img.pixels[i + 2];
        if (y >= threshold) {
            res.mask.values[p] = 1;
            ++on;
        }
    }
    res.empty_mask = (on == 0);
    return res;
}

void write_png(const RgbImage& image, const std::string& path) {
    FilePtr f = open_checked(path, "wb");
    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (!wr.png) throw RasterError("libpng init failed");
    wr.info = png_create_info_struct(wr.png);
    if (!wr.info) throw RasterError("libpng init failed");

    if (setjmp(png_jmpbuf(wr.png))) throw RasterError("PNG write failed: " + path);

    png_init_io(wr.png, f.get());
    png_set_IHDR(wr.png, wr.info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_const_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y)
        rows[y] = image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3;

    if (setjmp(png_jmpbuf(wr.png))) throw RasterError("PNG write failed: " + path);
    png_write_rows(wr.png, const_cast<png_bytepp>(const_cast<png_bytep*>(rows.data())),
                   image.height);
    png_write_end(wr.png, wr.info);
}

void write_ppm(const RgbImage& image, const std::string& path) {
    FilePtr f = open_checked(path, "wb");
    std::fprintf(f.get(), "P6\n%d %d\n255\n", image.width, image.height);
    if (std::fwrite(image.pixels.data(), 1, image.pixels.size(), f.get()) != image.pixels.size())
        throw RasterError("PPM write failed: " + path);
}

void write_pgm(const std::vector<std::uint8_t>& gray, int width, int height,
               const std::string& path) {
    if (gray.size() != static_cast<std::size_t>(width) * height)
        throw DimensionMismatch("PGM buffer size does not match dimensions");
    FilePtr f = open_checked(path, "wb");
    std::fprintf(f.get(), "P5\n%d %d\n255\n", width, height);
    if (std::fwrite(gray.data(), 1, gray.size(), f.get()) != gray.size())
        throw RasterError("PGM write failed: " + path);
}

}  // namespace cefm
