#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cefm {

struct RasterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FileNotFound : RasterError {
    using RasterError::RasterError;
};
struct DecodeError : RasterError {
    using RasterError::RasterError;
};
struct UnsupportedFormat : RasterError {
    using RasterError::RasterError;
};
struct DimensionMismatch : RasterError {
    using RasterError::RasterError;
};

// 8-bit RGB raster, row-major interleaved.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width*height*3

    RgbImage() = default;
    RgbImage(int w, int h)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::size_t idx(int x, int y) const {
        return (static_cast<std::size_t>(y) * width + x) * 3;
    }
    std::uint8_t r(int x, int y) const { return pixels[idx(x, y)]; }
    std::uint8_t g(int x, int y) const { return pixels[idx(x, y) + 1]; }
    std::uint8_t b(int x, int y) const { return pixels[idx(x, y) + 2]; }
    void set(int x, int y, std::uint8_t rr, std::uint8_t gg, std::uint8_t bb) {
        const std::size_t i = idx(x, y);
        pixels[i] = rr;
        pixels[i + 1] = gg;
        pixels[i + 2] = bb;
    }
};

// Lesion support M(x,y); dimensions must match the paired image when used together.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;  // 0/1, width*height

    BinaryMask() = default;
    BinaryMask(int w, int h)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0) {}

    bool at(int x, int y) const {
        return values[static_cast<std::size_t>(y) * width + x] != 0;
    }
    void set(int x, int y, bool v) {
        values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    std::size_t true_count() const;
};

// Decodes 8-bit PNG (RGB or grayscale) and binary PPM/PGM. Format sniffed
// from magic bytes, not the extension.
RgbImage load_image(const std::string& path);

struct MaskLoadResult {
    BinaryMask mask;
    bool empty_mask = false;  // warning: zero true pixels
};

// Pixel true iff luma >= threshold, luma = 0.299R + 0.587G + 0.114B on [0,255].
MaskLoadResult load_mask(const std::string& path, int threshold = 128);

// BT.601 luma of one pixel, normalized to [0,1].
double luma(std::uint8_t r, std::uint8_t g, std::uint8_t b);

// Per-pixel intensity I(x,y) in [0,1], row-major.
std::vector<double> luma(const RgbImage& image);

// Writers exist for test fixtures and synthetic inputs only.
void write_png(const RgbImage& image, const std::string& path);
void write_ppm(const RgbImage& image, const std::string& path);
void write_pgm(const std::vector<std::uint8_t>& gray, int width, int height,
               const std::string& path);

}  // namespace cefm
