#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include "cefm/mlp.hpp"
#include "cefm/raster.hpp"

namespace testutil {

// Scratch directory removed on scope exit.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cefm_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

inline cefm::RgbImage uniform_image(int w, int h, std::uint8_t r, std::uint8_t g,
                                    std::uint8_t b) {
    cefm::RgbImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.set(x, y, r, g, b);
    return img;
}

inline cefm::RgbImage random_image(cefm::Rng& rng, int w, int h) {
    cefm::RgbImage img(w, h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

inline cefm::BinaryMask full_mask(int w, int h) {
    cefm::BinaryMask m(w, h);
    std::fill(m.values.begin(), m.values.end(), 1);
    return m;
}

// Disk of radius r centered in a square canvas with `pad` pixels of margin.
inline cefm::BinaryMask disk_mask(int r, int pad = 4) {
    const int size = 2 * (r + pad) + 1;
    const int c = r + pad;
    cefm::BinaryMask m(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if ((x - c) * (x - c) + (y - c) * (y - c) <= r * r) m.set(x, y, true);
    return m;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

}  // namespace testutil
