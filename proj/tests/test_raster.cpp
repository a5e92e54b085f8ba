#include <doctest.h>

#include <png.h>

#include <cstdio>

#include "cefm/raster.hpp"
#include "helpers.hpp"

using namespace cefm;
using testutil::TempDir;

namespace {

// 16-bit / RGBA fixtures for the unsupported-format paths.
void write_png_variant(const std::string& path, int bit_depth, int color_type) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, f);
    png_set_IHDR(png, info, 2, 2, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const int channels = color_type == PNG_COLOR_TYPE_RGBA  ? 4
                         : color_type == PNG_COLOR_TYPE_RGB ? 3
                                                            : 1;
    std::vector<png_byte> row(static_cast<std::size_t>(2) * channels * (bit_depth / 8), 0x42);
    for (int y = 0; y < 2; ++y) png_write_row(png, row.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

}  // namespace

TEST_SUITE("raster") {

TEST_CASE("luma endpoints and red channel weight") {
    CHECK(luma(255, 255, 255) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(luma(0, 0, 0) == 0.0);
    CHECK(luma(255, 0, 0) == doctest::Approx(0.299).epsilon(1e-12));
    CHECK(luma(0, 255, 0) == doctest::Approx(0.587).epsilon(1e-12));
    CHECK(luma(0, 0, 255) == doctest::Approx(0.114).epsilon(1e-12));
}

TEST_CASE("luma stays in range and is monotone per channel") {
    Rng rng(7);
    for (int rep = 0; rep < 200; ++rep) {
        const int r = static_cast<int>(rng.below(256));
        const int g = static_cast<int>(rng.below(256));
        const int b = static_cast<int>(rng.below(256));
        const double base = luma(r, g, b);
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);
        if (r < 255) CHECK(luma(r + 1, g, b) > base);
        if (g < 255) CHECK(luma(r, g + 1, b) > base);
        if (b < 255) CHECK(luma(r, g, b + 1) > base);
    }
}

TEST_CASE("png round-trip is the identity on pixels") {
    TempDir dir("raster");
    Rng rng(11);

    SUBCASE("4x4 fixture") {
        const RgbImage img = testutil::random_image(rng, 4, 4);
        write_png(img, dir.file("a.png"));
        const RgbImage back = load_image(dir.file("a.png"));
        CHECK(back.width == 4);
        CHECK(back.height == 4);
        REQUIRE(back.pixels.size() == 48);
        CHECK(back.pixels == img.pixels);
    }

    SUBCASE("random sizes, png and ppm") {
        for (int rep = 0; rep < 15; ++rep) {
            const int w = 1 + static_cast<int>(rng.below(16));
            const int h = 1 + static_cast<int>(rng.below(16));
            const RgbImage img = testutil::random_image(rng, w, h);

            write_png(img, dir.file("r.png"));
            CHECK(load_image(dir.file("r.png")).pixels == img.pixels);

            write_ppm(img, dir.file("r.ppm"));
            const RgbImage ppm = load_image(dir.file("r.ppm"));
            CHECK(ppm.width == w);
            CHECK(ppm.pixels == img.pixels);
        }
    }
}

TEST_CASE("grayscale sources expand to rgb") {
    TempDir dir("raster");
    std::vector<std::uint8_t> gray = {0, 64, 128, 255};
    write_pgm(gray, 2, 2, dir.file("g.pgm"));
    const RgbImage img = load_image(dir.file("g.pgm"));
    REQUIRE(img.width == 2);
    CHECK(img.r(1, 1) == 255);
    CHECK(img.g(1, 1) == 255);
    CHECK(img.b(0, 1) == 128);
    CHECK(img.r(0, 0) == 0);
}

TEST_CASE("load_image failure modes") {
    TempDir dir("raster");

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_image(dir.file("absent.png")), FileNotFound);
    }
    SUBCASE("truncated png") {
        Rng rng(3);
        write_png(testutil::random_image(rng, 8, 8), dir.file("t.png"));
        const std::string bytes = testutil::read_file(dir.file("t.png"));
        testutil::write_file(dir.file("t.png"), bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_image(dir.file("t.png")), DecodeError);
    }
    SUBCASE("16-bit png") {
        write_png_variant(dir.file("deep.png"), 16, PNG_COLOR_TYPE_RGB);
        CHECK_THROWS_AS(load_image(dir.file("deep.png")), UnsupportedFormat);
    }
    SUBCASE("rgba png") {
        write_png_variant(dir.file("rgba.png"), 8, PNG_COLOR_TYPE_RGBA);
        CHECK_THROWS_AS(load_image(dir.file("rgba.png")), UnsupportedFormat);
    }
    SUBCASE("not a raster at all") {
        testutil::write_file(dir.file("x.png"), "definitely not pixels");
        CHECK_THROWS_AS(load_image(dir.file("x.png")), UnsupportedFormat);
    }
    SUBCASE("ascii ppm rejected") {
        testutil::write_file(dir.file("p3.ppm"), "P3\n1 1\n255\n0 0 0\n");
        CHECK_THROWS_AS(load_image(dir.file("p3.ppm")), UnsupportedFormat);
    }
    SUBCASE("truncated ppm payload") {
        testutil::write_file(dir.file("short.ppm"), "P6\n2 2\n255\nxxx");
        CHECK_THROWS_AS(load_image(dir.file("short.ppm")), DecodeError);
    }
}

TEST_CASE("load_mask thresholds luma") {
    TempDir dir("raster");

    SUBCASE("all white") {
        write_png(testutil::uniform_image(3, 3, 255, 255, 255), dir.file("w.png"));
        const MaskLoadResult res = load_mask(dir.file("w.png"));
        CHECK(res.mask.true_count() == 9);
        CHECK_FALSE(res.empty_mask);
    }
    SUBCASE("all black flags empty") {
        write_png(testutil::uniform_image(3, 3, 0, 0, 0), dir.file("b.png"));
        const MaskLoadResult res = load_mask(dir.file("b.png"));
        CHECK(res.mask.true_count() == 0);
        CHECK(res.empty_mask);
    }
    SUBCASE("checkerboard alternates") {
        RgbImage img(4, 4);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                const std::uint8_t v = (x + y) % 2 == 0 ? 255 : 0;
                img.set(x, y, v, v, v);
            }
        write_png(img, dir.file("c.png"));
        const MaskLoadResult res = load_mask(dir.file("c.png"));
        CHECK(res.mask.width == img.width);
        CHECK(res.mask.height == img.height);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) CHECK(res.mask.at(x, y) == ((x + y) % 2 == 0));
    }
    SUBCASE("custom threshold") {
        write_png(testutil::uniform_image(2, 2, 100, 100, 100), dir.file("g.png"));
        CHECK(load_mask(dir.file("g.png"), 100).mask.true_count() == 4);
        CHECK(load_mask(dir.file("g.png"), 101).mask.true_count() == 0);
    }
}

}  // TEST_SUITE
