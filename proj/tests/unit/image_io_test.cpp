// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/errors.hpp>
#include <mfr/lighting_model.hpp>
#include <mfr/pfm.hpp>
#include <mfr/png_io.hpp>
#include <mfr/rng.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mfr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("mfr_io_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("pfm round trip preserves bits") {
    TempDir tmp;
    Pcg32 rng(9);

    for (int channels : {1, 3}) {
        ImageF img(7, 5, channels);
        for (float& v : img.data) v = float(rng.uniform(-2.0, 100.0));
        const fs::path file = tmp.path / ("img" + std::to_string(channels) + ".pfm");
        write_pfm(file, img);
        ImageF back = read_pfm(file);
        CHECK(back.width == img.width);
        CHECK(back.height == img.height);
        CHECK(back.channels == img.channels);
        CHECK(back.data == img.data);  // bitwise
    }
}

TEST_CASE("pfm format errors") {
    TempDir tmp;

    {
        std::ofstream bad(tmp.path / "bad.pfm", std::ios::binary);
        bad << "P6\n2 2\n255\n";
    }
    CHECK_THROWS_AS(read_pfm(tmp.path / "bad.pfm"), format_error);

    {
        std::ofstream trunc(tmp.path / "trunc.pfm", std::ios::binary);
        trunc << "PF\n8 8\n-1.0\n";
        const float vals[4] = {1, 2, 3, 4};
        trunc.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    }
    CHECK_THROWS_AS(read_pfm(tmp.path / "trunc.pfm"), format_error);

    CHECK_THROWS_AS(read_pfm(tmp.path / "missing.pfm"), format_error);
}

TEST_CASE("png mask and preview round trips") {
    TempDir tmp;
    Pcg32 rng(21);

    Mask mask(9, 6);
    for (auto& v : mask.data) v = rng.next_below(2) ? 1 : 0;
    write_mask_png(tmp.path / "mask.png", mask);
    Mask mask_back = read_mask_png(tmp.path / "mask.png");
    CHECK(mask_back == mask);

    ImageF rgb(5, 4, 3);
    for (float& v : rgb.data) v = float(rng.next_below(256)) / 255.0f;
    write_rgb8_png(tmp.path / "rgb.png", rgb);
    ImageF rgb_back = read_rgb8_png(tmp.path / "rgb.png");
    REQUIRE(rgb_back.same_shape(rgb));
    for (size_t i = 0; i < rgb.data.size(); ++i)
        CHECK(rgb_back.data[i] == doctest::Approx(rgb.data[i]).epsilon(1.0 / 255.0));

    {
        std::ofstream junk(tmp.path / "junk.png", std::ios::binary);
        junk << "this is not a png";
    }
    CHECK_THROWS_AS(read_mask_png(tmp.path / "junk.png"), format_error);
}

TEST_CASE("equirectangular rotation") {
    EnvMap env = synth_envmap(32, 99);
    const int w = env.width();

    SUBCASE("zero shift is identity") {
        CHECK(rotate_equirect(env, 0).radiance == env.radiance);
    }

    SUBCASE("half-turn twice is identity") {
        EnvMap twice = rotate_equirect(rotate_equirect(env, w / 2), w / 2);
        CHECK(twice.radiance == env.radiance);
    }

    SUBCASE("total radiance is invariant under any shift") {
        auto total = [](const EnvMap& e) {
            double sum = 0.0;
            for (int r = 0; r < e.height(); ++r) {
                const double dw = e.pixel_solid_angle(r);
                for (int c = 0; c < e.width(); ++c)
                    sum += dw * e.radiance.rgb_at(r, c).sum();
            }
            return sum;
        };
        const double base = total(env);
        for (int k : {1, 7, w / 3, w - 1})
            CHECK(total(rotate_equirect(env, k)) == doctest::Approx(base).epsilon(1e-9));
    }

    SUBCASE("out-of-range shift throws") {
        CHECK_THROWS_AS(rotate_equirect(env, -1), std::invalid_argument);
        CHECK_THROWS_AS(rotate_equirect(env, w), std::invalid_argument);
    }
}

TEST_CASE("flip_horizontal") {
    ImageF img(4, 2, 1);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i);
    ImageF flipped = flip_horizontal(img);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) CHECK(flipped.at(y, x) == img.at(y, 3 - x));
    CHECK(flip_horizontal(flipped) == img);
}
