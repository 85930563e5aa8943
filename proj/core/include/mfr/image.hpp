// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace mfr {

using Vec3 = Eigen::Vector3d;
using Rgb = Eigen::Array3d;

/// Row-major interleaved float image, 1 or 3 channels. Images are stored in
/// single precision; all math on top of them runs in double.
struct ImageF {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int w, int h, int c) : width(w), height(h), channels(c), data(size_t(w) * h * c, 0.0f) {}

    static ImageF zeros(int w, int h, int c) { return ImageF(w, h, c); }
    static ImageF constant(int w, int h, int c, float value) {
        ImageF img(w, h, c);
        std::fill(img.data.begin(), img.data.end(), value);
        return img;
    }

    bool empty() const { return data.empty(); }
    size_t pixel_count() const { return size_t(width) * height; }

    float& at(int y, int x, int c = 0) { return data[(size_t(y) * width + x) * channels + c]; }
    float at(int y, int x, int c = 0) const { return data[(size_t(y) * width + x) * channels + c]; }

    Vec3 vec3_at(int y, int x) const {
        const float* p = &data[(size_t(y) * width + x) * 3];
        return Vec3(p[0], p[1], p[2]);
    }
    Rgb rgb_at(int y, int x) const {
        const float* p = &data[(size_t(y) * width + x) * 3];
        return Rgb(p[0], p[1], p[2]);
    }
    void set3(int y, int x, const Eigen::Vector3d& v) {
        float* p = &data[(size_t(y) * width + x) * 3];
        p[0] = float(v[0]);
        p[1] = float(v[1]);
        p[2] = float(v[2]);
    }
    void set3(int y, int x, const Rgb& v) {
        float* p = &data[(size_t(y) * width + x) * 3];
        p[0] = float(v[0]);
        p[1] = float(v[1]);
        p[2] = float(v[2]);
    }

    bool same_shape(const ImageF& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool operator==(const ImageF& o) const {
        return same_shape(o) && data == o.data;
    }
};

/// Binary per-pixel mask: 0 or 1.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int w, int h, uint8_t fill = 0) : width(w), height(h), data(size_t(w) * h, fill) {}

    static Mask ones(int w, int h) { return Mask(w, h, 1); }
    static Mask zeros(int w, int h) { return Mask(w, h, 0); }

    uint8_t& at(int y, int x) { return data[size_t(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[size_t(y) * width + x]; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }
    bool same_shape(const Mask& o) const { return width == o.width && height == o.height; }
    bool operator==(const Mask& o) const { return same_shape(o) && data == o.data; }
};

/// Horizontal mirror (x -> width-1-x). Pixel values are copied verbatim.
ImageF flip_horizontal(const ImageF& img);
Mask flip_horizontal(const Mask& mask);

}  // namespace mfr
