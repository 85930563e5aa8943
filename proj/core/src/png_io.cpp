// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/png_io.hpp>

#include <mfr/errors.hpp>

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

namespace mfr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;
};

PngImage read_png8(const std::filesystem::path& path, int want_channels) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw format_error("png: cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("png: initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("png: corrupt file " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    if (want_channels == 1)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    else if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    PngImage out;
    out.width = int(png_get_image_width(png, info));
    out.height = int(png_get_image_height(png, info));
    out.channels = want_channels;
    out.pixels.resize(size_t(out.width) * out.height * want_channels);

    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y)
        rows[y] = out.pixels.data() + size_t(y) * out.width * want_channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png8(const std::filesystem::path& path, int width, int height, int channels,
                const uint8_t* pixels) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw format_error("png: cannot write " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw format_error("png: initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw format_error("png: write failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(pixels + size_t(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Mask read_mask_png(const std::filesystem::path& path) {
    PngImage img = read_png8(path, 1);
    Mask mask(img.width, img.height);
    for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = img.pixels[i] ? 1 : 0;
    return mask;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<uint8_t> pixels(mask.data.size());
    for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask.data[i] ? 255 : 0;
    write_png8(path, mask.width, mask.height, 1, pixels.data());
}

ImageF read_rgb8_png(const std::filesystem::path& path) {
    PngImage img = read_png8(path, 3);
    ImageF out(img.width, img.height, 3);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = float(img.pixels[i]) / 255.0f;
    return out;
}

void write_rgb8_png(const std::filesystem::path& path, const ImageF& img) {
    if (img.channels != 3) throw std::invalid_argument("png: preview expects 3 channels");
    std::vector<uint8_t> pixels(img.data.size());
    for (size_t i = 0; i < pixels.size(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, img.data[i]));
        pixels[i] = uint8_t(v * 255.0f + 0.5f);
    }
    write_png8(path, img.width, img.height, 3, pixels.data());
}

}  // namespace mfr
