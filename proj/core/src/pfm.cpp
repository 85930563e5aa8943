// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/pfm.hpp>

#include <mfr/errors.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace mfr {

namespace {

// PFM headers are whitespace separated tokens; '#' comments are not part of
// the original format but tolerated by most readers.
std::string next_token(std::istream& in) {
    std::string tok;
    in >> tok;
    while (!tok.empty() && tok[0] == '#') {
        std::string line;
        std::getline(in, line);
        in >> tok;
    }
    return tok;
}

void swap_endianness(float* values, size_t count) {
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &values[i], 4);
        bits = __builtin_bswap32(bits);
        std::memcpy(&values[i], &bits, 4);
    }
}

constexpr bool host_is_little_endian() { return std::endian::native == std::endian::little; }

}  // namespace

ImageF read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("pfm: cannot open " + path.string());

    std::string magic = next_token(in);
    int channels = 0;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw format_error("pfm: bad magic in " + path.string());

    int width = 0, height = 0;
    double scale = 0.0;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        scale = std::stod(next_token(in));
    } catch (const std::exception&) {
        throw format_error("pfm: malformed header in " + path.string());
    }
    if (width <= 0 || height <= 0 || scale == 0.0)
        throw format_error("pfm: invalid dimensions or scale in " + path.string());
    in.get();  // single whitespace byte terminating the header

    ImageF img(width, height, channels);
    const size_t row_floats = size_t(width) * channels;
    std::vector<float> row(row_floats);
    for (int y = height - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row_floats * 4));
        if (!in) throw format_error("pfm: truncated data in " + path.string());
        const bool file_le = scale < 0.0;
        if (file_le != host_is_little_endian()) swap_endianness(row.data(), row_floats);
        std::memcpy(&img.data[size_t(y) * row_floats], row.data(), row_floats * 4);
    }

    const double mag = std::abs(scale);
    if (mag != 1.0)
        for (float& v : img.data) v = float(v * mag);
    return img;
}

void write_pfm(const std::filesystem::path& path, const ImageF& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("pfm: only 1- or 3-channel images");
    if (img.empty()) throw std::invalid_argument("pfm: empty image");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error("pfm: cannot write " + path.string());

    out << (img.channels == 3 ? "PF" : "Pf") << "\n"
        << img.width << " " << img.height << "\n"
        << "-1.0\n";

    const size_t row_floats = size_t(img.width) * img.channels;
    std::vector<float> row(row_floats);
    for (int y = img.height - 1; y >= 0; --y) {
        std::memcpy(row.data(), &img.data[size_t(y) * row_floats], row_floats * 4);
        if (!host_is_little_endian()) swap_endianness(row.data(), row_floats);
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row_floats * 4));
    }
    if (!out) throw format_error("pfm: write failed for " + path.string());
}

}  // namespace mfr
