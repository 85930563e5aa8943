// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/image.hpp>

#include <filesystem>

namespace mfr {

/// 8-bit grayscale mask IO; nonzero pixels read back as 1.
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

/// 8-bit RGB preview IO. Writing clamps linear values to [0,1] after the
/// caller's own display mapping; reading returns values in [0,1].
ImageF read_rgb8_png(const std::filesystem::path& path);
void write_rgb8_png(const std::filesystem::path& path, const ImageF& img);

}  // namespace mfr
