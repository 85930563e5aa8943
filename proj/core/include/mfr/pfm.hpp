// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/image.hpp>

#include <filesystem>

namespace mfr {

/// Portable float map. "PF" (3-channel) or "Pf" (1-channel), negative scale
/// header for little-endian data, scanlines stored bottom-to-top.
ImageF read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const ImageF& img);

}  // namespace mfr
