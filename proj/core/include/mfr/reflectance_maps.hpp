// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/brdf.hpp>
#include <mfr/image.hpp>

#include <filesystem>
#include <vector>

namespace mfr {

/// Per-UV-texel reflectance parameter maps: RGB diffuse color plus one scalar
/// weight map per Blinn-Phong lobe, with a validity mask for texels whose
/// parameters were estimable.
struct ReflectanceMaps {
    int width = 0;
    int height = 0;
    ImageF diffuse;               // 3 channels
    std::vector<ImageF> weights;  // lobe_count 1-channel maps
    Mask valid;

    static ReflectanceMaps zeros(int w, int h, int lobes);

    int lobe_count() const { return int(weights.size()); }

    ReflectanceTexel texel(int y, int x) const;
    void set_texel(int y, int x, const ReflectanceTexel& t);

    /// Throws std::invalid_argument if images disagree in shape.
    void validate() const;

    /// Replaces values on invalid texels with the per-map mean over valid
    /// texels, so downstream PCA sees finite values. The valid mask is kept.
    void fill_invalid_with_mean();

    /// Directory layout: maps.json + diffuse.pfm + weight_<i>.pfm + valid.png.
    void save_dir(const std::filesystem::path& dir) const;
    static ReflectanceMaps load_dir(const std::filesystem::path& dir);
};

}  // namespace mfr
