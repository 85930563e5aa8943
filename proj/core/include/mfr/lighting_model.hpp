// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/sh.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace mfr {

/// PCA model of normalized SH lighting coefficients. Vectors stack channels
/// channel-major: index ch*(L+1)^2 + l(l+1)+m. Band-0 entries of every
/// normalized sample equal 1, so the centered data (and hence the bases)
/// carry zero band-0 rows and the decoded band 0 is exactly z per channel.
struct LightingPcaModel {
    int order = 8;
    Eigen::VectorXd mean;    // 3*(L+1)^2
    Eigen::MatrixXd bases;   // 3*(L+1)^2 x N_L, orthonormal columns
    Eigen::VectorXd sigmas;  // N_L

    int coeff_count() const { return sh_coeff_count(order); }
    int basis_count() const { return int(sigmas.size()); }

    void check_invariants(double tolerance = 1e-6) const;
};

/// Cyclic column shift by k (azimuthal rotation by 2*pi*k/W).
EnvMap rotate_equirect(const EnvMap& env, int k);

inline constexpr double kDarkEnvironmentEps = 1e-6;

/// Divides each channel by its own 0th-order coefficient. Throws
/// numerical_error when a channel's 0th-order coefficient is below the dark
/// threshold.
ShVector normalize_sh(const ShVector& sh);

/// Projects every environment at `rotations` evenly spaced azimuthal shifts,
/// normalizes per channel, and runs centered PCA on the stacked vectors.
LightingPcaModel build_lighting_pca(const std::vector<EnvMap>& envs, int rotations, int n_bases,
                                    int order);

/// (mean + bases*gamma) scaled per channel by z. Throws on length mismatch
/// and non-positive z.
ShVector decode_lighting(const LightingPcaModel& model, const Eigen::VectorXd& gamma,
                         const Rgb& z);

/// Flattening between ShVector and the stacked PCA coordinate layout.
Eigen::VectorXd sh_to_vector(const ShVector& sh);
ShVector vector_to_sh(const Eigen::VectorXd& v, int order);

/// Synthetic panorama generator for tests and demos: 3..10 random
/// von-Mises-Fisher-like lobes plus an ambient floor.
EnvMap synth_envmap(int height, uint64_t seed);

/// Binary container "MFLM" v1 with CRC32 trailer.
void save_lighting_model(const LightingPcaModel& model, const std::filesystem::path& path);
LightingPcaModel load_lighting_model(const std::filesystem::path& path);

}  // namespace mfr
