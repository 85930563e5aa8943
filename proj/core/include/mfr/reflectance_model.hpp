// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/brdf.hpp>
#include <mfr/reflectance_maps.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace mfr {

/// Linear morphable model over reflectance parameters: maps(beta) = mean +
/// [diffuse_bases; specular_bases] * beta. Diffuse bases are orthonormal
/// (unit-norm columns from PCA); specular bases are transferred from the same
/// training-sample combinations and are generally not orthogonal. Sigmas are
/// the per-basis standard deviations, stored separately from the unit-norm
/// bases.
///
/// Vector layout: diffuse block d[3*t+ch] for texel t = y*W+x, then weight
/// block w[k*t+i]. All arrays are quantized to f32 so that container round
/// trips are bitwise.
struct MorphableReflectanceModel {
    int width = 0;
    int height = 0;
    BrdfConfig cfg;
    Eigen::VectorXd mean;            // (3+k)*V
    Eigen::MatrixXd diffuse_bases;   // 3V x N
    Eigen::MatrixXd specular_bases;  // kV x N
    Eigen::VectorXd sigmas;          // N

    int texel_count() const { return width * height; }
    int basis_count() const { return int(sigmas.size()); }

    Eigen::VectorXd mean_diffuse() const { return mean.head(3 * texel_count()); }
    Eigen::VectorXd mean_weights() const { return mean.tail(cfg.lobe_count() * texel_count()); }

    /// Throws invariant_error when stored invariants fail (orthonormality of
    /// diffuse bases, nonincreasing sigmas, consistent shapes).
    void check_invariants(double tolerance = 1e-6) const;
};

/// Flattening helpers shared by the model and the fitter.
Eigen::VectorXd diffuse_vector(const ReflectanceMaps& maps);
Eigen::VectorXd weights_vector(const ReflectanceMaps& maps);
ReflectanceMaps maps_from_vectors(int width, int height, int lobes,
                                  const Eigen::VectorXd& diffuse, const Eigen::VectorXd& weights);

/// PCA on the diffuse blocks of the samples; the same training-sample
/// combinations transfer each basis to the specular block. Texels valid in
/// every sample enter the PCA; other rows carry zero basis entries and the
/// sample average as mean.
MorphableReflectanceModel build_model(const std::vector<ReflectanceMaps>& samples, int n_bases);

/// mean + bases*beta, stored unclamped; clamp_negative() exists for render
/// paths that need physical values.
ReflectanceMaps reconstruct(const MorphableReflectanceModel& model, const Eigen::VectorXd& beta);

/// Least-squares inverse on the diffuse block: beta = D^T (d - d_mean).
Eigen::VectorXd project_coeffs(const MorphableReflectanceModel& model, const ReflectanceMaps& maps);

/// beta_j ~ Normal(0, (scale*sigma_j)^2) with a seeded generator.
ReflectanceMaps sample_model(const MorphableReflectanceModel& model, uint64_t seed, double scale);

/// Negative parameters clamped to zero (render-time use only).
ReflectanceMaps clamp_negative(const ReflectanceMaps& maps);

/// Binary container "MFRM" v1 with CRC32 trailer.
void save_model(const MorphableReflectanceModel& model, const std::filesystem::path& path);
MorphableReflectanceModel load_model(const std::filesystem::path& path);

}  // namespace mfr
