// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/brdf.hpp>
#include <mfr/image.hpp>
#include <mfr/reflectance_maps.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mfr {

/// Calibrated capture setup in UV space: per-view and per-light direction
/// maps, the surface normal map, and a validity mask. Directions are unit on
/// valid texels and point away from the surface.
struct CaptureRig {
    int width = 0;
    int height = 0;
    ImageF normals;               // 3 channels
    Mask valid;
    std::vector<ImageF> views;    // one 3-channel map per viewpoint
    std::vector<ImageF> lights;   // one 3-channel map per flash
    Rgb irradiance = Rgb::Ones();

    int n_views() const { return int(views.size()); }
    int n_lights() const { return int(lights.size()); }
    void validate() const;
};

enum class ProxyGeometry { hemisphere, plane };

ProxyGeometry proxy_geometry_from_string(const std::string& name);
std::string to_string(ProxyGeometry kind);

/// Deterministic synthetic rig over a convex proxy surface. Views and lights
/// are drawn from frontal cones, stratified over azimuth.
CaptureRig make_rig(int n_views, int n_lights, int resolution, ProxyGeometry geometry,
                    uint64_t seed);

/// Convex-proxy shadow mask: lit where <l, n> > 1e-3.
Mask shadow_mask_convex(const CaptureRig& rig, int light_index);

/// Smooth synthetic ground-truth parameter maps for round-trip experiments:
/// low-frequency positive diffuse colors and lobe weights whose relative
/// scales drift across UV (spatially varying shininess).
ReflectanceMaps synth_reflectance_maps(int width, int height, int lobes, uint64_t seed,
                                       const Mask& valid);

/// One OLAT observation: linear image plus binary shadow mask.
struct OlatFrame {
    int view = 0;
    int light = 0;
    ImageF image;  // 3 channels, linear
    Mask shadow;
};

/// Forward render of one (view, light) pair from reflectance maps.
OlatFrame render_olat(const ReflectanceMaps& maps, const BrdfConfig& cfg, const CaptureRig& rig,
                      int view, int light);

/// One per-texel equation: observed color under (l, v) with normal n.
struct Observation {
    Rgb rgb = Rgb::Zero();
    Vec3 light = Vec3::UnitZ();
    Vec3 view = Vec3::UnitZ();
    Vec3 normal = Vec3::UnitZ();
    bool lit = true;            // shadow mask value
    Rgb irradiance = Rgb::Ones();
};

enum class Solver { adam, nnls };

struct EstimationSettings {
    double reg_weight = 100.0;      // w_reg on the negativity penalty
    int iterations = 2000;
    double step_size = 5e-3;        // Adam learning rate (linearly decayed)
    double flip_probability = 0.5;  // symmetric-pair flip coupling
    uint64_t seed = 0;
    int min_observations = 6;
    Solver solver = Solver::adam;
    int threads = 0;                // <= 0: hardware concurrency

    void validate() const;
};

inline constexpr double kIllConditionThreshold = 1e6;

struct TexelEstimate {
    ReflectanceTexel texel;
    bool valid = false;            // enough observations and well conditioned
    bool ill_conditioned = false;
    double condition = 0.0;
    double objective = 0.0;        // weighted-L1 + regularizer at the solution
    int observation_count = 0;
};

/// Adam minimization of the weighted-L1 reconstruction loss plus the
/// negativity penalty; the model is linear in the parameters so subgradients
/// are closed-form.
TexelEstimate estimate_texel(std::span<const Observation> obs, const BrdfConfig& cfg,
                             const EstimationSettings& settings);

/// Reference solver: exact non-negative least squares (Lawson-Hanson) on the
/// <l,n>-weighted linear system. Rank-deficient systems are solved through a
/// tiny ridge augmentation and flagged ill-conditioned.
TexelEstimate nnls_texel(std::span<const Observation> obs, const BrdfConfig& cfg,
                         const EstimationSettings& settings);

struct EstimationDiagnostics {
    ImageF condition;   // 1 channel, condition number of the weighted design
    ImageF objective;   // 1 channel, converged objective
    Mask solved;        // texels estimated directly
    Mask ill_conditioned;
};

/// Batched estimation over all valid texels. Symmetric texel pairs are
/// processed as one unit: with probability flip_probability an iteration
/// evaluates each texel against its mirror's observations. Invalid texels
/// inherit the mirrored estimate when available, else the per-map mean.
ReflectanceMaps estimate_maps(const std::vector<OlatFrame>& frames, const CaptureRig& rig,
                              const BrdfConfig& cfg, const EstimationSettings& settings,
                              EstimationDiagnostics* diagnostics = nullptr);

/// Camera extrinsics from a head pose: R_cam = R^T, t_cam = -R^T t.
/// Throws std::invalid_argument unless R is a rotation.
std::pair<Eigen::Matrix3d, Vec3> camera_from_pose(const Eigen::Matrix3d& rotation,
                                                  const Vec3& translation);

/// On-disk OLAT set: rig manifest + per-frame PFMs + shadow masks, with
/// optional ground-truth maps for synthetic sets.
struct OlatSet {
    BrdfConfig cfg;
    CaptureRig rig;
    std::vector<OlatFrame> frames;
    std::optional<ReflectanceMaps> ground_truth;
    std::string geometry = "hemisphere";
    uint64_t seed = 0;
};

void save_olat_set(const std::filesystem::path& dir, const OlatSet& set);
OlatSet load_olat_set(const std::filesystem::path& dir);

}  // namespace mfr
