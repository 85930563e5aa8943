// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/lighting_model.hpp>
#include <mfr/olat.hpp>
#include <mfr/reflectance_model.hpp>
#include <mfr/sh.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <memory>
#include <vector>

namespace mfr {

/// Per-pixel geometry stand-in for a rasterizer: normal and view direction
/// maps plus a UV lookup into the reflectance-map domain.
struct GeometryBuffers {
    int width = 0;
    int height = 0;
    ImageF normals;    // 3 channels, unit on covered pixels
    ImageF view_dirs;  // 3 channels, unit on covered pixels
    ImageF uv;         // 3 channels, (u, v, 0) in [0,1)
    Mask coverage;

    void validate() const;

    void save_dir(const std::filesystem::path& dir) const;
    static GeometryBuffers load_dir(const std::filesystem::path& dir);
};

/// Buffers over the convex proxy surface with a constant view direction and
/// the identity UV mapping; coverage excludes back-facing pixels.
GeometryBuffers proxy_geometry(int resolution, ProxyGeometry kind, const Vec3& view_dir);

struct FitTarget {
    ImageF image;  // 3 channels, linear
    Mask skin;
    GeometryBuffers geometry;

    void validate() const;

    /// Directory layout: target.json + image.pfm + skin.png + geometry files.
    void save_dir(const std::filesystem::path& dir) const;
    static FitTarget load_dir(const std::filesystem::path& dir);
};

struct FitResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd gamma;
    Rgb z = Rgb::Ones();
    double loss_l1 = 0.0;
    double loss_coef = 0.0;
    double loss_light = 0.0;
    double loss_total = 0.0;
    int iterations = 0;
};

void save_fit_result(const std::filesystem::path& path, const FitResult& result);
FitResult load_fit_result(const std::filesystem::path& path);

struct FinetuneConfig {
    double w_l1 = 2.0;
    double w_per = 0.1;  // slot for a perceptual term; no feature network ships
    double w_coef = 1e-3;
    double w_upd = 10.0;
    double w_light = 10.0;
    int inner_iterations = 400;  // coefficient steps per image and epoch
    int epochs = 2;
    int model_steps = 40;        // model-parameter steps per epoch
    double model_lr = 1e-5;
    double coef_lr = 1e-4;
    uint64_t seed = 0;
    int threads = 0;

    void validate() const;
};

/// Per-pixel frequency-space shading of the reconstructed reflectance over
/// geometry buffers; uncovered pixels are 0. Affine in beta and linear in the
/// lighting coefficients (no clamping; render CLI paths clamp reconstructed
/// maps separately).
ImageF render_image(const MorphableReflectanceModel& model, const Eigen::VectorXd& beta,
                    const ShVector& light, const ZonalTable& zonal, const GeometryBuffers& geo);
ImageF render_image(const MorphableReflectanceModel& model, const Eigen::VectorXd& beta,
                    const LightingPcaModel& light_model, const Eigen::VectorXd& gamma,
                    const Rgb& z, const ZonalTable& zonal, const GeometryBuffers& geo);

/// Directional-light render (the point-light path of the relight command).
ImageF render_image_directional(const MorphableReflectanceModel& model,
                                const Eigen::VectorXd& beta, const Vec3& light_dir,
                                const Rgb& irradiance, const GeometryBuffers& geo);

/// Mean over skin pixels and channels of |rendered - target|. An empty skin
/// mask yields 0 (callers may warn).
double loss_l1(const ImageF& rendered, const ImageF& target, const Mask& skin);

/// sum (beta_i/sigma_beta_i)^2 + sum (gamma_i/sigma_gamma_i)^2.
double loss_coef(const Eigen::VectorXd& beta, const Eigen::VectorXd& sigma_beta,
                 const Eigen::VectorXd& gamma, const Eigen::VectorXd& sigma_gamma);

/// Squared distance of the SH lighting from its channel mean (monochromatic
/// lighting prior).
double loss_light(const ShVector& sh);

/// L1 drift of mean and bases from the reference model.
double loss_upd(const MorphableReflectanceModel& model, const MorphableReflectanceModel& model0);

/// Per-image coefficient optimization (beta, gamma, log z) with analytic
/// gradients. Throws numerical_error when the loss becomes non-finite.
FitResult fit_image(const FitTarget& target, const MorphableReflectanceModel& model,
                    const LightingPcaModel& light_model, const FinetuneConfig& cfg);

/// Update-by-reconstruction loop: alternates warm-started per-target
/// coefficient fits with proximal Adam steps on (mean, bases) under the L1
/// drift penalty; diffuse bases are re-orthonormalized after every epoch and
/// the specular block follows the same right factor. sigma_beta stays frozen
/// at the initial model's values.
MorphableReflectanceModel finetune_model(const std::vector<FitTarget>& targets,
                                         const MorphableReflectanceModel& model0,
                                         const LightingPcaModel& light_model,
                                         const FinetuneConfig& cfg);

/// Analytic-gradient plumbing shared by fit_image, finetune_model, and the
/// finite-difference tests.
class FitProblem {
public:
    FitProblem(const FitTarget& target, const MorphableReflectanceModel& model,
               const LightingPcaModel& light_model, const FinetuneConfig& cfg);
    ~FitProblem();
    FitProblem(FitProblem&&) noexcept;
    FitProblem& operator=(FitProblem&&) noexcept;

    /// Parameter packing: [beta_whitened, gamma_whitened, log z].
    int dim() const;
    Eigen::VectorXd initial_params() const;

    struct Terms {
        double l1 = 0.0;
        double coef = 0.0;
        double light = 0.0;
        double total = 0.0;
    };

    /// Total fit loss; fills the coefficient gradient when grad != nullptr.
    Terms evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* grad) const;

    /// Gradient of w_l1 * L_l1 with respect to the model parameters at fixed
    /// coefficients (mean uses the [diffuse; weights] layout).
    void model_gradients(const Eigen::VectorXd& params, Eigen::VectorXd& g_mean,
                         Eigen::MatrixXd& g_diffuse_bases, Eigen::MatrixXd& g_specular_bases) const;

    /// Rebinds the model pointer after an in-place model update.
    void set_model(const MorphableReflectanceModel& model);

    FitResult unpack(const Eigen::VectorXd& params, int iterations) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mfr
