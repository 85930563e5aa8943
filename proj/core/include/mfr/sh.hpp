// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/brdf.hpp>
#include <mfr/image.hpp>

#include <Eigen/Core>

#include <filesystem>

namespace mfr {

/// Per-channel stack of real spherical-harmonic coefficients up to `order`.
///
/// Convention used everywhere in this library: real orthonormal basis without
/// the Condon-Shortley phase, flat index l*(l+1)+m. Order 8 gives 81
/// coefficients per channel (273 parameters including all 3 channels).
struct ShVector {
    int order = 8;
    Eigen::MatrixXd coeffs;  // 3 x (order+1)^2, rows = RGB channels

    static ShVector zeros(int order) {
        ShVector sh;
        sh.order = order;
        sh.coeffs = Eigen::MatrixXd::Zero(3, (order + 1) * (order + 1));
        return sh;
    }

    int coeff_count() const { return (order + 1) * (order + 1); }

    /// Flat text serialization: "MFSH 1", order, channels, then channel-major
    /// coefficients in index order l(l+1)+m.
    void save(const std::filesystem::path& path) const;
    static ShVector load(const std::filesystem::path& path);
};

inline int sh_index(int l, int m) { return l * (l + 1) + m; }
inline int sh_coeff_count(int order) { return (order + 1) * (order + 1); }

/// Evaluates all (order+1)^2 basis functions at unit direction d into out.
void sh_eval_basis(const Vec3& d, int order, double* out);
Eigen::VectorXd sh_eval_basis(const Vec3& d, int order);

/// Equirectangular radiance map: W = 2H, row r at polar angle
/// theta = (r+0.5)*pi/H from +Z, column c at azimuth phi = (c+0.5)*2*pi/W.
struct EnvMap {
    ImageF radiance;  // 3 channels, linear

    int width() const { return radiance.width; }
    int height() const { return radiance.height; }

    Vec3 direction(int row, int col) const;
    /// Solid angle sin(theta)*dtheta*dphi of every pixel in `row`.
    double pixel_solid_angle(int row) const;

    /// Throws std::invalid_argument unless W = 2H, 3 channels, radiance >= 0.
    void validate() const;
};

/// Riemann-sum SH projection of an environment map.
ShVector project_envmap(const EnvMap& env, int order);

/// Convolution coefficients A_l of the clamped-cosine (Lambertian) kernel,
/// including the sqrt(4pi/(2l+1)) convolution normalization.
Eigen::VectorXd lambert_zonal(int order);

/// Convolution coefficients B_l of the normalized Blinn-Phong lobe with
/// exponent p, reparameterized as the circularly symmetric kernel
/// f(p)*cos^p(theta/2) about the reflection vector.
Eigen::VectorXd phong_zonal(double p, int order);

/// Precomputed zonal coefficients for one (BrdfConfig, order) pair.
struct ZonalTable {
    int order = 0;
    Eigen::VectorXd lambert;  // L+1
    Eigen::MatrixXd phong;    // k_bp x (L+1)

    static ZonalTable build(const BrdfConfig& cfg, int order);
};

/// Frequency-space shading under SH environment lighting:
///   s_d = c/pi * sum_lm A_l K_lm Y_lm(n)
///   s_s = sum_i w_i sum_lm B^i_l K_lm Y_lm(r),  r = reflect(n, v)
/// Throws std::invalid_argument on order mismatch, std::domain_error for
/// back-facing v.
Rgb shade_env(const ReflectanceTexel& t, const BrdfConfig& cfg, const ShVector& light,
              const ZonalTable& zt, const Vec3& n, const Vec3& v);

}  // namespace mfr
