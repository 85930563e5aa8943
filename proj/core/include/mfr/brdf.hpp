// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <mfr/image.hpp>

#include <Eigen/Core>

#include <vector>

namespace mfr {

/// Reflectance is a Lambertian term plus a linear combination of Blinn-Phong
/// lobes with fixed exponents. The exponents are hyper-parameters shared by
/// every texel; per-texel parameters are an RGB diffuse color and one weight
/// per lobe.
struct BrdfConfig {
    std::vector<double> exponents{1.0, 8.0, 64.0};

    int lobe_count() const { return int(exponents.size()); }

    /// Per-lobe energy normalization factors f_i.
    std::vector<double> normalization() const;

    /// Throws std::invalid_argument unless exponents are positive and
    /// strictly increasing with at least one lobe.
    void validate() const;

    bool operator==(const BrdfConfig& o) const { return exponents == o.exponents; }
};

struct ReflectanceTexel {
    Rgb diffuse = Rgb::Zero();
    Eigen::VectorXd weights;  // one per lobe

    static ReflectanceTexel zeros(int lobes) {
        ReflectanceTexel t;
        t.weights = Eigen::VectorXd::Zero(lobes);
        return t;
    }
};

/// Grazing threshold for the n.l division in eval_brdf. Shading paths never
/// divide, so only the raw BRDF evaluation takes an epsilon.
inline constexpr double kGrazingEps = 1e-4;

inline double clamped_dot(const Vec3& a, const Vec3& b) { return std::max(0.0, a.dot(b)); }

bool is_unit(const Vec3& v, double tol = 1e-6);

/// x^p, switching to exponentiation by squaring for small integral p (the
/// default exponents {1, 8, 64} all qualify).
double lobe_pow(double x, double p);

/// Normalization factor f = (p+2) / (4*pi*(2 - 2^(-p/2))); the lobe
/// f * <h,n>^p integrates to 1 over the hemisphere at normal incidence.
/// Throws std::domain_error for p <= 0.
double normalization_factor(double p);

/// h = (v+l)/|v+l|. Throws std::domain_error when l and v are antiparallel.
Vec3 half_vector(const Vec3& l, const Vec3& v);

/// r = (2(n.v)n - v) normalized. Throws std::domain_error when n.v <= 0.
Vec3 reflect_vector(const Vec3& n, const Vec3& v);

/// Pointwise BRDF value c/pi + sum_i w_i f_i <h,n>^p_i / <l,n>.
/// Throws std::domain_error when <l,n> <= kGrazingEps; rendering paths use
/// shade_directional, where the division cancels.
Rgb eval_brdf(const ReflectanceTexel& t, const BrdfConfig& cfg, const Vec3& l, const Vec3& v,
              const Vec3& n);

/// Shading under a directional light of irradiance E:
///   E * (c/pi * <l,n> + sum_i w_i f_i <h,n>^p_i).
Rgb shade_directional(const ReflectanceTexel& t, const BrdfConfig& cfg, const Rgb& irradiance,
                      const Vec3& l, const Vec3& v, const Vec3& n);

/// Display <-> linear mapping with exponent 1.2 (to linear) and its inverse.
/// Throws std::domain_error on negative input.
double display_to_linear(double value);
double linear_to_display(double value);
ImageF display_to_linear(const ImageF& img);
ImageF linear_to_display(const ImageF& img);

/// OLAT differencing: flash^1.2 - roomlit^1.2 in linear space, clamped at 0
/// from below. Throws std::invalid_argument on shape mismatch.
ImageF olat_difference(const ImageF& flash, const ImageF& roomlit);

}  // namespace mfr
