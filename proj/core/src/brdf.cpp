// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/brdf.hpp>

#include <cmath>
#include <stdexcept>

namespace mfr {

double lobe_pow(double x, double p) {
    double ip = 0.0;
    if (p > 0 && p <= 1024 && std::modf(p, &ip) == 0.0) {
        double result = 1.0;
        double base = x;
        auto e = uint64_t(ip);
        while (e > 0) {
            if (e & 1) result *= base;
            base *= base;
            e >>= 1;
        }
        return result;
    }
    return std::pow(x, p);
}

void BrdfConfig::validate() const {
    if (exponents.empty()) throw std::invalid_argument("BrdfConfig: needs at least one lobe");
    double prev = 0.0;
    for (double p : exponents) {
        if (!(p > 0.0)) throw std::invalid_argument("BrdfConfig: exponents must be positive");
        if (!(p > prev)) throw std::invalid_argument("BrdfConfig: exponents must be strictly increasing");
        prev = p;
    }
}

std::vector<double> BrdfConfig::normalization() const {
    std::vector<double> f(exponents.size());
    for (size_t i = 0; i < exponents.size(); ++i) f[i] = normalization_factor(exponents[i]);
    return f;
}

bool is_unit(const Vec3& v, double tol) { return std::abs(v.norm() - 1.0) <= tol; }

double normalization_factor(double p) {
    if (!(p > 0.0)) throw std::domain_error("normalization_factor: exponent must be positive");
    return (p + 2.0) / (4.0 * M_PI * (2.0 - std::exp2(-0.5 * p)));
}

Vec3 half_vector(const Vec3& l, const Vec3& v) {
    Vec3 sum = l + v;
    double norm = sum.norm();
    if (norm < 1e-9) throw std::domain_error("half_vector: l and v are antiparallel");
    return sum / norm;
}

Vec3 reflect_vector(const Vec3& n, const Vec3& v) {
    double nv = n.dot(v);
    if (nv <= 0.0) throw std::domain_error("reflect_vector: v is back-facing");
    Vec3 r = 2.0 * nv * n - v;
    return r.normalized();
}

Rgb eval_brdf(const ReflectanceTexel& t, const BrdfConfig& cfg, const Vec3& l, const Vec3& v,
              const Vec3& n) {
    double nl = clamped_dot(l, n);
    if (nl <= kGrazingEps)
        throw std::domain_error("eval_brdf: grazing incidence, use shade_directional");
    Vec3 h = half_vector(l, v);
    double hn = clamped_dot(h, n);

    double spec = 0.0;
    for (int i = 0; i < cfg.lobe_count(); ++i) {
        double p = cfg.exponents[i];
        spec += t.weights[i] * normalization_factor(p) * lobe_pow(hn, p);
    }
    return t.diffuse / M_PI + Rgb::Constant(spec / nl);
}

Rgb shade_directional(const ReflectanceTexel& t, const BrdfConfig& cfg, const Rgb& irradiance,
                      const Vec3& l, const Vec3& v, const Vec3& n) {
    double nl = clamped_dot(l, n);
    double hn = 0.0;
    Vec3 sum = l + v;
    double norm = sum.norm();
    if (norm >= 1e-9) hn = clamped_dot(Vec3(sum / norm), n);

    double spec = 0.0;
    for (int i = 0; i < cfg.lobe_count(); ++i) {
        double p = cfg.exponents[i];
        spec += t.weights[i] * normalization_factor(p) * lobe_pow(hn, p);
    }
    return irradiance * (t.diffuse / M_PI * nl + spec);
}

double display_to_linear(double value) {
    if (value < 0.0) throw std::domain_error("display_to_linear: negative input");
    return std::pow(value, 1.2);
}

double linear_to_display(double value) {
    if (value < 0.0) throw std::domain_error("linear_to_display: negative input");
    return std::pow(value, 1.0 / 1.2);
}

namespace {

ImageF map_image(const ImageF& img, double (*fn)(double)) {
    ImageF out(img.width, img.height, img.channels);
    for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = float(fn(double(img.data[i])));
    return out;
}

}  // namespace

ImageF display_to_linear(const ImageF& img) { return map_image(img, &display_to_linear); }
ImageF linear_to_display(const ImageF& img) { return map_image(img, &linear_to_display); }

ImageF olat_difference(const ImageF& flash, const ImageF& roomlit) {
    if (!flash.same_shape(roomlit))
        throw std::invalid_argument("olat_difference: image dimensions differ");
    ImageF out(flash.width, flash.height, flash.channels);
    for (size_t i = 0; i < flash.data.size(); ++i) {
        double d = display_to_linear(double(flash.data[i])) -
                   display_to_linear(double(roomlit.data[i]));
        out.data[i] = float(std::max(0.0, d));
    }
    return out;
}

}  // namespace mfr
