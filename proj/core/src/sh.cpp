// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/sh.hpp>

#include <mfr/errors.hpp>
#include <mfr/quadrature.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mfr {

namespace {

// N_lm = sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!), m >= 0. Computed as a running
// product; fine in double for the orders used here (L <= 32).
double sh_normalization(int l, int m) {
    double ratio = 1.0;
    for (int k = l - m + 1; k <= l + m; ++k) ratio *= double(k);
    return std::sqrt((2.0 * l + 1.0) / (4.0 * M_PI) / ratio);
}

}  // namespace

void sh_eval_basis(const Vec3& d, int order, double* out) {
    const double x = d.x(), y = d.y(), z = d.z();

    // Associated Legendre values without the Condon-Shortley phase and with
    // the sin^m(theta) factor deferred: P~_mm = (2m-1)!!. The azimuthal
    // factors sin^m(theta)*cos(m phi) and sin^m(theta)*sin(m phi) are
    // recovered from the recurrence on (x + i y)^m.
    //
    // m = 0 column first.
    double pm2 = 0.0, pm1 = 1.0;
    out[sh_index(0, 0)] = sh_normalization(0, 0);
    for (int l = 1; l <= order; ++l) {
        double p = ((2.0 * l - 1.0) * z * pm1 - (l - 1.0) * pm2) / double(l);
        pm2 = pm1;
        pm1 = p;
        out[sh_index(l, 0)] = sh_normalization(l, 0) * p;
    }

    const double sqrt2 = std::sqrt(2.0);
    double pmm = 1.0;   // P~_mm for current m
    double cm = 1.0, sm = 0.0;  // cos(m phi) sin^m, sin(m phi) sin^m via (x+iy)^m
    for (int m = 1; m <= order; ++m) {
        pmm *= (2.0 * m - 1.0);
        double c = x * cm - y * sm;
        double s = x * sm + y * cm;
        cm = c;
        sm = s;

        double plm2 = pmm;                      // l = m
        double plm1 = (2.0 * m + 1.0) * z * pmm;  // l = m+1
        {
            double nrm = sqrt2 * sh_normalization(m, m);
            out[sh_index(m, m)] = nrm * plm2 * cm;
            out[sh_index(m, -m)] = nrm * plm2 * sm;
        }
        if (m + 1 <= order) {
            double nrm = sqrt2 * sh_normalization(m + 1, m);
            out[sh_index(m + 1, m)] = nrm * plm1 * cm;
            out[sh_index(m + 1, -m)] = nrm * plm1 * sm;
        }
        for (int l = m + 2; l <= order; ++l) {
            double p = ((2.0 * l - 1.0) * z * plm1 - (l + m - 1.0) * plm2) / double(l - m);
            plm2 = plm1;
            plm1 = p;
            double nrm = sqrt2 * sh_normalization(l, m);
            out[sh_index(l, m)] = nrm * p * cm;
            out[sh_index(l, -m)] = nrm * p * sm;
        }
    }
}

Eigen::VectorXd sh_eval_basis(const Vec3& d, int order) {
    Eigen::VectorXd out(sh_coeff_count(order));
    sh_eval_basis(d, order, out.data());
    return out;
}

Vec3 EnvMap::direction(int row, int col) const {
    const double theta = (row + 0.5) * M_PI / height();
    const double phi = (col + 0.5) * 2.0 * M_PI / width();
    const double st = std::sin(theta);
    return Vec3(st * std::cos(phi), st * std::sin(phi), std::cos(theta));
}

double EnvMap::pixel_solid_angle(int row) const {
    const double theta = (row + 0.5) * M_PI / height();
    return std::sin(theta) * (M_PI / height()) * (2.0 * M_PI / width());
}

void EnvMap::validate() const {
    if (radiance.channels != 3) throw std::invalid_argument("EnvMap: expected 3 channels");
    if (radiance.width != 2 * radiance.height || radiance.height < 1)
        throw std::invalid_argument("EnvMap: expected equirectangular W = 2H");
    for (float v : radiance.data)
        if (!(v >= 0.0f)) throw std::invalid_argument("EnvMap: radiance must be non-negative");
}

ShVector project_envmap(const EnvMap& env, int order) {
    env.validate();
    const int nc = sh_coeff_count(order);
    ShVector sh = ShVector::zeros(order);
    Eigen::VectorXd basis(nc);
    for (int r = 0; r < env.height(); ++r) {
        const double dw = env.pixel_solid_angle(r);
        for (int c = 0; c < env.width(); ++c) {
            sh_eval_basis(env.direction(r, c), order, basis.data());
            const Rgb e = env.radiance.rgb_at(r, c);
            for (int ch = 0; ch < 3; ++ch)
                sh.coeffs.row(ch) += (e[ch] * dw) * basis.transpose();
        }
    }
    return sh;
}

namespace {

// Zonal projection 2*pi*Integral_{-1}^{1} k(x) P_l(x) dx premultiplied by the
// convolution factor sqrt(4pi/(2l+1)) folds, after simplification, into
// 2*pi*Integral k P_l dx; see lambert_zonal / phong_zonal call sites.
constexpr int kZonalQuadratureNodes = 256;

}  // namespace

Eigen::VectorXd lambert_zonal(int order) {
    if (order < 0) throw std::invalid_argument("lambert_zonal: negative order");
    // Clamped cosine is x on [0,1] and 0 below; integrate on [0,1] where the
    // integrand is polynomial, so 256-node Gauss-Legendre is exact.
    GaussLegendre q = GaussLegendre::on(0.0, 1.0, kZonalQuadratureNodes);
    Eigen::VectorXd a(order + 1);
    for (int l = 0; l <= order; ++l)
        a[l] = 2.0 * M_PI * q.integrate([l](double x) { return x * legendre_p(l, x); });
    return a;
}

Eigen::VectorXd phong_zonal(double p, int order) {
    if (!(p > 0.0)) throw std::domain_error("phong_zonal: exponent must be positive");
    if (order < 0) throw std::invalid_argument("phong_zonal: negative order");
    const double f = normalization_factor(p);
    GaussLegendre q = GaussLegendre::on(-1.0, 1.0, kZonalQuadratureNodes);
    Eigen::VectorXd b(order + 1);
    for (int l = 0; l <= order; ++l) {
        b[l] = 2.0 * M_PI * f *
               q.integrate([l, p](double x) {
                   return std::pow(0.5 * (1.0 + x), 0.5 * p) * legendre_p(l, x);
               });
    }
    return b;
}

ZonalTable ZonalTable::build(const BrdfConfig& cfg, int order) {
    cfg.validate();
    ZonalTable zt;
    zt.order = order;
    zt.lambert = lambert_zonal(order);
    zt.phong.resize(cfg.lobe_count(), order + 1);
    for (int i = 0; i < cfg.lobe_count(); ++i)
        zt.phong.row(i) = phong_zonal(cfg.exponents[i], order).transpose();
    return zt;
}

Rgb shade_env(const ReflectanceTexel& t, const BrdfConfig& cfg, const ShVector& light,
              const ZonalTable& zt, const Vec3& n, const Vec3& v) {
    if (light.order != zt.order)
        throw std::invalid_argument("shade_env: light and zonal table orders differ");
    if (n.dot(v) <= 0.0) throw std::domain_error("shade_env: back-facing view direction");

    const int order = zt.order;
    const int nc = sh_coeff_count(order);
    Eigen::VectorXd yn(nc), yr(nc);
    sh_eval_basis(n, order, yn.data());
    sh_eval_basis(reflect_vector(n, v), order, yr.data());

    Rgb out = Rgb::Zero();
    for (int ch = 0; ch < 3; ++ch) {
        double sd = 0.0, ss = 0.0;
        for (int l = 0; l <= order; ++l) {
            double band_n = 0.0, band_r = 0.0;
            for (int m = -l; m <= l; ++m) {
                const int idx = sh_index(l, m);
                band_n += light.coeffs(ch, idx) * yn[idx];
                band_r += light.coeffs(ch, idx) * yr[idx];
            }
            sd += zt.lambert[l] * band_n;
            double bw = 0.0;
            for (int i = 0; i < cfg.lobe_count(); ++i) bw += t.weights[i] * zt.phong(i, l);
            ss += bw * band_r;
        }
        out[ch] = t.diffuse[ch] / M_PI * sd + ss;
    }
    return out;
}

void ShVector::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("sh: cannot write " + path.string());
    out << "MFSH 1\n" << order << " 3\n";
    out.precision(17);
    for (int ch = 0; ch < 3; ++ch) {
        for (int i = 0; i < coeff_count(); ++i) out << coeffs(ch, i) << (i + 1 == coeff_count() ? "\n" : " ");
    }
    if (!out) throw format_error("sh: write failed " + path.string());
}

ShVector ShVector::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("sh: cannot open " + path.string());
    std::string magic;
    int version = 0, order = 0, channels = 0;
    in >> magic >> version >> order >> channels;
    if (!in || magic != "MFSH" || version != 1)
        throw format_error("sh: bad header in " + path.string());
    if (order < 0 || channels != 3)
        throw format_error("sh: unsupported layout in " + path.string());
    ShVector sh = ShVector::zeros(order);
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < sh.coeff_count(); ++i) {
            double v;
            if (!(in >> v)) throw format_error("sh: truncated data in " + path.string());
            sh.coeffs(ch, i) = v;
        }
    return sh;
}

}  // namespace mfr
