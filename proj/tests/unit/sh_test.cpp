// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/errors.hpp>
#include <mfr/lighting_model.hpp>
#include <mfr/quadrature.hpp>
#include <mfr/sh.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace mfr;

namespace {

// Explicit real SH without Condon-Shortley phase, bands 0..2.
double sh_closed_form(int l, int m, const Vec3& d) {
    const double x = d.x(), y = d.y(), z = d.z();
    if (l == 0) return 0.5 / std::sqrt(M_PI);
    if (l == 1) {
        const double c = std::sqrt(3.0 / (4.0 * M_PI));
        if (m == -1) return c * y;
        if (m == 0) return c * z;
        return c * x;
    }
    const double c1 = 0.5 * std::sqrt(15.0 / M_PI);
    const double c2 = 0.25 * std::sqrt(5.0 / M_PI);
    const double c3 = 0.25 * std::sqrt(15.0 / M_PI);
    switch (m) {
        case -2: return c1 * x * y;
        case -1: return c1 * y * z;
        case 0: return c2 * (3.0 * z * z - 1.0);
        case 1: return c1 * x * z;
        default: return c3 * (x * x - y * y);
    }
}

// Clamped-cosine convolution coefficients in closed form (zonal analysis of
// max(0, cos)): A_0 = pi, A_1 = 2pi/3, odd l >= 3 vanish, even l alternate.
double lambert_closed_form(int l) {
    if (l == 0) return M_PI;
    if (l == 1) return 2.0 * M_PI / 3.0;
    if (l % 2 == 1) return 0.0;
    const int h = l / 2;
    double fact = 1.0;  // l! / (2^l (l/2)!^2)
    for (int i = 1; i <= l; ++i) fact *= i;
    double half_fact = 1.0;
    for (int i = 1; i <= h; ++i) half_fact *= i;
    fact /= std::pow(2.0, l) * half_fact * half_fact;
    const double sign = (h % 2 == 0) ? -1.0 : 1.0;
    return 2.0 * M_PI * sign / double((l + 2) * (l - 1)) * fact;
}

EnvMap test_env(uint64_t seed, int height = 64) { return synth_envmap(height, seed); }

// Gentler lobes than the production generator; the diffuse-exactness bound
// assumes environments without near-delta content.
EnvMap smooth_env(uint64_t seed, int height = 64) {
    Pcg32 rng(seed, 0xabc);
    EnvMap env;
    env.radiance = ImageF::zeros(2 * height, height, 3);
    struct Lobe {
        Vec3 axis;
        double kappa;
        Rgb color;
    };
    std::vector<Lobe> lobes;
    for (int i = 0; i < 3; ++i) {
        Lobe lobe;
        lobe.axis = test::uniform_sphere(rng);
        lobe.kappa = rng.uniform(2.0, 10.0);
        lobe.color = Rgb(rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5));
        lobes.push_back(lobe);
    }
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < 2 * height; ++c) {
            const Vec3 d = env.direction(r, c);
            Rgb value = Rgb::Constant(0.3);
            for (const Lobe& lobe : lobes)
                value += lobe.color * std::exp(lobe.kappa * (d.dot(lobe.axis) - 1.0));
            env.radiance.set3(r, c, value);
        }
    return env;
}

// Direct full-sphere convolution of the reparameterized specular kernel
// f(p) cos^p(theta/2) against the pixel-sum measure of the environment.
Rgb specular_kernel_oracle(const EnvMap& env, const ReflectanceTexel& t, const BrdfConfig& cfg,
                           const Vec3& r) {
    Rgb out = Rgb::Zero();
    for (int row = 0; row < env.height(); ++row) {
        const double dw = env.pixel_solid_angle(row);
        for (int col = 0; col < env.width(); ++col) {
            const Vec3 d = env.direction(row, col);
            const double half_cos = std::sqrt(std::max(0.0, 0.5 * (1.0 + d.dot(r))));
            double kernel = 0.0;
            for (int i = 0; i < cfg.lobe_count(); ++i)
                kernel += t.weights[i] * normalization_factor(cfg.exponents[i]) *
                          std::pow(half_cos, cfg.exponents[i]);
            out += env.radiance.rgb_at(row, col).cast<double>() * (kernel * dw);
        }
    }
    return out;
}

// Hemispherical quadrature of the diffuse shading integral over the same
// pixel measure.
Rgb diffuse_oracle(const EnvMap& env, const Rgb& albedo, const Vec3& n) {
    Rgb out = Rgb::Zero();
    for (int row = 0; row < env.height(); ++row) {
        const double dw = env.pixel_solid_angle(row);
        for (int col = 0; col < env.width(); ++col) {
            const double cosine = std::max(0.0, env.direction(row, col).dot(n));
            if (cosine > 0.0)
                out += env.radiance.rgb_at(row, col).cast<double>() * (cosine * dw);
        }
    }
    return out * albedo / M_PI;
}

}  // namespace

TEST_CASE("basis values: constant band and closed forms up to band 2") {
    Pcg32 rng(5);
    for (int i = 0; i < 50; ++i) {
        const Vec3 d = test::uniform_sphere(rng);
        Eigen::VectorXd y = sh_eval_basis(d, 4);
        CHECK(y[0] == doctest::Approx(0.28209479177).epsilon(1e-10));
        for (int l = 0; l <= 2; ++l)
            for (int m = -l; m <= l; ++m)
                CHECK(y[sh_index(l, m)] ==
                      doctest::Approx(sh_closed_form(l, m, d)).epsilon(1e-10).scale(1.0));
    }
    // North pole: band-1 values collapse onto Y_10.
    Eigen::VectorXd y = sh_eval_basis(Vec3::UnitZ(), 2);
    CHECK(y[sh_index(1, -1)] == doctest::Approx(0.0).scale(1.0));
    CHECK(y[sh_index(1, 1)] == doctest::Approx(0.0).scale(1.0));
    CHECK(y[sh_index(1, 0)] == doctest::Approx(0.4886025119).epsilon(1e-9));
}

TEST_CASE("basis orthonormality: Monte Carlo and product quadrature") {
    const int order = 8;
    const int nc = sh_coeff_count(order);

    SUBCASE("Monte Carlo pair estimates land within 3e-3 of delta") {
        // Representative pairs across bands, diagonal and off-diagonal; one
        // shared stream of uniform directions.
        const std::vector<std::pair<int, int>> pairs = {
            {sh_index(0, 0), sh_index(0, 0)},   {sh_index(1, -1), sh_index(1, -1)},
            {sh_index(1, 0), sh_index(1, 0)},   {sh_index(2, 2), sh_index(2, 2)},
            {sh_index(3, -2), sh_index(3, -2)}, {sh_index(4, 0), sh_index(4, 0)},
            {sh_index(5, 4), sh_index(5, 4)},   {sh_index(6, -6), sh_index(6, -6)},
            {sh_index(7, 1), sh_index(7, 1)},   {sh_index(8, 0), sh_index(8, 0)},
            {sh_index(8, 8), sh_index(8, 8)},   {sh_index(8, -8), sh_index(8, -8)},
            {sh_index(0, 0), sh_index(1, 0)},   {sh_index(0, 0), sh_index(2, 0)},
            {sh_index(1, 1), sh_index(1, -1)},  {sh_index(1, 0), sh_index(3, 0)},
            {sh_index(2, 1), sh_index(4, 1)},   {sh_index(2, -2), sh_index(6, -2)},
            {sh_index(3, 3), sh_index(5, 3)},   {sh_index(4, 2), sh_index(8, 2)},
            {sh_index(5, 0), sh_index(7, 0)},   {sh_index(6, 5), sh_index(8, 5)},
            {sh_index(7, -7), sh_index(8, -7)}, {sh_index(8, 3), sh_index(8, -3)},
        };
        Pcg32 rng(123);
        const int total = 4'000'000;
        std::vector<double> acc(pairs.size(), 0.0);
        Eigen::VectorXd basis(nc);
        for (int i = 0; i < total; ++i) {
            sh_eval_basis(test::uniform_sphere(rng), order, basis.data());
            for (size_t p = 0; p < pairs.size(); ++p)
                acc[p] += basis[pairs[p].first] * basis[pairs[p].second];
        }
        for (size_t p = 0; p < pairs.size(); ++p) {
            const double estimate = acc[p] * 4.0 * M_PI / total;
            const double expected = pairs[p].first == pairs[p].second ? 1.0 : 0.0;
            CHECK(std::abs(estimate - expected) < 3e-3);
        }
    }

    SUBCASE("Gauss-Legendre x uniform azimuth, near machine precision") {
        GaussLegendre gl = GaussLegendre::on(-1.0, 1.0, 64);
        const int n_phi = 128;
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(nc, nc);
        Eigen::VectorXd basis(nc);
        for (int iq = 0; iq < gl.nodes.size(); ++iq) {
            const double ct = gl.nodes[iq];
            const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
            for (int ip = 0; ip < n_phi; ++ip) {
                const double phi = 2.0 * M_PI * (ip + 0.5) / n_phi;
                sh_eval_basis(Vec3(st * std::cos(phi), st * std::sin(phi), ct), order,
                              basis.data());
                gram.noalias() +=
                    (gl.weights[iq] * 2.0 * M_PI / n_phi) * basis * basis.transpose();
            }
        }
        gram.diagonal().array() -= 1.0;
        CHECK(gram.cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("envmap projection") {
    SUBCASE("constant environment hits only the DC term") {
        EnvMap env;
        env.radiance = ImageF::constant(256, 128, 3, 1.0f);
        ShVector sh = project_envmap(env, 4);
        for (int ch = 0; ch < 3; ++ch) {
            CHECK(sh.coeffs(ch, 0) == doctest::Approx(2.0 * std::sqrt(M_PI)).epsilon(1e-3));
            for (int i = 1; i < sh.coeff_count(); ++i)
                CHECK(std::abs(sh.coeffs(ch, i)) < 1e-3);
        }
    }

    SUBCASE("all-zero environment projects to zero") {
        EnvMap env;
        env.radiance = ImageF::zeros(64, 32, 3);
        ShVector sh = project_envmap(env, 8);
        CHECK(sh.coeffs.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("clamped-cosine environment is zonal, matches 1-D quadrature") {
        EnvMap env;
        env.radiance = ImageF::zeros(256, 128, 3);
        for (int r = 0; r < 128; ++r)
            for (int c = 0; c < 256; ++c) {
                const float v = float(std::max(0.0, env.direction(r, c).z()));
                env.radiance.at(r, c, 0) = env.radiance.at(r, c, 1) = env.radiance.at(r, c, 2) = v;
            }
        ShVector sh = project_envmap(env, 6);
        GaussLegendre gl = GaussLegendre::on(0.0, 1.0, 128);
        for (int l = 0; l <= 6; ++l) {
            const double expected = 2.0 * M_PI * std::sqrt((2.0 * l + 1.0) / (4.0 * M_PI)) *
                                    gl.integrate([l](double x) { return x * legendre_p(l, x); });
            CHECK(sh.coeffs(0, sh_index(l, 0)) ==
                  doctest::Approx(expected).epsilon(2e-3).scale(1.0));
            for (int m = -l; m <= l; ++m)
                if (m != 0) CHECK(std::abs(sh.coeffs(0, sh_index(l, m))) < 1e-3);
        }
    }

    SUBCASE("shape validation") {
        EnvMap bad;
        bad.radiance = ImageF::zeros(64, 64, 3);
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("lambert zonal coefficients match the closed form") {
    Eigen::VectorXd a = lambert_zonal(8);
    for (int l = 0; l <= 8; ++l)
        CHECK(a[l] == doctest::Approx(lambert_closed_form(l)).epsilon(1e-10).scale(1.0));
    CHECK(a[0] == doctest::Approx(M_PI).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(2.0 * M_PI / 3.0).epsilon(1e-12));
    CHECK(std::abs(a[3]) < 1e-9);
    CHECK(std::abs(a[5]) < 1e-9);
    CHECK(std::abs(a[7]) < 1e-9);
}

TEST_CASE("phong zonal coefficients") {
    SUBCASE("DC term closed form 2/(2 - 2^-p/2)") {
        for (double p : {1.0, 8.0, 64.0}) {
            const double expected = 2.0 / (2.0 - std::pow(2.0, -0.5 * p));
            CHECK(phong_zonal(p, 0)[0] == doctest::Approx(expected).epsilon(1e-6));
        }
        CHECK(phong_zonal(64.0, 0)[0] == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(phong_zonal(1.0, 0)[0] == doctest::Approx(1.54692).epsilon(1e-5));
    }

    SUBCASE("sharper lobes keep more high-frequency energy") {
        Eigen::VectorXd b8 = phong_zonal(8.0, 8);
        Eigen::VectorXd b64 = phong_zonal(64.0, 8);
        CHECK(b64[8] / b64[0] > b8[8] / b8[0]);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(phong_zonal(0.0, 4), std::domain_error);
        CHECK_THROWS_AS(phong_zonal(-1.0, 4), std::domain_error);
    }
}

TEST_CASE("zonal table") {
    const BrdfConfig cfg;
    ZonalTable zt = ZonalTable::build(cfg, 8);
    CHECK(zt.lambert.size() == 9);
    CHECK(zt.phong.rows() == 3);
    CHECK(zt.phong.cols() == 9);
    CHECK(zt.lambert.allFinite());
    CHECK(zt.phong.allFinite());
    CHECK(std::abs(zt.lambert[3]) < 1e-9);
    CHECK(std::abs(zt.lambert[5]) < 1e-9);
}

TEST_CASE("shade_env spot values") {
    const BrdfConfig cfg;
    ZonalTable zt = ZonalTable::build(cfg, 8);

    EnvMap env;
    env.radiance = ImageF::constant(256, 128, 3, 1.0f);
    ShVector light = project_envmap(env, 8);

    SUBCASE("uniform unit light reproduces the diffuse albedo") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb::Ones();
        const Rgb s = shade_env(t, cfg, light, zt, Vec3::UnitZ(), Vec3::UnitZ());
        for (int c = 0; c < 3; ++c) CHECK(s[c] == doctest::Approx(1.0).epsilon(1e-3));
    }

    SUBCASE("uniform unit light on the sharpest lobe gives B_0(64)") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.weights[2] = 1.0;
        const Rgb s = shade_env(t, cfg, light, zt, Vec3::UnitZ(), Vec3::UnitZ());
        for (int c = 0; c < 3; ++c) CHECK(s[c] == doctest::Approx(1.0).epsilon(1e-3));
    }

    SUBCASE("zero light shades to zero") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb::Ones();
        t.weights.setOnes();
        const Rgb s = shade_env(t, cfg, ShVector::zeros(8), zt, Vec3::UnitZ(), Vec3::UnitZ());
        for (int c = 0; c < 3; ++c) CHECK(s[c] == 0.0);
    }

    SUBCASE("order mismatch and back-facing view are errors") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        CHECK_THROWS_AS(shade_env(t, cfg, ShVector::zeros(4), zt, Vec3::UnitZ(), Vec3::UnitZ()),
                        std::invalid_argument);
        CHECK_THROWS_AS(shade_env(t, cfg, light, zt, Vec3::UnitZ(), -Vec3::UnitZ()),
                        std::domain_error);
    }
}

TEST_CASE("specular SH shading converges to the kernel convolution") {
    const BrdfConfig cfg;
    Pcg32 rng(31);
    const std::vector<int> orders = {2, 4, 8, 16};
    std::vector<double> mean_err(orders.size(), 0.0);
    const int cases = 5;
    for (int c = 0; c < cases; ++c) {
        EnvMap env = test_env(100 + uint64_t(c));
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.weights = Eigen::Vector3d(0.3 + rng.next_double(), 0.3 + rng.next_double(),
                                    0.3 + rng.next_double());
        const Vec3 n = test::uniform_cap(rng, 0.5);
        Vec3 v = test::uniform_cap(rng, 0.5);
        if (n.dot(v) <= 0.1) v = n;
        const Vec3 r = reflect_vector(n, v);
        const Rgb oracle = specular_kernel_oracle(env, t, cfg, r);

        for (size_t oi = 0; oi < orders.size(); ++oi) {
            ZonalTable zt = ZonalTable::build(cfg, orders[oi]);
            ShVector light = project_envmap(env, orders[oi]);
            ReflectanceTexel spec = t;
            spec.diffuse.setZero();
            const Rgb s = shade_env(spec, cfg, light, zt, n, v);
            mean_err[oi] += (s - oracle).abs().sum() / oracle.abs().sum() / cases;
        }
    }
    // Truncation error shrinks monotonically on the order grid.
    for (size_t i = 1; i < orders.size(); ++i) CHECK(mean_err[i] <= mean_err[i - 1] + 1e-12);
    CHECK(mean_err.back() < 0.01);
}

TEST_CASE("diffuse SH shading matches hemispherical quadrature within 0.5%") {
    const BrdfConfig cfg;
    Pcg32 rng(37);
    for (int c = 0; c < 5; ++c) {
        EnvMap env = smooth_env(200 + uint64_t(c));
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb(0.4 + rng.next_double() * 0.5, 0.4 + rng.next_double() * 0.5,
                        0.4 + rng.next_double() * 0.5);
        const Vec3 n = test::uniform_cap(rng, 0.4);
        const Rgb oracle = diffuse_oracle(env, t.diffuse, n);

        for (int order : {4, 8}) {
            ZonalTable zt = ZonalTable::build(cfg, order);
            ShVector light = project_envmap(env, order);
            const Rgb s = shade_env(t, cfg, light, zt, n, n);
            CHECK((s - oracle).abs().sum() / oracle.abs().sum() < 0.005);
        }
    }
}

TEST_CASE("azimuthal rotation equivariance") {
    const BrdfConfig cfg;
    const int order = 8;
    ZonalTable zt = ZonalTable::build(cfg, order);
    EnvMap env = test_env(77, 64);
    const int w = env.width();
    Pcg32 rng(41);

    for (int k : {w / 4, w / 2, 13}) {
        const double alpha = 2.0 * M_PI * k / w;
        ShVector rotated = project_envmap(rotate_equirect(env, k), order);
        ShVector original = project_envmap(env, order);

        Eigen::Matrix3d rot;  // rotation by alpha about +Z
        rot << std::cos(alpha), -std::sin(alpha), 0, std::sin(alpha), std::cos(alpha), 0, 0, 0, 1;

        for (int i = 0; i < 10; ++i) {
            ReflectanceTexel t = ReflectanceTexel::zeros(3);
            t.diffuse = Rgb(0.5, 0.6, 0.7);
            t.weights = Eigen::Vector3d(0.2, 0.3, 0.4);
            const Vec3 n = test::uniform_cap(rng, 0.4);
            Vec3 v = test::uniform_cap(rng, 0.4);
            if (n.dot(v) <= 0.1) v = n;
            const Rgb a = shade_env(t, cfg, rotated, zt, n, v);
            const Rgb b = shade_env(t, cfg, original, zt, Vec3(rot.transpose() * n),
                                    Vec3(rot.transpose() * v));
            for (int ch = 0; ch < 3; ++ch)
                CHECK(a[ch] == doctest::Approx(b[ch]).epsilon(1e-9).scale(1.0));
        }
    }
}

TEST_CASE("shade_env is linear in light and reflectance parameters") {
    const BrdfConfig cfg;
    const int order = 6;
    ZonalTable zt = ZonalTable::build(cfg, order);
    ShVector l1 = project_envmap(test_env(301), order);
    ShVector l2 = project_envmap(test_env(302), order);
    ShVector sum = ShVector::zeros(order);
    sum.coeffs = l1.coeffs + 2.0 * l2.coeffs;

    ReflectanceTexel t = ReflectanceTexel::zeros(3);
    t.diffuse = Rgb(0.4, 0.5, 0.6);
    t.weights = Eigen::Vector3d(0.1, 0.2, 0.3);
    const Vec3 n = Vec3(0.2, -0.1, 1.0).normalized();
    const Vec3 v = Vec3(-0.1, 0.2, 1.0).normalized();

    const Rgb sa = shade_env(t, cfg, l1, zt, n, v);
    const Rgb sb = shade_env(t, cfg, l2, zt, n, v);
    const Rgb sc = shade_env(t, cfg, sum, zt, n, v);
    for (int ch = 0; ch < 3; ++ch)
        CHECK(sc[ch] == doctest::Approx(sa[ch] + 2.0 * sb[ch]).epsilon(1e-12).scale(1.0));

    ReflectanceTexel t2 = t;
    t2.diffuse *= 3.0;
    t2.weights *= 3.0;
    const Rgb s3 = shade_env(t2, cfg, l1, zt, n, v);
    for (int ch = 0; ch < 3; ++ch)
        CHECK(s3[ch] == doctest::Approx(3.0 * sa[ch]).epsilon(1e-12).scale(1.0));
}

TEST_CASE("ShVector text round trip and format errors") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mfr_sh_test";
    fs::create_directories(dir);

    ShVector sh = project_envmap(test_env(55), 4);
    sh.save(dir / "light.sh");
    ShVector back = ShVector::load(dir / "light.sh");
    CHECK(back.order == sh.order);
    CHECK((back.coeffs - sh.coeffs).cwiseAbs().maxCoeff() == 0.0);

    {
        std::ofstream bad(dir / "bad.sh");
        bad << "NOPE 1\n4 3\n";
    }
    CHECK_THROWS_AS(ShVector::load(dir / "bad.sh"), format_error);

    {
        std::ofstream trunc(dir / "trunc.sh");
        trunc << "MFSH 1\n4 3\n1.0 2.0\n";
    }
    CHECK_THROWS_AS(ShVector::load(dir / "trunc.sh"), format_error);

    fs::remove_all(dir);
}
