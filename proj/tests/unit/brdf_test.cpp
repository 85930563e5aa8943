// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/brdf.hpp>
#include <mfr/quadrature.hpp>

#include <doctest.h>

#include "test_util.hpp"

using namespace mfr;

TEST_CASE("normalization factor matches the closed form") {
    // Independent evaluation of (p+2) / (4*pi*(2 - 2^(-p/2))).
    auto reference = [](double p) {
        return (p + 2.0) / (4.0 * M_PI * (2.0 - std::pow(2.0, -0.5 * p)));
    };
    for (double p : {1.0, 8.0, 64.0, 3.7, 200.0})
        CHECK(normalization_factor(p) == doctest::Approx(reference(p)).epsilon(1e-12));

    CHECK(normalization_factor(1.0) == doctest::Approx(0.18467).epsilon(1e-3));
    CHECK(normalization_factor(8.0) == doctest::Approx(0.41072).epsilon(1e-3));
    CHECK(normalization_factor(64.0) == doctest::Approx(2.62606).epsilon(1e-3));

    CHECK_THROWS_AS(normalization_factor(0.0), std::domain_error);
    CHECK_THROWS_AS(normalization_factor(-3.0), std::domain_error);
}

TEST_CASE("each lobe integrates to 1 over the hemisphere at normal incidence") {
    // >= 1e5-node spherical product quadrature of the shading integrand at
    // v = n: Integral f(p) <h,n>^p dw must be 1 for every exponent.
    const BrdfConfig cfg;
    const Vec3 n = Vec3::UnitZ();
    GaussLegendre gl = GaussLegendre::on(0.0, 1.0, 320);  // cos(theta) over the hemisphere
    const int n_phi = 512;

    for (int lobe = 0; lobe < cfg.lobe_count(); ++lobe) {
        ReflectanceTexel t = ReflectanceTexel::zeros(cfg.lobe_count());
        t.weights[lobe] = 1.0;
        double integral = 0.0;
        for (int iq = 0; iq < gl.nodes.size(); ++iq) {
            const double ct = gl.nodes[iq];
            const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
            double ring = 0.0;
            for (int ip = 0; ip < n_phi; ++ip) {
                const double phi = 2.0 * M_PI * (ip + 0.5) / n_phi;
                const Vec3 l(st * std::cos(phi), st * std::sin(phi), ct);
                ring += shade_directional(t, cfg, Rgb::Ones(), l, n, n)[0];
            }
            integral += gl.weights[iq] * ring * (2.0 * M_PI / n_phi);
        }
        CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("half vector") {
    Vec3 h = half_vector(Vec3::UnitZ(), Vec3::UnitZ());
    CHECK(h.isApprox(Vec3::UnitZ(), 1e-12));

    h = half_vector(Vec3::UnitX(), Vec3::UnitY());
    CHECK(h.isApprox(Vec3(M_SQRT2 / 2, M_SQRT2 / 2, 0), 1e-12));

    CHECK_THROWS_AS(half_vector(Vec3::UnitZ(), -Vec3::UnitZ()), std::domain_error);
}

TEST_CASE("reflect vector") {
    CHECK(reflect_vector(Vec3::UnitZ(), Vec3::UnitZ()).isApprox(Vec3::UnitZ(), 1e-12));

    const Vec3 v(M_SQRT2 / 2, 0, M_SQRT2 / 2);
    CHECK(reflect_vector(Vec3::UnitZ(), v).isApprox(Vec3(-M_SQRT2 / 2, 0, M_SQRT2 / 2), 1e-12));

    CHECK_THROWS_AS(reflect_vector(Vec3::UnitZ(), -Vec3::UnitZ()), std::domain_error);
}

TEST_CASE("eval_brdf spot values") {
    const BrdfConfig cfg;
    Pcg32 rng(3);

    SUBCASE("pure Lambertian with c = pi is white") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb::Constant(M_PI);
        for (int i = 0; i < 10; ++i) {
            const Vec3 n = Vec3::UnitZ();
            const Vec3 l = test::uniform_cap(rng, 0.3), v = test::uniform_cap(rng, 0.3);
            const Rgb value = eval_brdf(t, cfg, l, v, n);
            for (int c = 0; c < 3; ++c) CHECK(value[c] == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    SUBCASE("unit weights at retro-normal sum the normalization factors") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.weights.setOnes();
        const Rgb value = eval_brdf(t, cfg, Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitZ());
        const double expected =
            normalization_factor(1) + normalization_factor(8) + normalization_factor(64);
        CHECK(expected == doctest::Approx(3.22145).epsilon(1e-4));
        for (int c = 0; c < 3; ++c) CHECK(value[c] == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("grazing incidence is an error") {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        CHECK_THROWS_AS(eval_brdf(t, cfg, Vec3::UnitX(), Vec3::UnitZ(), Vec3::UnitZ()),
                        std::domain_error);
    }
}

TEST_CASE("shade_directional spot values") {
    const BrdfConfig cfg;

    ReflectanceTexel lambert = ReflectanceTexel::zeros(3);
    lambert.diffuse = Rgb::Constant(M_PI);
    Rgb s = shade_directional(lambert, cfg, Rgb::Ones(), Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitZ());
    for (int c = 0; c < 3; ++c) CHECK(s[c] == doctest::Approx(1.0).epsilon(1e-12));

    ReflectanceTexel spec8 = ReflectanceTexel::zeros(3);
    spec8.weights[1] = 1.0;
    s = shade_directional(spec8, cfg, Rgb::Ones(), Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitZ());
    for (int c = 0; c < 3; ++c)
        CHECK(s[c] == doctest::Approx(normalization_factor(8)).epsilon(1e-12));

    // Below-horizon light with below-horizon half vector: both clamps engage.
    ReflectanceTexel t = ReflectanceTexel::zeros(3);
    t.diffuse = Rgb::Ones();
    t.weights.setOnes();
    s = shade_directional(t, cfg, Rgb::Ones(), Vec3(0, 0.6, -0.8), Vec3(0, -0.6, -0.8),
                          Vec3::UnitZ());
    for (int c = 0; c < 3; ++c) CHECK(s[c] == 0.0);
}

TEST_CASE("shading equals E * brdf * cos wherever the brdf is defined") {
    const BrdfConfig cfg;
    Pcg32 rng(11);
    for (int i = 0; i < 200; ++i) {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb(rng.next_double(), rng.next_double(), rng.next_double());
        t.weights =
            Eigen::Vector3d(rng.next_double(), rng.next_double(), rng.next_double());
        const Vec3 n = test::uniform_cap(rng, 0.5);
        const Vec3 l = test::uniform_cap(rng, 0.2), v = test::uniform_cap(rng, 0.2);
        if (l.dot(n) <= kGrazingEps || v.dot(n) <= 0.0) continue;
        const Rgb e(0.5 + rng.next_double(), 0.5 + rng.next_double(), 0.5 + rng.next_double());
        const Rgb via_brdf = e * eval_brdf(t, cfg, l, v, n) * clamped_dot(l, n);
        const Rgb direct = shade_directional(t, cfg, e, l, v, n);
        for (int c = 0; c < 3; ++c)
            CHECK(direct[c] == doctest::Approx(via_brdf[c]).epsilon(1e-9));
    }
}

TEST_CASE("specular term is linear in the weights") {
    const BrdfConfig cfg;
    Pcg32 rng(17);
    for (int i = 0; i < 50; ++i) {
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb(rng.next_double(), rng.next_double(), rng.next_double());
        t.weights =
            Eigen::Vector3d(rng.next_double(), rng.next_double(), rng.next_double());
        ReflectanceTexel doubled = t;
        doubled.weights *= 2.0;
        ReflectanceTexel diffuse_only = t;
        diffuse_only.weights.setZero();

        const Vec3 n = Vec3::UnitZ();
        const Vec3 l = test::uniform_cap(rng, 0.2), v = test::uniform_cap(rng, 0.2);
        const Rgb base = shade_directional(t, cfg, Rgb::Ones(), l, v, n);
        const Rgb twice = shade_directional(doubled, cfg, Rgb::Ones(), l, v, n);
        const Rgb lamb = shade_directional(diffuse_only, cfg, Rgb::Ones(), l, v, n);
        for (int c = 0; c < 3; ++c)
            CHECK(twice[c] - lamb[c] == doctest::Approx(2.0 * (base[c] - lamb[c])).epsilon(1e-12));
    }
}

TEST_CASE("display/linear maps") {
    CHECK(display_to_linear(0.0) == 0.0);
    CHECK(display_to_linear(1.0) == 1.0);
    CHECK(linear_to_display(0.0) == 0.0);
    CHECK(linear_to_display(1.0) == 1.0);
    CHECK(display_to_linear(0.5) == doctest::Approx(std::pow(0.5, 1.2)).epsilon(1e-12));
    CHECK(display_to_linear(0.5) == doctest::Approx(0.43528).epsilon(1e-4));
    CHECK_THROWS_AS(display_to_linear(-0.1), std::domain_error);
    CHECK_THROWS_AS(linear_to_display(-0.1), std::domain_error);

    // Mutually inverse and monotone on a sample grid.
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        const double x = 3.0 * i / 100.0;
        const double y = display_to_linear(x);
        CHECK(y > prev);
        prev = y;
        CHECK(linear_to_display(y) == doctest::Approx(x).epsilon(1e-6));
        CHECK(display_to_linear(linear_to_display(x)) == doctest::Approx(x).epsilon(1e-6));
    }
}

TEST_CASE("olat differencing") {
    ImageF flash = ImageF::constant(4, 3, 3, 0.8f);
    ImageF room = ImageF::constant(4, 3, 3, 0.5f);

    ImageF diff = olat_difference(flash, room);
    const double expected = std::pow(0.8, 1.2) - std::pow(0.5, 1.2);
    CHECK(expected == doctest::Approx(0.3298).epsilon(1e-3));
    for (float v : diff.data) CHECK(double(v) == doctest::Approx(expected).epsilon(1e-6));

    CHECK(olat_difference(flash, flash).data == ImageF::zeros(4, 3, 3).data);

    ImageF one = ImageF::constant(2, 2, 1, 1.0f), zero = ImageF::zeros(2, 2, 1);
    for (float v : olat_difference(one, zero).data) CHECK(v == 1.0f);
    // Negative differences clamp at zero.
    for (float v : olat_difference(zero, one).data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(olat_difference(flash, one), std::invalid_argument);
}

TEST_CASE("BrdfConfig validation") {
    BrdfConfig ok;
    CHECK_NOTHROW(ok.validate());

    BrdfConfig empty;
    empty.exponents.clear();
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

    BrdfConfig unsorted;
    unsorted.exponents = {8.0, 1.0};
    CHECK_THROWS_AS(unsorted.validate(), std::invalid_argument);

    BrdfConfig nonpositive;
    nonpositive.exponents = {0.0, 1.0};
    CHECK_THROWS_AS(nonpositive.validate(), std::invalid_argument);
}
