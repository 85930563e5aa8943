// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/brdf.hpp>
#include <mfr/fitter.hpp>
#include <mfr/lighting_model.hpp>
#include <mfr/nnls.hpp>
#include <mfr/olat.hpp>
#include <mfr/rng.hpp>
#include <mfr/sh.hpp>

#include <benchmark/benchmark.h>

using namespace mfr;

namespace {

Vec3 sphere_dir(Pcg32& rng) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return Vec3(s * std::cos(phi), s * std::sin(phi), z);
}

void BM_ShEvalBasis(benchmark::State& state) {
    const int order = int(state.range(0));
    Pcg32 rng(1);
    std::vector<double> out(size_t(sh_coeff_count(order)));
    Vec3 d = sphere_dir(rng);
    for (auto _ : state) {
        sh_eval_basis(d, order, out.data());
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_ShEvalBasis)->Arg(2)->Arg(8)->Arg(16);

void BM_ProjectEnvmap(benchmark::State& state) {
    EnvMap env = synth_envmap(int(state.range(0)), 3);
    for (auto _ : state) {
        ShVector sh = project_envmap(env, 8);
        benchmark::DoNotOptimize(sh.coeffs.data());
    }
}
BENCHMARK(BM_ProjectEnvmap)->Arg(32)->Arg(64);

void BM_ShadeEnv(benchmark::State& state) {
    const BrdfConfig cfg;
    ZonalTable zt = ZonalTable::build(cfg, 8);
    ShVector light = project_envmap(synth_envmap(32, 5), 8);
    ReflectanceTexel t = ReflectanceTexel::zeros(3);
    t.diffuse = Rgb(0.5, 0.4, 0.3);
    t.weights = Eigen::Vector3d(0.2, 0.2, 0.2);
    const Vec3 n = Vec3(0.1, 0.2, 1.0).normalized();
    const Vec3 v = Vec3(-0.2, 0.1, 1.0).normalized();
    for (auto _ : state) {
        Rgb s = shade_env(t, cfg, light, zt, n, v);
        benchmark::DoNotOptimize(s.data());
    }
}
BENCHMARK(BM_ShadeEnv);

void BM_ShadeDirectional(benchmark::State& state) {
    const BrdfConfig cfg;
    ReflectanceTexel t = ReflectanceTexel::zeros(3);
    t.diffuse = Rgb(0.5, 0.4, 0.3);
    t.weights = Eigen::Vector3d(0.2, 0.2, 0.2);
    const Vec3 n = Vec3::UnitZ();
    const Vec3 l = Vec3(0.3, 0.1, 1.0).normalized();
    const Vec3 v = Vec3(-0.1, 0.2, 1.0).normalized();
    for (auto _ : state) {
        Rgb s = shade_directional(t, cfg, Rgb::Ones(), l, v, n);
        benchmark::DoNotOptimize(s.data());
    }
}
BENCHMARK(BM_ShadeDirectional);

struct EstimateFixture {
    BrdfConfig cfg;
    std::vector<Observation> obs;

    EstimateFixture() {
        Pcg32 rng(9);
        ReflectanceTexel t = ReflectanceTexel::zeros(3);
        t.diffuse = Rgb(0.5, 0.4, 0.3);
        t.weights = Eigen::Vector3d(0.15, 0.2, 0.25);
        for (int i = 0; i < 99; ++i) {
            Observation o;
            o.normal = Vec3::UnitZ();
            const double zl = rng.uniform(0.3, 1.0), pl = rng.uniform(0.0, 2.0 * M_PI);
            o.light = Vec3(std::sqrt(1 - zl * zl) * std::cos(pl),
                           std::sqrt(1 - zl * zl) * std::sin(pl), zl);
            const double zv = rng.uniform(0.3, 1.0), pv = rng.uniform(0.0, 2.0 * M_PI);
            o.view = Vec3(std::sqrt(1 - zv * zv) * std::cos(pv),
                          std::sqrt(1 - zv * zv) * std::sin(pv), zv);
            o.rgb = shade_directional(t, cfg, o.irradiance, o.light, o.view, o.normal);
            obs.push_back(o);
        }
    }
};

void BM_EstimateTexelAdam(benchmark::State& state) {
    EstimateFixture fx;
    EstimationSettings settings;
    settings.iterations = int(state.range(0));
    for (auto _ : state) {
        TexelEstimate est = estimate_texel(fx.obs, fx.cfg, settings);
        benchmark::DoNotOptimize(est.objective);
    }
}
BENCHMARK(BM_EstimateTexelAdam)->Arg(500)->Arg(2000);

void BM_EstimateTexelNnls(benchmark::State& state) {
    EstimateFixture fx;
    EstimationSettings settings;
    for (auto _ : state) {
        TexelEstimate est = nnls_texel(fx.obs, fx.cfg, settings);
        benchmark::DoNotOptimize(est.objective);
    }
}
BENCHMARK(BM_EstimateTexelNnls);

void BM_RenderImage(benchmark::State& state) {
    const int res = int(state.range(0));
    std::vector<ReflectanceMaps> samples;
    for (int i = 0; i < 4; ++i)
        samples.push_back(synth_reflectance_maps(res, res, 3, 40 + uint64_t(i), Mask::ones(res, res)));
    MorphableReflectanceModel model = build_model(samples, 3);
    model.cfg.exponents = {1.0, 8.0, 64.0};
    ShVector light = project_envmap(synth_envmap(32, 7), 8);
    ZonalTable zonal = ZonalTable::build(model.cfg, 8);
    GeometryBuffers geo = proxy_geometry(res, ProxyGeometry::hemisphere, Vec3::UnitZ());
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(3);
    for (auto _ : state) {
        ImageF img = render_image(model, beta, light, zonal, geo);
        benchmark::DoNotOptimize(img.data.data());
    }
}
BENCHMARK(BM_RenderImage)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
