// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0
//
// Command line front end for the morphable face reflectance pipeline:
// synthetic OLAT sets, per-texel inverse rendering, PCA model building,
// SH lighting models, rendering/relighting, per-image fits, and model
// finetuning. Every command materializes its resolved configuration into a
// run manifest (run.json) from which `mfr rerun` reproduces the outputs.

#include <mfr/brdf.hpp>
#include <mfr/errors.hpp>
#include <mfr/fitter.hpp>
#include <mfr/lighting_model.hpp>
#include <mfr/olat.hpp>
#include <mfr/pfm.hpp>
#include <mfr/png_io.hpp>
#include <mfr/reflectance_model.hpp>
#include <mfr/sh.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfr;

namespace {

constexpr const char* kToolVersion = "0.1.0";

int log_level() {
    const char* env = std::getenv("MFR_LOG");
    if (!env) return 1;
    std::string v(env);
    if (v == "silent") return 0;
    if (v == "debug") return 2;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[mfr] " << msg << "\n";
}

std::vector<double> parse_csv(const std::string& text) {
    std::vector<double> out;
    std::string token;
    std::stringstream ss(text);
    while (std::getline(ss, token, ',')) out.push_back(std::stod(token));
    return out;
}

Vec3 parse_vec3(const std::string& text) {
    auto v = parse_csv(text);
    if (v.size() != 3) throw format_error("expected 3 comma-separated values: " + text);
    return Vec3(v[0], v[1], v[2]);
}

Rgb parse_rgb(const std::string& text) {
    auto v = parse_csv(text);
    if (v.size() == 1) return Rgb::Constant(v[0]);
    if (v.size() != 3) throw format_error("expected 1 or 3 comma-separated values: " + text);
    return Rgb(v[0], v[1], v[2]);
}

struct RunContext {
    std::string command;
    json config;
    json inputs;
    json outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

void write_manifest(const RunContext& ctx, const fs::path& out_dir) {
    json manifest;
    manifest["schema"] = "mfr.run/1";
    manifest["command"] = ctx.command;
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = ctx.config;
    manifest["inputs"] = ctx.inputs;
    manifest["outputs"] = ctx.outputs;
    manifest["wall_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                              ctx.start)
            .count();
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "run.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw format_error("cannot write manifest in " + out_dir.string());
}

void emit_stats(const json& stats, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "stats.json", std::ios::trunc);
    out << stats.dump(2) << "\n";
    std::cout << stats.dump(2) << std::endl;
}

ImageF preview_from_linear(const ImageF& linear) {
    ImageF clamped = linear;
    for (float& v : clamped.data) v = std::max(0.0f, v);
    return linear_to_display(clamped);
}

// ---------------------------------------------------------------------------
// synth-olat
// ---------------------------------------------------------------------------

void run_synth_olat(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    BrdfConfig brdf;
    brdf.exponents = cfg.at("exponents").get<std::vector<double>>();
    brdf.validate();

    RunContext ctx;
    ctx.command = "synth-olat";
    ctx.config = cfg;

    OlatSet set;
    set.cfg = brdf;
    set.geometry = cfg.at("geometry").get<std::string>();
    set.seed = cfg.at("seed").get<uint64_t>();
    set.rig = make_rig(cfg.at("views").get<int>(), cfg.at("lights").get<int>(),
                       cfg.at("resolution").get<int>(),
                       proxy_geometry_from_string(set.geometry), set.seed);
    set.rig.irradiance = Rgb::Constant(cfg.at("irradiance").get<double>());

    ReflectanceMaps gt = synth_reflectance_maps(set.rig.width, set.rig.height, brdf.lobe_count(),
                                                set.seed, set.rig.valid);
    for (int i = 0; i < set.rig.n_views(); ++i)
        for (int j = 0; j < set.rig.n_lights(); ++j)
            set.frames.push_back(render_olat(gt, brdf, set.rig, i, j));
    set.ground_truth = gt;
    save_olat_set(out, set);

    json stats;
    stats["frames"] = set.frames.size();
    stats["valid_texels"] = set.rig.valid.count();
    ctx.outputs["olat_dir"] = out.string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

json maps_error_stats(const ReflectanceMaps& estimated, const ReflectanceMaps& gt) {
    std::vector<double> rel;
    for (int y = 0; y < estimated.height; ++y)
        for (int x = 0; x < estimated.width; ++x) {
            if (!estimated.valid.at(y, x) || !gt.valid.at(y, x)) continue;
            ReflectanceTexel a = estimated.texel(y, x), b = gt.texel(y, x);
            Eigen::VectorXd va(3 + a.weights.size()), vb(3 + b.weights.size());
            va << a.diffuse.matrix(), a.weights;
            vb << b.diffuse.matrix(), b.weights;
            rel.push_back((va - vb).norm() / std::max(vb.norm(), 1e-12));
        }
    json out;
    out["texels_compared"] = rel.size();
    if (!rel.empty()) {
        std::sort(rel.begin(), rel.end());
        out["median_rel_error"] = rel[rel.size() / 2];
        out["p90_rel_error"] = rel[size_t(0.9 * double(rel.size() - 1))];
        out["max_rel_error"] = rel.back();
    }
    return out;
}

void run_estimate(const json& cfg) {
    const fs::path in_dir = cfg.at("olat_dir").get<std::string>();
    const fs::path out = cfg.at("out").get<std::string>();

    RunContext ctx;
    ctx.command = "estimate";
    ctx.config = cfg;
    ctx.inputs["olat_dir"] = in_dir.string();

    OlatSet set = load_olat_set(in_dir);
    EstimationSettings settings;
    settings.reg_weight = cfg.at("wreg").get<double>();
    settings.iterations = cfg.at("iterations").get<int>();
    settings.step_size = cfg.at("step_size").get<double>();
    settings.flip_probability = cfg.at("flip").get<double>();
    settings.seed = cfg.at("seed").get<uint64_t>();
    settings.min_observations = cfg.at("min_observations").get<int>();
    settings.threads = cfg.at("threads").get<int>();
    const std::string solver = cfg.at("solver").get<std::string>();
    if (solver == "adam")
        settings.solver = Solver::adam;
    else if (solver == "nnls")
        settings.solver = Solver::nnls;
    else
        throw format_error("unknown solver: " + solver);

    EstimationDiagnostics diag;
    ReflectanceMaps maps = estimate_maps(set.frames, set.rig, set.cfg, settings, &diag);
    maps.save_dir(out);
    write_pfm(out / "condition.pfm", diag.condition);
    write_pfm(out / "objective.pfm", diag.objective);
    write_mask_png(out / "ill_conditioned.png", diag.ill_conditioned);
    write_rgb8_png(out / "diffuse_preview.png", preview_from_linear(maps.diffuse));

    json stats;
    stats["solver"] = solver;
    stats["solved_texels"] = diag.solved.count();
    stats["ill_conditioned_texels"] = diag.ill_conditioned.count();
    if (set.ground_truth) stats["vs_ground_truth"] = maps_error_stats(maps, *set.ground_truth);
    ctx.outputs["maps_dir"] = out.string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

// ---------------------------------------------------------------------------
// build-model / build-light / synth-env
// ---------------------------------------------------------------------------

void run_build_model(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "build-model";
    ctx.config = cfg;

    std::vector<ReflectanceMaps> samples;
    for (const auto& dir : cfg.at("sample_dirs").get<std::vector<std::string>>()) {
        samples.push_back(ReflectanceMaps::load_dir(dir));
        ctx.inputs["samples"].push_back(dir);
    }
    const int n = int(samples.size());
    const int requested = cfg.at("nr").get<int>();
    const int n_bases = std::min(requested, n - 1);
    MorphableReflectanceModel model = build_model(samples, n_bases);
    // The sample set fixes the lobe count; the exponents ride along in the
    // container so downstream commands can rebuild zonal tables.
    model.cfg.exponents = cfg.at("exponents").get<std::vector<double>>();
    model.cfg.validate();
    if (model.cfg.lobe_count() != samples[0].lobe_count())
        throw format_error("exponent count differs from the samples' lobe count");
    const fs::path out_dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
    fs::create_directories(out_dir);
    save_model(model, out);

    json stats;
    stats["samples"] = n;
    stats["bases"] = model.basis_count();
    stats["width"] = model.width;
    stats["height"] = model.height;
    stats["sigmas"] =
        std::vector<double>(model.sigmas.data(), model.sigmas.data() + model.sigmas.size());
    ctx.outputs["model"] = out.string();
    emit_stats(stats, out_dir);
    write_manifest(ctx, out_dir);
}

void run_build_light(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    const fs::path pano_dir = cfg.at("panorama_dir").get<std::string>();
    RunContext ctx;
    ctx.command = "build-light";
    ctx.config = cfg;
    ctx.inputs["panorama_dir"] = pano_dir.string();

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(pano_dir))
        if (entry.path().extension() == ".pfm") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw format_error("no .pfm panoramas in " + pano_dir.string());

    std::vector<EnvMap> envs;
    for (const fs::path& f : files) {
        EnvMap env;
        env.radiance = read_pfm(f);
        env.validate();
        envs.push_back(std::move(env));
    }

    const int rotations = cfg.at("rotations").get<int>();
    const int order = cfg.at("order").get<int>();
    const int requested = cfg.at("nl").get<int>();
    const int n_bases = std::min(requested, int(envs.size()) * rotations - 1);
    LightingPcaModel model = build_lighting_pca(envs, rotations, n_bases, order);
    const fs::path out_dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
    fs::create_directories(out_dir);
    save_lighting_model(model, out);

    json stats;
    stats["environments"] = envs.size();
    stats["rotations"] = rotations;
    stats["bases"] = model.basis_count();
    stats["order"] = model.order;
    ctx.outputs["model"] = out.string();
    emit_stats(stats, out_dir);
    write_manifest(ctx, out_dir);
}

void run_synth_env(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "synth-env";
    ctx.config = cfg;
    fs::create_directories(out);
    const int count = cfg.at("count").get<int>();
    const uint64_t seed = cfg.at("seed").get<uint64_t>();
    for (int i = 0; i < count; ++i) {
        EnvMap env = synth_envmap(cfg.at("height").get<int>(), seed + uint64_t(i));
        char name[32];
        std::snprintf(name, sizeof(name), "env_%03d.pfm", i);
        write_pfm(out / name, env.radiance);
    }
    json stats;
    stats["environments"] = count;
    ctx.outputs["dir"] = out.string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

// ---------------------------------------------------------------------------
// render / relight
// ---------------------------------------------------------------------------

GeometryBuffers geometry_from_config(const json& cfg) {
    if (cfg.contains("geometry_dir") && !cfg.at("geometry_dir").get<std::string>().empty())
        return GeometryBuffers::load_dir(cfg.at("geometry_dir").get<std::string>());
    const int res = cfg.at("proxy_resolution").get<int>();
    const Vec3 view = parse_vec3(cfg.at("proxy_view").get<std::string>()).normalized();
    return proxy_geometry(res, proxy_geometry_from_string(cfg.at("proxy_kind").get<std::string>()),
                          view);
}

Eigen::VectorXd beta_from_config(const json& cfg, const MorphableReflectanceModel& model) {
    if (cfg.contains("fit_file") && !cfg.at("fit_file").get<std::string>().empty()) {
        FitResult fit = load_fit_result(cfg.at("fit_file").get<std::string>());
        if (fit.beta.size() != model.basis_count())
            throw format_error("fit result coefficient count differs from model");
        return fit.beta;
    }
    if (cfg.contains("beta") && !cfg.at("beta").get<std::string>().empty()) {
        auto values = parse_csv(cfg.at("beta").get<std::string>());
        if (int(values.size()) != model.basis_count())
            throw format_error("--beta needs exactly " + std::to_string(model.basis_count()) +
                               " values");
        return Eigen::Map<const Eigen::VectorXd>(values.data(), Eigen::Index(values.size()));
    }
    return Eigen::VectorXd::Zero(model.basis_count());
}

// The reconstructed maps get clamped at zero for physical output, then frozen
// into a zero-basis model so the shared render paths can be reused with
// beta = 0.
MorphableReflectanceModel freeze_clamped(const MorphableReflectanceModel& model,
                                         const Eigen::VectorXd& beta) {
    ReflectanceMaps maps = clamp_negative(reconstruct(model, beta));
    MorphableReflectanceModel frozen = model;
    frozen.mean.head(3 * model.texel_count()) = diffuse_vector(maps);
    frozen.mean.tail(Eigen::Index(model.cfg.lobe_count()) * model.texel_count()) =
        weights_vector(maps);
    frozen.diffuse_bases.setZero();
    frozen.specular_bases.setZero();
    return frozen;
}

// Tight vMF-like environment approximating a directional light of the given
// irradiance: radiance concentrated around `dir`, normalized so the
// cosine-weighted integral at a normal along `dir` matches E.
EnvMap delta_envmap(const Vec3& dir, const Rgb& irradiance, int height, double kappa) {
    EnvMap env;
    env.radiance = ImageF::zeros(2 * height, height, 3);
    double cos_integral = 0.0;
    for (int r = 0; r < height; ++r) {
        const double dw = env.pixel_solid_angle(r);
        for (int c = 0; c < 2 * height; ++c) {
            const Vec3 d = env.direction(r, c);
            cos_integral += std::exp(kappa * (d.dot(dir) - 1.0)) * std::max(0.0, d.dot(dir)) * dw;
        }
    }
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < 2 * height; ++c) {
            const Vec3 d = env.direction(r, c);
            const double profile = std::exp(kappa * (d.dot(dir) - 1.0)) / cos_integral;
            env.radiance.set3(r, c, Rgb(irradiance * profile));
        }
    return env;
}

void run_render(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "render";
    ctx.config = cfg;
    ctx.inputs["model"] = cfg.at("model").get<std::string>();

    MorphableReflectanceModel model = load_model(cfg.at("model").get<std::string>());
    GeometryBuffers geo = geometry_from_config(cfg);
    Eigen::VectorXd beta = beta_from_config(cfg, model);
    MorphableReflectanceModel frozen = freeze_clamped(model, beta);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.basis_count());

    const std::string light_kind = cfg.at("light").get<std::string>();
    ImageF rendered;
    if (light_kind == "point") {
        const Vec3 dir = parse_vec3(cfg.at("light_dir").get<std::string>()).normalized();
        const Rgb e = parse_rgb(cfg.at("irradiance").get<std::string>());
        rendered = render_image_directional(frozen, zero, dir, e, geo);
    } else if (light_kind == "sh" || light_kind == "env") {
        const int order = cfg.at("order").get<int>();
        ShVector light;
        if (light_kind == "sh") {
            light = ShVector::load(cfg.at("light_file").get<std::string>());
            if (light.order != order) {
                if (light.order < order)
                    throw format_error("SH light file has lower order than requested");
                ShVector trunc = ShVector::zeros(order);
                trunc.coeffs = light.coeffs.leftCols(trunc.coeff_count());
                light = trunc;
            }
        } else {
            EnvMap env;
            env.radiance = read_pfm(cfg.at("light_file").get<std::string>());
            light = project_envmap(env, order);
        }
        ZonalTable zonal = ZonalTable::build(model.cfg, order);
        rendered = render_image(frozen, zero, light, zonal, geo);
    } else {
        throw format_error("unknown light kind: " + light_kind + " (expected point, sh, or env)");
    }

    fs::create_directories(out);
    write_pfm(out / "render.pfm", rendered);
    write_rgb8_png(out / "render.png", preview_from_linear(rendered));
    json stats;
    stats["covered_pixels"] = geo.coverage.count();
    ctx.outputs["render"] = (out / "render.pfm").string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

void run_relight(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "relight";
    ctx.config = cfg;
    ctx.inputs["model"] = cfg.at("model").get<std::string>();

    MorphableReflectanceModel model = load_model(cfg.at("model").get<std::string>());
    GeometryBuffers geo = geometry_from_config(cfg);
    Eigen::VectorXd beta = beta_from_config(cfg, model);
    MorphableReflectanceModel frozen = freeze_clamped(model, beta);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.basis_count());

    const Rgb e = parse_rgb(cfg.at("irradiance").get<std::string>());
    const double elevation = cfg.at("elevation_deg").get<double>() * M_PI / 180.0;
    const int n_frames = cfg.at("frames").get<int>();

    fs::create_directories(out);
    json stats;
    for (int f = 0; f < n_frames; ++f) {
        const double phi = 2.0 * M_PI * f / n_frames;
        const Vec3 dir(std::cos(elevation) * std::cos(phi), std::cos(elevation) * std::sin(phi),
                       std::sin(elevation));
        ImageF frame = render_image_directional(frozen, zero, dir, e, geo);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d", f);
        write_pfm(out / (std::string(name) + ".pfm"), frame);
        write_rgb8_png(out / (std::string(name) + ".png"), preview_from_linear(frame));
    }
    stats["frames"] = n_frames;

    // Cross-path check: a tight environment lobe shaded through the SH path
    // approaches the directional render as the order grows.
    if (cfg.contains("compare_sh_orders") &&
        !cfg.at("compare_sh_orders").get<std::string>().empty()) {
        const Vec3 dir(std::cos(elevation), 0.0, std::sin(elevation));
        ImageF point_render = render_image_directional(frozen, zero, dir, e, geo);
        double point_mass = 0.0;
        for (float v : point_render.data) point_mass += std::abs(double(v));
        EnvMap env = delta_envmap(dir, e, 64, 600.0);
        json gaps = json::array();
        for (double order_d : parse_csv(cfg.at("compare_sh_orders").get<std::string>())) {
            const int order = int(order_d);
            ShVector light = project_envmap(env, order);
            ZonalTable zonal = ZonalTable::build(model.cfg, order);
            ImageF sh_render = render_image(frozen, zero, light, zonal, geo);
            double diff = 0.0;
            for (size_t i = 0; i < sh_render.data.size(); ++i)
                diff += std::abs(double(sh_render.data[i]) - double(point_render.data[i]));
            json entry;
            entry["order"] = order;
            entry["relative_gap"] = diff / std::max(point_mass, 1e-12);
            gaps.push_back(entry);
        }
        stats["sh_vs_point"] = gaps;
    }

    ctx.outputs["dir"] = out.string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

// ---------------------------------------------------------------------------
// fit / finetune / sample / inspect
// ---------------------------------------------------------------------------

FinetuneConfig finetune_config_from_json(const json& cfg) {
    FinetuneConfig fc;
    fc.w_l1 = cfg.at("w_l1").get<double>();
    fc.w_coef = cfg.at("w_coef").get<double>();
    fc.w_upd = cfg.at("w_upd").get<double>();
    fc.w_light = cfg.at("w_light").get<double>();
    fc.inner_iterations = cfg.at("iterations").get<int>();
    fc.epochs = cfg.value("epochs", fc.epochs);
    fc.model_steps = cfg.value("model_steps", fc.model_steps);
    fc.model_lr = cfg.value("model_lr", fc.model_lr);
    fc.coef_lr = cfg.at("coef_lr").get<double>();
    fc.seed = cfg.at("seed").get<uint64_t>();
    fc.threads = cfg.at("threads").get<int>();
    return fc;
}

void run_fit(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "fit";
    ctx.config = cfg;
    ctx.inputs["target"] = cfg.at("target_dir").get<std::string>();

    MorphableReflectanceModel model = load_model(cfg.at("model").get<std::string>());
    LightingPcaModel light_model = load_lighting_model(cfg.at("light_model").get<std::string>());
    FitTarget target = FitTarget::load_dir(cfg.at("target_dir").get<std::string>());
    if (target.skin.count() == 0)
        std::cerr << "[mfr] warning: empty skin mask, reconstruction loss is degenerate\n";
    FinetuneConfig fc = finetune_config_from_json(cfg);

    FitResult result = fit_image(target, model, light_model, fc);

    fs::create_directories(out);
    save_fit_result(out / "fit.json", result);
    ZonalTable zonal = ZonalTable::build(model.cfg, light_model.order);
    ImageF rendered = render_image(model, result.beta, light_model, result.gamma, result.z, zonal,
                                   target.geometry);
    write_pfm(out / "rendered.pfm", rendered);
    write_rgb8_png(out / "rendered.png", preview_from_linear(rendered));

    json stats;
    stats["loss_l1"] = result.loss_l1;
    stats["loss_coef"] = result.loss_coef;
    stats["loss_light"] = result.loss_light;
    stats["loss_total"] = result.loss_total;
    stats["iterations"] = result.iterations;
    ctx.outputs["fit"] = (out / "fit.json").string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

void run_finetune(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "finetune";
    ctx.config = cfg;

    MorphableReflectanceModel model0 = load_model(cfg.at("model").get<std::string>());
    LightingPcaModel light_model = load_lighting_model(cfg.at("light_model").get<std::string>());

    std::vector<FitTarget> targets;
    const fs::path targets_dir = cfg.at("targets_dir").get<std::string>();
    std::vector<fs::path> target_paths;
    for (const auto& entry : fs::directory_iterator(targets_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "target.json"))
            target_paths.push_back(entry.path());
    std::sort(target_paths.begin(), target_paths.end());
    for (const fs::path& p : target_paths) {
        targets.push_back(FitTarget::load_dir(p));
        ctx.inputs["targets"].push_back(p.string());
    }
    if (targets.empty()) throw format_error("no target directories under " + targets_dir.string());

    FinetuneConfig fc = finetune_config_from_json(cfg);
    MorphableReflectanceModel updated = finetune_model(targets, model0, light_model, fc);
    fs::create_directories(out);
    save_model(updated, out / "model.mfrm");

    json stats;
    stats["targets"] = targets.size();
    stats["loss_upd"] = loss_upd(updated, model0);
    ctx.outputs["model"] = (out / "model.mfrm").string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

void run_sample(const json& cfg) {
    const fs::path out = cfg.at("out").get<std::string>();
    RunContext ctx;
    ctx.command = "sample";
    ctx.config = cfg;
    ctx.inputs["model"] = cfg.at("model").get<std::string>();

    MorphableReflectanceModel model = load_model(cfg.at("model").get<std::string>());
    const int count = cfg.at("count").get<int>();
    const double scale = cfg.at("scale").get<double>();
    const uint64_t seed = cfg.at("seed").get<uint64_t>();

    const int cols = std::max(1, int(std::ceil(std::sqrt(double(count)))));
    const int rows = (count + cols - 1) / cols;
    ImageF grid = ImageF::zeros(cols * model.width, rows * model.height, 3);

    fs::create_directories(out);
    for (int i = 0; i < count; ++i) {
        ReflectanceMaps maps = clamp_negative(sample_model(model, seed + uint64_t(i), scale));
        if (cfg.at("save_maps").get<bool>()) {
            char name[32];
            std::snprintf(name, sizeof(name), "sample_%03d", i);
            maps.save_dir(out / name);
        }
        ImageF preview = preview_from_linear(maps.diffuse);
        const int gx = (i % cols) * model.width, gy = (i / cols) * model.height;
        for (int y = 0; y < model.height; ++y)
            for (int x = 0; x < model.width; ++x)
                for (int c = 0; c < 3; ++c) grid.at(gy + y, gx + x, c) = preview.at(y, x, c);
    }
    write_rgb8_png(out / "grid.png", grid);

    json stats;
    stats["samples"] = count;
    ctx.outputs["grid"] = (out / "grid.png").string();
    emit_stats(stats, out);
    write_manifest(ctx, out);
}

void run_inspect(const json& cfg) {
    const fs::path path = cfg.at("path").get<std::string>();
    json report;
    report["path"] = path.string();

    if (fs::is_directory(path)) {
        if (fs::exists(path / "rig.json")) {
            OlatSet set = load_olat_set(path);
            report["kind"] = "olat";
            report["frames"] = set.frames.size();
            report["views"] = set.rig.n_views();
            report["lights"] = set.rig.n_lights();
            report["resolution"] = {set.rig.width, set.rig.height};
        } else if (fs::exists(path / "maps.json")) {
            ReflectanceMaps maps = ReflectanceMaps::load_dir(path);
            report["kind"] = "maps";
            report["resolution"] = {maps.width, maps.height};
            report["lobes"] = maps.lobe_count();
            report["valid_texels"] = maps.valid.count();
        } else {
            throw format_error("no recognized manifest in " + path.string());
        }
    } else {
        std::ifstream probe(path, std::ios::binary);
        char magic[4] = {0, 0, 0, 0};
        probe.read(magic, 4);
        if (!probe) throw format_error("cannot read " + path.string());
        if (std::string(magic, 4) == "MFRM") {
            MorphableReflectanceModel model = load_model(path);
            report["kind"] = "mfrm";
            report["resolution"] = {model.width, model.height};
            report["lobes"] = model.cfg.lobe_count();
            report["bases"] = model.basis_count();
            report["exponents"] = model.cfg.exponents;
            model.check_invariants();
            report["invariants"] = "ok";
        } else if (std::string(magic, 4) == "MFLM") {
            LightingPcaModel model = load_lighting_model(path);
            report["kind"] = "mflm";
            report["order"] = model.order;
            report["bases"] = model.basis_count();
            model.check_invariants();
            report["invariants"] = "ok";
        } else {
            ShVector sh = ShVector::load(path);
            report["kind"] = "sh";
            report["order"] = sh.order;
        }
    }
    std::cout << report.dump(2) << std::endl;
}

// ---------------------------------------------------------------------------
// dispatch & rerun
// ---------------------------------------------------------------------------

void dispatch(const std::string& command, const json& cfg) {
    if (command == "synth-olat")
        run_synth_olat(cfg);
    else if (command == "estimate")
        run_estimate(cfg);
    else if (command == "build-model")
        run_build_model(cfg);
    else if (command == "build-light")
        run_build_light(cfg);
    else if (command == "synth-env")
        run_synth_env(cfg);
    else if (command == "render")
        run_render(cfg);
    else if (command == "relight")
        run_relight(cfg);
    else if (command == "fit")
        run_fit(cfg);
    else if (command == "finetune")
        run_finetune(cfg);
    else if (command == "sample")
        run_sample(cfg);
    else if (command == "inspect")
        run_inspect(cfg);
    else
        throw format_error("unknown command in manifest: " + command);
}

void run_rerun(const fs::path& manifest_path, const std::string& out_override) {
    std::ifstream in(manifest_path);
    if (!in) throw format_error("cannot open manifest " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("bad manifest JSON: " + std::string(e.what()));
    }
    if (manifest.value("schema", "") != "mfr.run/1")
        throw format_error("unsupported manifest schema in " + manifest_path.string());
    json cfg = manifest.at("config");
    if (!out_override.empty()) cfg["out"] = out_override;
    log_info("rerunning " + manifest.at("command").get<std::string>());
    dispatch(manifest.at("command").get<std::string>(), cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"morphable face reflectance pipeline"};
    app.require_subcommand(1);

    // Shared option storage; each subcommand materializes what it uses into
    // its config JSON so that run manifests are self-contained.
    uint64_t seed = 0;
    int threads = 0;
    std::string out, exponents = "1,8,64", solver = "adam", geometry = "hemisphere";
    int views = 9, lights = 11, resolution = 128;
    double irradiance_scalar = 1.0;

    auto* synth_olat = app.add_subcommand("synth-olat", "generate a synthetic OLAT set");
    synth_olat->add_option("--views", views);
    synth_olat->add_option("--lights", lights);
    synth_olat->add_option("--res", resolution);
    synth_olat->add_option("--geometry", geometry)->check(CLI::IsMember({"hemisphere", "plane"}));
    synth_olat->add_option("--exponents", exponents);
    synth_olat->add_option("--irradiance-scale", irradiance_scalar);
    synth_olat->add_option("--seed", seed);
    synth_olat->add_option("--out", out)->required();

    std::string olat_dir;
    double wreg = 100.0, step_size = 5e-3, flip = 0.5;
    int iterations = 2000, min_obs = 6;
    auto* estimate = app.add_subcommand("estimate", "per-texel inverse rendering of an OLAT set");
    estimate->add_option("olat_dir", olat_dir)->required();
    estimate->add_option("--solver", solver)->check(CLI::IsMember({"adam", "nnls"}));
    estimate->add_option("--wreg", wreg);
    estimate->add_option("--iters", iterations);
    estimate->add_option("--lr", step_size);
    estimate->add_option("--flip", flip);
    estimate->add_option("--min-obs", min_obs);
    estimate->add_option("--seed", seed);
    estimate->add_option("--threads", threads);
    estimate->add_option("--out", out)->required();

    std::vector<std::string> sample_dirs;
    int nr = 80;
    auto* build_model_cmd =
        app.add_subcommand("build-model", "PCA reflectance model from sample maps");
    build_model_cmd->add_option("samples", sample_dirs)->required();
    build_model_cmd->add_option("--nr", nr);
    build_model_cmd->add_option("--exponents", exponents);
    build_model_cmd->add_option("--out", out)->required();

    std::string pano_dir;
    int nl = 80, order = 8, rotations = 8;
    auto* build_light = app.add_subcommand("build-light", "PCA lighting model from PFM panoramas");
    build_light->add_option("panoramas", pano_dir)->required();
    build_light->add_option("--rotations", rotations);
    build_light->add_option("--nl", nl);
    build_light->add_option("--order", order);
    build_light->add_option("--out", out)->required();

    int env_count = 8, env_height = 64;
    auto* synth_env = app.add_subcommand("synth-env", "generate synthetic HDR panoramas");
    synth_env->add_option("--count", env_count);
    synth_env->add_option("--height", env_height);
    synth_env->add_option("--seed", seed);
    synth_env->add_option("--out", out)->required();

    std::string model_file, light_kind = "point", light_dir = "0,0,1", irradiance_rgb = "1,1,1";
    std::string light_file, geometry_dir, beta_csv, fit_file, proxy_view = "0,0,1";
    int proxy_resolution = 128;
    auto* render = app.add_subcommand("render", "render a model under a light");
    render->add_option("--model", model_file)->required();
    render->add_option("--light", light_kind)->check(CLI::IsMember({"point", "sh", "env"}));
    render->add_option("--light-dir", light_dir);
    render->add_option("--irradiance", irradiance_rgb);
    render->add_option("--light-file", light_file);
    render->add_option("--order", order);
    render->add_option("--geometry", geometry_dir);
    render->add_option("--proxy-res", proxy_resolution);
    render->add_option("--proxy-kind", geometry)->check(CLI::IsMember({"hemisphere", "plane"}));
    render->add_option("--proxy-view", proxy_view);
    render->add_option("--beta", beta_csv);
    render->add_option("--fit", fit_file);
    render->add_option("--out", out)->required();

    int relight_frames = 8;
    double elevation_deg = 35.0;
    std::string compare_orders;
    auto* relight = app.add_subcommand("relight", "point-light azimuth sweep of a model");
    relight->add_option("--model", model_file)->required();
    relight->add_option("--frames", relight_frames);
    relight->add_option("--elevation", elevation_deg);
    relight->add_option("--irradiance", irradiance_rgb);
    relight->add_option("--geometry", geometry_dir);
    relight->add_option("--proxy-res", proxy_resolution);
    relight->add_option("--proxy-kind", geometry)->check(CLI::IsMember({"hemisphere", "plane"}));
    relight->add_option("--proxy-view", proxy_view);
    relight->add_option("--beta", beta_csv);
    relight->add_option("--fit", fit_file);
    relight->add_option("--compare-sh-orders", compare_orders);
    relight->add_option("--out", out)->required();

    std::string light_model_file, target_dir, targets_dir;
    double w_l1 = 2.0, w_coef = 1e-3, w_upd = 10.0, w_light = 10.0;
    double coef_lr = 0.02, model_lr = 1e-5;
    int fit_iterations = 800, epochs = 2, model_steps = 40;
    auto* fit = app.add_subcommand("fit", "fit coefficients to a single target image");
    fit->add_option("target", target_dir)->required();
    fit->add_option("--model", model_file)->required();
    fit->add_option("--light-model", light_model_file)->required();
    fit->add_option("--iters", fit_iterations);
    fit->add_option("--lr", coef_lr);
    fit->add_option("--wl1", w_l1);
    fit->add_option("--wcoef", w_coef);
    fit->add_option("--wlight", w_light);
    fit->add_option("--seed", seed);
    fit->add_option("--threads", threads);
    fit->add_option("--out", out)->required();

    auto* finetune = app.add_subcommand("finetune", "update-by-reconstruction model finetuning");
    finetune->add_option("targets", targets_dir)->required();
    finetune->add_option("--model", model_file)->required();
    finetune->add_option("--light-model", light_model_file)->required();
    finetune->add_option("--iters", fit_iterations);
    finetune->add_option("--lr", coef_lr);
    finetune->add_option("--epochs", epochs);
    finetune->add_option("--model-steps", model_steps);
    finetune->add_option("--model-lr", model_lr);
    finetune->add_option("--wl1", w_l1);
    finetune->add_option("--wcoef", w_coef);
    finetune->add_option("--wupd", w_upd);
    finetune->add_option("--wlight", w_light);
    finetune->add_option("--seed", seed);
    finetune->add_option("--threads", threads);
    finetune->add_option("--out", out)->required();

    int sample_count = 9;
    double sample_scale = 1.0;
    bool save_maps = false;
    auto* sample = app.add_subcommand("sample", "draw random models as a preview grid");
    sample->add_option("--model", model_file)->required();
    sample->add_option("--count", sample_count);
    sample->add_option("--scale", sample_scale);
    sample->add_option("--seed", seed);
    sample->add_flag("--save-maps", save_maps);
    sample->add_option("--out", out)->required();

    std::string inspect_path;
    auto* inspect =
        app.add_subcommand("inspect", "print container headers and run invariant checks");
    inspect->add_option("path", inspect_path)->required();

    std::string manifest_path, rerun_out;
    auto* rerun = app.add_subcommand("rerun", "re-execute a command from its run manifest");
    rerun->add_option("manifest", manifest_path)->required();
    rerun->add_option("--out", rerun_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        json cfg;
        if (synth_olat->parsed()) {
            cfg = {{"views", views},
                   {"lights", lights},
                   {"resolution", resolution},
                   {"geometry", geometry},
                   {"exponents", parse_csv(exponents)},
                   {"irradiance", irradiance_scalar},
                   {"seed", seed},
                   {"out", out}};
            run_synth_olat(cfg);
        } else if (estimate->parsed()) {
            cfg = {{"olat_dir", olat_dir},
                   {"solver", solver},
                   {"wreg", wreg},
                   {"iterations", iterations},
                   {"step_size", step_size},
                   {"flip", flip},
                   {"min_observations", min_obs},
                   {"seed", seed},
                   {"threads", threads},
                   {"out", out}};
            run_estimate(cfg);
        } else if (build_model_cmd->parsed()) {
            cfg = {{"sample_dirs", sample_dirs},
                   {"nr", nr},
                   {"exponents", parse_csv(exponents)},
                   {"out", out}};
            run_build_model(cfg);
        } else if (build_light->parsed()) {
            cfg = {{"panorama_dir", pano_dir},
                   {"rotations", rotations},
                   {"nl", nl},
                   {"order", order},
                   {"out", out}};
            run_build_light(cfg);
        } else if (synth_env->parsed()) {
            cfg = {{"count", env_count}, {"height", env_height}, {"seed", seed}, {"out", out}};
            run_synth_env(cfg);
        } else if (render->parsed()) {
            cfg = {{"model", model_file},
                   {"light", light_kind},
                   {"light_dir", light_dir},
                   {"irradiance", irradiance_rgb},
                   {"light_file", light_file},
                   {"order", order},
                   {"geometry_dir", geometry_dir},
                   {"proxy_resolution", proxy_resolution},
                   {"proxy_kind", geometry},
                   {"proxy_view", proxy_view},
                   {"beta", beta_csv},
                   {"fit_file", fit_file},
                   {"out", out}};
            run_render(cfg);
        } else if (relight->parsed()) {
            cfg = {{"model", model_file},
                   {"frames", relight_frames},
                   {"elevation_deg", elevation_deg},
                   {"irradiance", irradiance_rgb},
                   {"geometry_dir", geometry_dir},
                   {"proxy_resolution", proxy_resolution},
                   {"proxy_kind", geometry},
                   {"proxy_view", proxy_view},
                   {"beta", beta_csv},
                   {"fit_file", fit_file},
                   {"compare_sh_orders", compare_orders},
                   {"out", out}};
            run_relight(cfg);
        } else if (fit->parsed()) {
            cfg = {{"target_dir", target_dir},
                   {"model", model_file},
                   {"light_model", light_model_file},
                   {"iterations", fit_iterations},
                   {"coef_lr", coef_lr},
                   {"w_l1", w_l1},
                   {"w_coef", w_coef},
                   {"w_upd", w_upd},
                   {"w_light", w_light},
                   {"seed", seed},
                   {"threads", threads},
                   {"out", out}};
            run_fit(cfg);
        } else if (finetune->parsed()) {
            cfg = {{"targets_dir", targets_dir},
                   {"model", model_file},
                   {"light_model", light_model_file},
                   {"iterations", fit_iterations},
                   {"coef_lr", coef_lr},
                   {"epochs", epochs},
                   {"model_steps", model_steps},
                   {"model_lr", model_lr},
                   {"w_l1", w_l1},
                   {"w_coef", w_coef},
                   {"w_upd", w_upd},
                   {"w_light", w_light},
                   {"seed", seed},
                   {"threads", threads},
                   {"out", out}};
            run_finetune(cfg);
        } else if (sample->parsed()) {
            cfg = {{"model", model_file},
                   {"count", sample_count},
                   {"scale", sample_scale},
                   {"seed", seed},
                   {"save_maps", save_maps},
                   {"out", out}};
            run_sample(cfg);
        } else if (inspect->parsed()) {
            cfg = {{"path", inspect_path}};
            run_inspect(cfg);
        } else if (rerun->parsed()) {
            run_rerun(manifest_path, rerun_out);
        }
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const invariant_error& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 4;
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
