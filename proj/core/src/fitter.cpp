// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/fitter.hpp>

#include <mfr/adam.hpp>
#include <mfr/errors.hpp>
#include <mfr/parallel.hpp>
#include <mfr/pfm.hpp>
#include <mfr/png_io.hpp>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace mfr {

using nlohmann::json;

void GeometryBuffers::validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("GeometryBuffers: empty buffers");
    auto check = [&](const ImageF& img, const char* what) {
        if (img.width != width || img.height != height || img.channels != 3)
            throw std::invalid_argument(std::string("GeometryBuffers: ") + what + " shape mismatch");
    };
    check(normals, "normal map");
    check(view_dirs, "view map");
    check(uv, "uv map");
    if (coverage.width != width || coverage.height != height)
        throw std::invalid_argument("GeometryBuffers: coverage shape mismatch");
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (!coverage.at(y, x)) continue;
            if (!is_unit(normals.vec3_at(y, x), 1e-3) || !is_unit(view_dirs.vec3_at(y, x), 1e-3))
                throw std::invalid_argument("GeometryBuffers: non-unit direction on covered pixel");
            const float u = uv.at(y, x, 0), v = uv.at(y, x, 1);
            if (u < 0.0f || u >= 1.0f || v < 0.0f || v >= 1.0f)
                throw std::invalid_argument("GeometryBuffers: UV outside [0,1)");
        }
}

GeometryBuffers proxy_geometry(int resolution, ProxyGeometry kind, const Vec3& view_dir) {
    if (!is_unit(view_dir)) throw std::invalid_argument("proxy_geometry: view direction not unit");
    CaptureRig rig = make_rig(1, 1, resolution, kind, 0);
    GeometryBuffers geo;
    geo.width = resolution;
    geo.height = resolution;
    geo.normals = rig.normals;
    geo.view_dirs = ImageF::zeros(resolution, resolution, 3);
    geo.uv = ImageF::zeros(resolution, resolution, 3);
    geo.coverage = Mask::zeros(resolution, resolution);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            geo.view_dirs.set3(y, x, view_dir);
            geo.uv.at(y, x, 0) = float((x + 0.5) / resolution);
            geo.uv.at(y, x, 1) = float((y + 0.5) / resolution);
            geo.coverage.at(y, x) =
                rig.valid.at(y, x) && rig.normals.vec3_at(y, x).dot(view_dir) > 1e-3 ? 1 : 0;
        }
    return geo;
}

void GeometryBuffers::save_dir(const std::filesystem::path& dir) const {
    validate();
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["schema"] = "mfr.geometry/1";
    manifest["width"] = width;
    manifest["height"] = height;
    manifest["files"] = {{"normals", "normals.pfm"},
                         {"view", "view.pfm"},
                         {"uv", "uv.pfm"},
                         {"coverage", "coverage.png"}};
    write_pfm(dir / "normals.pfm", normals);
    write_pfm(dir / "view.pfm", view_dirs);
    write_pfm(dir / "uv.pfm", uv);
    write_mask_png(dir / "coverage.png", coverage);
    std::ofstream out(dir / "geometry.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw format_error("geometry: cannot write manifest in " + dir.string());
}

GeometryBuffers GeometryBuffers::load_dir(const std::filesystem::path& dir) {
    std::ifstream in(dir / "geometry.json");
    if (!in) throw format_error("geometry: missing geometry.json in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("geometry: bad manifest: " + std::string(e.what()));
    }
    if (manifest.value("schema", "") != "mfr.geometry/1")
        throw format_error("geometry: unsupported manifest schema in " + dir.string());
    GeometryBuffers geo;
    geo.width = manifest.at("width").get<int>();
    geo.height = manifest.at("height").get<int>();
    const json& files = manifest.at("files");
    geo.normals = read_pfm(dir / files.at("normals").get<std::string>());
    geo.view_dirs = read_pfm(dir / files.at("view").get<std::string>());
    geo.uv = read_pfm(dir / files.at("uv").get<std::string>());
    geo.coverage = read_mask_png(dir / files.at("coverage").get<std::string>());
    geo.validate();
    return geo;
}

void FitTarget::validate() const {
    geometry.validate();
    if (image.width != geometry.width || image.height != geometry.height || image.channels != 3)
        throw std::invalid_argument("FitTarget: image shape mismatch");
    if (skin.width != geometry.width || skin.height != geometry.height)
        throw std::invalid_argument("FitTarget: skin mask shape mismatch");
    for (float v : image.data)
        if (!(v >= 0.0f)) throw std::invalid_argument("FitTarget: image must be non-negative");
}

void FitTarget::save_dir(const std::filesystem::path& dir) const {
    validate();
    geometry.save_dir(dir);
    write_pfm(dir / "image.pfm", image);
    write_mask_png(dir / "skin.png", skin);
    json manifest;
    manifest["schema"] = "mfr.target/1";
    manifest["width"] = geometry.width;
    manifest["height"] = geometry.height;
    manifest["files"] = {{"image", "image.pfm"}, {"skin", "skin.png"}, {"geometry", "geometry.json"}};
    std::ofstream out(dir / "target.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw format_error("target: cannot write manifest in " + dir.string());
}

FitTarget FitTarget::load_dir(const std::filesystem::path& dir) {
    std::ifstream in(dir / "target.json");
    if (!in) throw format_error("target: missing target.json in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("target: bad manifest: " + std::string(e.what()));
    }
    if (manifest.value("schema", "") != "mfr.target/1")
        throw format_error("target: unsupported manifest schema in " + dir.string());
    FitTarget target;
    target.geometry = GeometryBuffers::load_dir(dir);
    target.image = read_pfm(dir / manifest.at("files").at("image").get<std::string>());
    target.skin = read_mask_png(dir / manifest.at("files").at("skin").get<std::string>());
    target.validate();
    return target;
}

void FinetuneConfig::validate() const {
    if (w_l1 < 0 || w_per < 0 || w_coef < 0 || w_upd < 0 || w_light < 0)
        throw std::invalid_argument("FinetuneConfig: loss weights must be >= 0");
    if (inner_iterations < 1 || epochs < 1 || model_steps < 1)
        throw std::invalid_argument("FinetuneConfig: iteration counts must be >= 1");
    if (!(model_lr > 0.0) || !(coef_lr > 0.0))
        throw std::invalid_argument("FinetuneConfig: learning rates must be positive");
}

void save_fit_result(const std::filesystem::path& path, const FitResult& result) {
    json j;
    j["schema"] = "mfr.fit/1";
    j["beta"] = std::vector<double>(result.beta.data(), result.beta.data() + result.beta.size());
    j["gamma"] = std::vector<double>(result.gamma.data(), result.gamma.data() + result.gamma.size());
    j["z"] = {result.z[0], result.z[1], result.z[2]};
    j["losses"] = {{"l1", result.loss_l1},
                   {"coef", result.loss_coef},
                   {"light", result.loss_light},
                   {"total", result.loss_total}};
    j["iterations"] = result.iterations;
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw format_error("fit: cannot write " + path.string());
}

FitResult load_fit_result(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("fit: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw format_error("fit: bad JSON in " + path.string() + ": " + e.what());
    }
    if (j.value("schema", "") != "mfr.fit/1")
        throw format_error("fit: unsupported schema in " + path.string());
    FitResult r;
    auto beta = j.at("beta").get<std::vector<double>>();
    auto gamma = j.at("gamma").get<std::vector<double>>();
    r.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), Eigen::Index(beta.size()));
    r.gamma = Eigen::Map<const Eigen::VectorXd>(gamma.data(), Eigen::Index(gamma.size()));
    auto z = j.at("z").get<std::vector<double>>();
    if (z.size() != 3) throw format_error("fit: z must have 3 entries");
    r.z = Rgb(z[0], z[1], z[2]);
    r.loss_l1 = j.at("losses").at("l1").get<double>();
    r.loss_coef = j.at("losses").at("coef").get<double>();
    r.loss_light = j.at("losses").at("light").get<double>();
    r.loss_total = j.at("losses").at("total").get<double>();
    r.iterations = j.at("iterations").get<int>();
    return r;
}

namespace {

int texel_of_uv(float u, float v, int w, int h) {
    int x = std::min(w - 1, std::max(0, int(u * w)));
    int y = std::min(h - 1, std::max(0, int(v * h)));
    return y * w + x;
}

}  // namespace

ImageF render_image(const MorphableReflectanceModel& model, const Eigen::VectorXd& beta,
                    const ShVector& light, const ZonalTable& zonal, const GeometryBuffers& geo) {
    geo.validate();
    if (beta.size() != model.basis_count())
        throw std::invalid_argument("render_image: beta length mismatch");
    if (light.order != zonal.order)
        throw std::invalid_argument("render_image: lighting and zonal orders differ");

    const Eigen::VectorXd d = model.mean_diffuse() + model.diffuse_bases * beta;
    const Eigen::VectorXd w = model.mean_weights() + model.specular_bases * beta;
    const int k = model.cfg.lobe_count();

    ImageF out = ImageF::zeros(geo.width, geo.height, 3);
    parallel_for(0, geo.height, 0, [&](int64_t y) {
        ReflectanceTexel texel = ReflectanceTexel::zeros(k);
        for (int x = 0; x < geo.width; ++x) {
            if (!geo.coverage.at(int(y), x)) continue;
            const Vec3 n = geo.normals.vec3_at(int(y), x);
            const Vec3 v = geo.view_dirs.vec3_at(int(y), x);
            if (n.dot(v) <= 0.0) continue;
            const int t = texel_of_uv(geo.uv.at(int(y), x, 0), geo.uv.at(int(y), x, 1),
                                      model.width, model.height);
            texel.diffuse = Rgb(d[3 * t], d[3 * t + 1], d[3 * t + 2]);
            for (int i = 0; i < k; ++i) texel.weights[i] = w[Eigen::Index(k) * t + i];
            out.set3(int(y), x, shade_env(texel, model.cfg, light, zonal, n, v));
        }
    });
    return out;
}

ImageF render_image(const MorphableReflectanceModel& model, const Eigen::VectorXd& beta,
                    const LightingPcaModel& light_model, const Eigen::VectorXd& gamma,
                    const Rgb& z, const ZonalTable& zonal, const GeometryBuffers& geo) {
    return render_image(model, beta, decode_lighting(light_model, gamma, z), zonal, geo);
}

ImageF render_image_directional(const MorphableReflectanceModel& model,
                                const Eigen::VectorXd& beta, const Vec3& light_dir,
                                const Rgb& irradiance, const GeometryBuffers& geo) {
    geo.validate();
    if (beta.size() != model.basis_count())
        throw std::invalid_argument("render_image_directional: beta length mismatch");
    const Eigen::VectorXd d = model.mean_diffuse() + model.diffuse_bases * beta;
    const Eigen::VectorXd w = model.mean_weights() + model.specular_bases * beta;
    const int k = model.cfg.lobe_count();

    ImageF out = ImageF::zeros(geo.width, geo.height, 3);
    parallel_for(0, geo.height, 0, [&](int64_t y) {
        ReflectanceTexel texel = ReflectanceTexel::zeros(k);
        for (int x = 0; x < geo.width; ++x) {
            if (!geo.coverage.at(int(y), x)) continue;
            const int t = texel_of_uv(geo.uv.at(int(y), x, 0), geo.uv.at(int(y), x, 1),
                                      model.width, model.height);
            texel.diffuse = Rgb(d[3 * t], d[3 * t + 1], d[3 * t + 2]);
            for (int i = 0; i < k; ++i) texel.weights[i] = w[Eigen::Index(k) * t + i];
            out.set3(int(y), x,
                     shade_directional(texel, model.cfg, irradiance, light_dir,
                                       geo.view_dirs.vec3_at(int(y), x),
                                       geo.normals.vec3_at(int(y), x)));
        }
    });
    return out;
}

double loss_l1(const ImageF& rendered, const ImageF& target, const Mask& skin) {
    if (!rendered.same_shape(target) || rendered.width != skin.width ||
        rendered.height != skin.height)
        throw std::invalid_argument("loss_l1: shape mismatch");
    const size_t n = skin.count();
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (int y = 0; y < rendered.height; ++y)
        for (int x = 0; x < rendered.width; ++x) {
            if (!skin.at(y, x)) continue;
            for (int c = 0; c < 3; ++c)
                sum += std::abs(double(rendered.at(y, x, c)) - double(target.at(y, x, c)));
        }
    return sum / (3.0 * double(n));
}

double loss_coef(const Eigen::VectorXd& beta, const Eigen::VectorXd& sigma_beta,
                 const Eigen::VectorXd& gamma, const Eigen::VectorXd& sigma_gamma) {
    if (beta.size() != sigma_beta.size() || gamma.size() != sigma_gamma.size())
        throw std::invalid_argument("loss_coef: sigma length mismatch");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < beta.size(); ++i) {
        const double s = std::max(std::abs(sigma_beta[i]), 1e-12);
        sum += (beta[i] / s) * (beta[i] / s);
    }
    for (Eigen::Index i = 0; i < gamma.size(); ++i) {
        const double s = std::max(std::abs(sigma_gamma[i]), 1e-12);
        sum += (gamma[i] / s) * (gamma[i] / s);
    }
    return sum;
}

double loss_light(const ShVector& sh) {
    double sum = 0.0;
    for (int i = 0; i < sh.coeff_count(); ++i) {
        const double mean = sh.coeffs.col(i).mean();
        for (int ch = 0; ch < 3; ++ch) {
            const double d = sh.coeffs(ch, i) - mean;
            sum += d * d;
        }
    }
    return sum;
}

double loss_upd(const MorphableReflectanceModel& model, const MorphableReflectanceModel& model0) {
    if (model.mean.size() != model0.mean.size() ||
        model.diffuse_bases.size() != model0.diffuse_bases.size() ||
        model.specular_bases.size() != model0.specular_bases.size())
        throw std::invalid_argument("loss_upd: model shapes differ");
    return (model.mean - model0.mean).cwiseAbs().sum() +
           (model.diffuse_bases - model0.diffuse_bases).cwiseAbs().sum() +
           (model.specular_bases - model0.specular_bases).cwiseAbs().sum();
}

// ---------------------------------------------------------------------------
// FitProblem
// ---------------------------------------------------------------------------

struct FitProblem::Impl {
    const FitTarget* target = nullptr;
    const MorphableReflectanceModel* model = nullptr;
    const LightingPcaModel* light_model = nullptr;
    FinetuneConfig cfg;
    ZonalTable zonal;

    // Loss pixels: covered AND skin.
    std::vector<int> pixel_texel;
    Eigen::MatrixXd yn, yr;       // P x nc
    Eigen::MatrixXd target_rgb;   // P x 3
    Eigen::VectorXd lambert_band;           // nc, A_l per flat index
    Eigen::MatrixXd phong_band;             // nc x k, B^i_l per flat index
    double const_l1 = 0.0;        // |target| mass on skin pixels outside coverage
    double inv_denom = 0.0;       // 1 / (3 * skin count)
    Eigen::VectorXd sigma_beta_floor, sigma_gamma_floor;

    int n_beta() const { return model->basis_count(); }
    int n_gamma() const { return light_model->basis_count(); }
    int dim() const { return n_beta() + n_gamma() + 3; }

    struct Eval {
        FitProblem::Terms terms;
        Eigen::VectorXd grad;              // coefficient gradient, optional
        Eigen::VectorXd adj_diffuse;       // dTotal/d(diffuse values), 3V
        Eigen::VectorXd adj_weights;       // dTotal/d(weight values), kV
        Eigen::VectorXd beta, gamma;       // unwhitened
        Rgb z = Rgb::Ones();
        bool want_grad = false;
        bool want_model_adjoints = false;
    };

    void evaluate(const Eigen::VectorXd& params, Eval& ev) const;
};

FitProblem::FitProblem(const FitTarget& target, const MorphableReflectanceModel& model,
                       const LightingPcaModel& light_model, const FinetuneConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    target.validate();
    cfg.validate();
    impl_->target = &target;
    impl_->model = &model;
    impl_->light_model = &light_model;
    impl_->cfg = cfg;
    impl_->zonal = ZonalTable::build(model.cfg, light_model.order);

    const int order = light_model.order;
    const int nc = sh_coeff_count(order);
    const int k = model.cfg.lobe_count();

    impl_->lambert_band.resize(nc);
    impl_->phong_band.resize(nc, k);
    for (int l = 0; l <= order; ++l)
        for (int m = -l; m <= l; ++m) {
            impl_->lambert_band[sh_index(l, m)] = impl_->zonal.lambert[l];
            for (int i = 0; i < k; ++i)
                impl_->phong_band(sh_index(l, m), i) = impl_->zonal.phong(i, l);
        }

    const GeometryBuffers& geo = target.geometry;
    size_t n_skin = target.skin.count();
    impl_->inv_denom = n_skin > 0 ? 1.0 / (3.0 * double(n_skin)) : 0.0;

    std::vector<std::pair<int, int>> pixels;
    for (int y = 0; y < geo.height; ++y)
        for (int x = 0; x < geo.width; ++x) {
            if (!target.skin.at(y, x)) continue;
            if (geo.coverage.at(y, x) && geo.normals.vec3_at(y, x).dot(geo.view_dirs.vec3_at(y, x)) > 0.0) {
                pixels.push_back({y, x});
            } else {
                for (int c = 0; c < 3; ++c)
                    impl_->const_l1 += std::abs(double(target.image.at(y, x, c))) * impl_->inv_denom;
            }
        }

    const int P = int(pixels.size());
    impl_->pixel_texel.resize(size_t(P));
    impl_->yn.resize(P, nc);
    impl_->yr.resize(P, nc);
    impl_->target_rgb.resize(P, 3);
    Eigen::VectorXd basis(nc);
    for (int p = 0; p < P; ++p) {
        const auto [y, x] = pixels[size_t(p)];
        const Vec3 n = geo.normals.vec3_at(y, x);
        const Vec3 v = geo.view_dirs.vec3_at(y, x);
        impl_->pixel_texel[size_t(p)] =
            texel_of_uv(geo.uv.at(y, x, 0), geo.uv.at(y, x, 1), model.width, model.height);
        sh_eval_basis(n, order, basis.data());
        impl_->yn.row(p) = basis.transpose();
        sh_eval_basis(reflect_vector(n, v), order, basis.data());
        impl_->yr.row(p) = basis.transpose();
        for (int c = 0; c < 3; ++c) impl_->target_rgb(p, c) = double(target.image.at(y, x, c));
    }

    auto floor_sigma = [](const Eigen::VectorXd& s) {
        Eigen::VectorXd out = s.cwiseAbs();
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 1e-8);
        return out;
    };
    impl_->sigma_beta_floor = floor_sigma(model.sigmas);
    impl_->sigma_gamma_floor = floor_sigma(light_model.sigmas);
}

FitProblem::~FitProblem() = default;
FitProblem::FitProblem(FitProblem&&) noexcept = default;
FitProblem& FitProblem::operator=(FitProblem&&) noexcept = default;

int FitProblem::dim() const { return impl_->dim(); }

Eigen::VectorXd FitProblem::initial_params() const { return Eigen::VectorXd::Zero(impl_->dim()); }

void FitProblem::set_model(const MorphableReflectanceModel& model) { impl_->model = &model; }

void FitProblem::Impl::evaluate(const Eigen::VectorXd& params, Eval& ev) const {
    const int nb = n_beta(), ng = n_gamma();
    if (params.size() != dim()) throw std::invalid_argument("fit: parameter length mismatch");
    const int nc = sh_coeff_count(light_model->order);
    const int k = model->cfg.lobe_count();
    const int P = int(pixel_texel.size());

    const Eigen::VectorXd beta_w = params.head(nb);
    const Eigen::VectorXd gamma_w = params.segment(nb, ng);
    const Rgb z(std::exp(params[nb + ng]), std::exp(params[nb + ng + 1]),
                std::exp(params[nb + ng + 2]));
    ev.beta = sigma_beta_floor.cwiseProduct(beta_w);
    ev.gamma = sigma_gamma_floor.cwiseProduct(gamma_w);
    ev.z = z;

    // Decoded lighting coefficients per channel.
    Eigen::VectorXd kraw = light_model->mean + light_model->bases * ev.gamma;
    Eigen::MatrixXd kmat(nc, 3);  // column ch
    for (int ch = 0; ch < 3; ++ch) kmat.col(ch) = z[ch] * kraw.segment(Eigen::Index(ch) * nc, nc);

    // Reconstructed maps.
    const Eigen::VectorXd d = model->mean_diffuse() + model->diffuse_bases * ev.beta;
    const Eigen::VectorXd w = model->mean_weights() + model->specular_bases * ev.beta;

    // Band-scaled lighting: diffuse kernel and one specular kernel per lobe.
    Eigen::MatrixXd ad(nc, 3);
    Eigen::MatrixXd as(nc, 3 * k);
    for (int ch = 0; ch < 3; ++ch) {
        ad.col(ch) = lambert_band.cwiseProduct(kmat.col(ch));
        for (int i = 0; i < k; ++i)
            as.col(3 * i + ch) = phong_band.col(i).cwiseProduct(kmat.col(ch));
    }
    const Eigen::MatrixXd dmat = yn * ad;   // P x 3
    const Eigen::MatrixXd gmat = yr * as;   // P x 3k, lobe-major blocks of 3

    // L1 reconstruction term and sign field.
    double l1 = const_l1;
    Eigen::MatrixXd signs(P, 3);
    for (int p = 0; p < P; ++p) {
        const int t = pixel_texel[size_t(p)];
        for (int ch = 0; ch < 3; ++ch) {
            double shat = d[3 * t + ch] / M_PI * dmat(p, ch);
            for (int i = 0; i < k; ++i)
                shat += w[Eigen::Index(k) * t + i] * gmat(p, 3 * i + ch);
            const double r = shat - target_rgb(p, ch);
            l1 += std::abs(r) * inv_denom;
            signs(p, ch) = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
        }
    }

    // Monochromatic-lighting and coefficient priors.
    double light = 0.0;
    for (int i = 0; i < nc; ++i) {
        const double mean = (kmat(i, 0) + kmat(i, 1) + kmat(i, 2)) / 3.0;
        for (int ch = 0; ch < 3; ++ch) {
            const double dev = kmat(i, ch) - mean;
            light += dev * dev;
        }
    }
    const double coef = beta_w.squaredNorm() + gamma_w.squaredNorm();

    ev.terms.l1 = l1;
    ev.terms.coef = coef;
    ev.terms.light = light;
    ev.terms.total = cfg.w_l1 * l1 + cfg.w_coef * coef + cfg.w_light * light;

    if (!ev.want_grad && !ev.want_model_adjoints) return;

    // Adjoints of the total loss with respect to map values.
    const double scale = cfg.w_l1 * inv_denom;
    Eigen::VectorXd adj_d = Eigen::VectorXd::Zero(d.size());
    Eigen::VectorXd adj_w = Eigen::VectorXd::Zero(w.size());
    for (int p = 0; p < P; ++p) {
        const int t = pixel_texel[size_t(p)];
        for (int ch = 0; ch < 3; ++ch) {
            const double s = signs(p, ch) * scale;
            if (s == 0.0) continue;
            adj_d[3 * t + ch] += s * dmat(p, ch) / M_PI;
            for (int i = 0; i < k; ++i)
                adj_w[Eigen::Index(k) * t + i] += s * gmat(p, 3 * i + ch);
        }
    }
    if (ev.want_model_adjoints) {
        ev.adj_diffuse = adj_d;
        ev.adj_weights = adj_w;
    }
    if (!ev.want_grad) return;

    // dTotal/d(lighting coefficients kmat).
    Eigen::MatrixXd s1(P, 3), s2(P, 3 * k);
    for (int p = 0; p < P; ++p) {
        const int t = pixel_texel[size_t(p)];
        for (int ch = 0; ch < 3; ++ch) {
            const double s = signs(p, ch) * scale;
            s1(p, ch) = s * d[3 * t + ch] / M_PI;
            for (int i = 0; i < k; ++i)
                s2(p, 3 * i + ch) = s * w[Eigen::Index(k) * t + i];
        }
    }
    const Eigen::MatrixXd t1 = yn.transpose() * s1;  // nc x 3
    const Eigen::MatrixXd t2 = yr.transpose() * s2;  // nc x 3k
    Eigen::MatrixXd adj_k(nc, 3);
    for (int ch = 0; ch < 3; ++ch) {
        adj_k.col(ch) = lambert_band.cwiseProduct(t1.col(ch));
        for (int i = 0; i < k; ++i)
            adj_k.col(ch) += phong_band.col(i).cwiseProduct(t2.col(3 * i + ch));
    }
    for (int i = 0; i < nc; ++i) {
        const double mean = (kmat(i, 0) + kmat(i, 1) + kmat(i, 2)) / 3.0;
        for (int ch = 0; ch < 3; ++ch)
            adj_k(i, ch) += cfg.w_light * 2.0 * (kmat(i, ch) - mean);
    }

    ev.grad.setZero(dim());
    // beta: through the reconstructed maps.
    Eigen::VectorXd g_beta = model->diffuse_bases.transpose() * adj_d +
                             model->specular_bases.transpose() * adj_w;
    ev.grad.head(nb) = sigma_beta_floor.cwiseProduct(g_beta) + cfg.w_coef * 2.0 * beta_w;

    // gamma: through z-scaled lighting bases.
    Eigen::VectorXd u(Eigen::Index(3) * nc);
    for (int ch = 0; ch < 3; ++ch) u.segment(Eigen::Index(ch) * nc, nc) = z[ch] * adj_k.col(ch);
    Eigen::VectorXd g_gamma = light_model->bases.transpose() * u;
    ev.grad.segment(nb, ng) =
        sigma_gamma_floor.cwiseProduct(g_gamma) + cfg.w_coef * 2.0 * gamma_w;

    // log z: dk/dlogz = k.
    for (int ch = 0; ch < 3; ++ch)
        ev.grad[nb + ng + ch] = adj_k.col(ch).dot(kmat.col(ch));
}

FitProblem::Terms FitProblem::evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* grad) const {
    Impl::Eval ev;
    ev.want_grad = grad != nullptr;
    impl_->evaluate(params, ev);
    if (grad) *grad = ev.grad;
    return ev.terms;
}

void FitProblem::model_gradients(const Eigen::VectorXd& params, Eigen::VectorXd& g_mean,
                                 Eigen::MatrixXd& g_diffuse_bases,
                                 Eigen::MatrixXd& g_specular_bases) const {
    Impl::Eval ev;
    ev.want_model_adjoints = true;
    impl_->evaluate(params, ev);
    g_mean.resize(ev.adj_diffuse.size() + ev.adj_weights.size());
    g_mean << ev.adj_diffuse, ev.adj_weights;
    g_diffuse_bases = ev.adj_diffuse * ev.beta.transpose();
    g_specular_bases = ev.adj_weights * ev.beta.transpose();
}

FitResult FitProblem::unpack(const Eigen::VectorXd& params, int iterations) const {
    Impl::Eval ev;
    impl_->evaluate(params, ev);
    FitResult res;
    res.beta = ev.beta;
    res.gamma = ev.gamma;
    res.z = ev.z;
    res.loss_l1 = ev.terms.l1;
    res.loss_coef = ev.terms.coef;
    res.loss_light = ev.terms.light;
    res.loss_total = ev.terms.total;
    res.iterations = iterations;
    return res;
}

namespace {

Eigen::VectorXd run_fit(const FitProblem& prob, const FinetuneConfig& cfg,
                        Eigen::VectorXd params) {
    AdamParams ap;
    ap.learning_rate = cfg.coef_lr;
    Adam adam(params.size(), ap);
    Eigen::VectorXd grad;
    for (int it = 0; it < cfg.inner_iterations; ++it) {
        const FitProblem::Terms terms = prob.evaluate(params, &grad);
        if (!std::isfinite(terms.total))
            throw numerical_error("fit diverged: non-finite loss at iteration " +
                                  std::to_string(it) + " (l1=" + std::to_string(terms.l1) +
                                  ", light=" + std::to_string(terms.light) + ")");
        adam.step(grad, params, 1.0 - double(it) / double(cfg.inner_iterations));
    }
    return params;
}

}  // namespace

FitResult fit_image(const FitTarget& target, const MorphableReflectanceModel& model,
                    const LightingPcaModel& light_model, const FinetuneConfig& cfg) {
    FitProblem prob(target, model, light_model, cfg);
    Eigen::VectorXd params = run_fit(prob, cfg, prob.initial_params());
    return prob.unpack(params, cfg.inner_iterations);
}

namespace {

struct ModelVector {
    // Flat order: mean, vec(diffuse_bases), vec(specular_bases).
    static Eigen::VectorXd pack(const MorphableReflectanceModel& m) {
        Eigen::VectorXd v(m.mean.size() + m.diffuse_bases.size() + m.specular_bases.size());
        v << m.mean,
            Eigen::Map<const Eigen::VectorXd>(m.diffuse_bases.data(), m.diffuse_bases.size()),
            Eigen::Map<const Eigen::VectorXd>(m.specular_bases.data(), m.specular_bases.size());
        return v;
    }
    static void unpack(const Eigen::VectorXd& v, MorphableReflectanceModel& m) {
        Eigen::Index off = 0;
        m.mean = v.segment(off, m.mean.size());
        off += m.mean.size();
        m.diffuse_bases = Eigen::Map<const Eigen::MatrixXd>(v.data() + off, m.diffuse_bases.rows(),
                                                            m.diffuse_bases.cols());
        off += m.diffuse_bases.size();
        m.specular_bases = Eigen::Map<const Eigen::MatrixXd>(
            v.data() + off, m.specular_bases.rows(), m.specular_bases.cols());
    }
};

}  // namespace

MorphableReflectanceModel finetune_model(const std::vector<FitTarget>& targets,
                                         const MorphableReflectanceModel& model0,
                                         const LightingPcaModel& light_model,
                                         const FinetuneConfig& cfg) {
    cfg.validate();
    if (targets.empty()) throw std::invalid_argument("finetune_model: needs at least one target");
    model0.check_invariants();

    MorphableReflectanceModel model = model0;

    std::vector<FitProblem> problems;
    problems.reserve(targets.size());
    for (const FitTarget& t : targets) problems.emplace_back(t, model, light_model, cfg);

    std::vector<Eigen::VectorXd> coeffs(targets.size(), problems[0].initial_params());

    const Eigen::VectorXd x0 = ModelVector::pack(model0);
    Eigen::VectorXd x = x0;

    const int nb = model.basis_count();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // (a) per-target coefficient fits, warm-started.
        parallel_for(0, int64_t(targets.size()), cfg.threads, [&](int64_t i) {
            coeffs[size_t(i)] = run_fit(problems[size_t(i)], cfg, coeffs[size_t(i)]);
        });

        // (b) proximal Adam on (mean, bases): Adam handles the smooth data
        // term, the L1 drift penalty enters through soft-thresholding toward
        // the initial model so the w_upd -> infinity limit pins the model
        // exactly.
        AdamParams ap;
        ap.learning_rate = cfg.model_lr;
        Adam adam(x.size(), ap);
        Eigen::VectorXd g(x.size()), g_mean;
        Eigen::MatrixXd g_db, g_sb;
        for (int step = 0; step < cfg.model_steps; ++step) {
            g.setZero();
            for (size_t i = 0; i < problems.size(); ++i) {
                problems[i].model_gradients(coeffs[i], g_mean, g_db, g_sb);
                g.head(g_mean.size()) += g_mean;
                g.segment(g_mean.size(), g_db.size()) +=
                    Eigen::Map<const Eigen::VectorXd>(g_db.data(), g_db.size());
                g.tail(g_sb.size()) +=
                    Eigen::Map<const Eigen::VectorXd>(g_sb.data(), g_sb.size());
            }
            if (!g.allFinite()) throw numerical_error("finetune diverged: non-finite model gradient");
            adam.step(g, x);
            const Eigen::ArrayXd tau = adam.effective_rate() * cfg.w_upd;
            Eigen::ArrayXd delta = (x - x0).array();
            x = (x0.array() + delta.sign() * (delta.abs() - tau).max(0.0)).matrix();

            ModelVector::unpack(x, model);
            for (FitProblem& p : problems) p.set_model(model);
        }

        // Re-orthonormalize the diffuse block; the specular block follows the
        // same right factor so the represented family is unchanged. Warm
        // coefficients are remapped accordingly (beta' = R beta).
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(model.diffuse_bases);
        Eigen::MatrixXd q = Eigen::MatrixXd::Identity(model.diffuse_bases.rows(), nb);
        q = qr.householderQ() * q;
        Eigen::MatrixXd r =
            qr.matrixQR().topRows(nb).triangularView<Eigen::Upper>();
        for (int j = 0; j < nb; ++j)
            if (r(j, j) < 0.0) {
                q.col(j) *= -1.0;
                r.row(j) *= -1.0;
            }
        model.diffuse_bases = q;
        model.specular_bases =
            r.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(model.specular_bases);
        x = ModelVector::pack(model);

        const Eigen::VectorXd sig = model.sigmas.cwiseAbs().cwiseMax(1e-8);
        for (size_t i = 0; i < coeffs.size(); ++i) {
            Eigen::VectorXd beta = sig.cwiseProduct(coeffs[i].head(nb));
            coeffs[i].head(nb) = (r * beta).cwiseQuotient(sig);
        }
        for (FitProblem& p : problems) p.set_model(model);
    }

    // Containers store f32; keep the in-memory model bitwise consistent.
    for (Eigen::Index i = 0; i < model.mean.size(); ++i)
        model.mean[i] = double(float(model.mean[i]));
    for (Eigen::Index j = 0; j < model.diffuse_bases.cols(); ++j)
        for (Eigen::Index i = 0; i < model.diffuse_bases.rows(); ++i)
            model.diffuse_bases(i, j) = double(float(model.diffuse_bases(i, j)));
    for (Eigen::Index j = 0; j < model.specular_bases.cols(); ++j)
        for (Eigen::Index i = 0; i < model.specular_bases.rows(); ++i)
            model.specular_bases(i, j) = double(float(model.specular_bases(i, j)));
    return model;
}

}  // namespace mfr
