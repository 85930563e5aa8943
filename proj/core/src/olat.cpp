// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/olat.hpp>

#include <mfr/adam.hpp>
#include <mfr/errors.hpp>
#include <mfr/nnls.hpp>
#include <mfr/parallel.hpp>
#include <mfr/pfm.hpp>
#include <mfr/png_io.hpp>
#include <mfr/rng.hpp>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mfr {

using nlohmann::json;

void CaptureRig::validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("CaptureRig: empty rig");
    auto check = [&](const ImageF& img, const char* what) {
        if (img.width != width || img.height != height || img.channels != 3)
            throw std::invalid_argument(std::string("CaptureRig: ") + what + " shape mismatch");
    };
    check(normals, "normal map");
    for (const ImageF& v : views) check(v, "view map");
    for (const ImageF& l : lights) check(l, "light map");
    if (valid.width != width || valid.height != height)
        throw std::invalid_argument("CaptureRig: valid mask shape mismatch");
    if (views.empty() || lights.empty())
        throw std::invalid_argument("CaptureRig: needs at least one view and one light");
}

void EstimationSettings::validate() const {
    if (!(reg_weight > 0.0)) throw std::invalid_argument("EstimationSettings: reg_weight <= 0");
    if (iterations < 1) throw std::invalid_argument("EstimationSettings: iterations < 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("EstimationSettings: step_size <= 0");
    if (flip_probability < 0.0 || flip_probability > 1.0)
        throw std::invalid_argument("EstimationSettings: flip_probability outside [0,1]");
    if (min_observations < 1) throw std::invalid_argument("EstimationSettings: min_observations < 1");
}

ProxyGeometry proxy_geometry_from_string(const std::string& name) {
    if (name == "hemisphere") return ProxyGeometry::hemisphere;
    if (name == "plane") return ProxyGeometry::plane;
    throw std::invalid_argument("unsupported proxy geometry: " + name);
}

std::string to_string(ProxyGeometry kind) {
    switch (kind) {
        case ProxyGeometry::hemisphere: return "hemisphere";
        case ProxyGeometry::plane: return "plane";
    }
    throw std::invalid_argument("unsupported proxy geometry kind");
}

CaptureRig make_rig(int n_views, int n_lights, int resolution, ProxyGeometry geometry,
                    uint64_t seed) {
    if (n_views < 1 || n_lights < 1) throw std::invalid_argument("make_rig: counts must be >= 1");
    if (resolution < 1) throw std::invalid_argument("make_rig: resolution must be >= 1");

    CaptureRig rig;
    rig.width = resolution;
    rig.height = resolution;
    rig.normals = ImageF::zeros(resolution, resolution, 3);
    rig.valid = Mask::zeros(resolution, resolution);

    // Hemisphere height field over [-1,1]^2; the unit-sphere normal equals
    // the surface point. The radius cap keeps rim normals estimable.
    const double max_r = 0.92;
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            switch (geometry) {
                case ProxyGeometry::hemisphere: {
                    double cx = (x + 0.5) / resolution * 2.0 - 1.0;
                    double cy = (y + 0.5) / resolution * 2.0 - 1.0;
                    double r2 = cx * cx + cy * cy;
                    if (r2 <= max_r * max_r) {
                        rig.normals.set3(y, x, Vec3(cx, cy, std::sqrt(1.0 - r2)));
                        rig.valid.at(y, x) = 1;
                    } else {
                        rig.normals.set3(y, x, Vec3(0, 0, 1));
                    }
                    break;
                }
                case ProxyGeometry::plane:
                    rig.normals.set3(y, x, Vec3(0, 0, 1));
                    rig.valid.at(y, x) = 1;
                    break;
                default:
                    throw std::invalid_argument("make_rig: unsupported geometry kind");
            }
        }
    }

    auto cone_direction = [](Pcg32& rng, int index, int count, double min_deg, double max_deg) {
        double theta = rng.uniform(min_deg * M_PI / 180.0, max_deg * M_PI / 180.0);
        double phi = 2.0 * M_PI * (index + rng.next_double()) / count;
        return Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                    std::cos(theta));
    };

    Pcg32 rng(seed, 0x71c5);
    for (int i = 0; i < n_views; ++i) {
        Vec3 v = cone_direction(rng, i, n_views, 0.0, 35.0);
        ImageF map = ImageF::zeros(resolution, resolution, 3);
        for (int p = 0; p < resolution * resolution; ++p)
            for (int c = 0; c < 3; ++c) map.data[size_t(p) * 3 + c] = float(v[c]);
        rig.views.push_back(std::move(map));
    }
    for (int j = 0; j < n_lights; ++j) {
        Vec3 l = cone_direction(rng, j, n_lights, 15.0, 50.0);
        ImageF map = ImageF::zeros(resolution, resolution, 3);
        for (int p = 0; p < resolution * resolution; ++p)
            for (int c = 0; c < 3; ++c) map.data[size_t(p) * 3 + c] = float(l[c]);
        rig.lights.push_back(std::move(map));
    }
    return rig;
}

Mask shadow_mask_convex(const CaptureRig& rig, int light_index) {
    if (light_index < 0 || light_index >= rig.n_lights())
        throw std::invalid_argument("shadow_mask_convex: light index out of range");
    Mask mask = Mask::zeros(rig.width, rig.height);
    const ImageF& lmap = rig.lights[size_t(light_index)];
    for (int y = 0; y < rig.height; ++y)
        for (int x = 0; x < rig.width; ++x)
            mask.at(y, x) =
                lmap.vec3_at(y, x).dot(rig.normals.vec3_at(y, x)) > 1e-3 ? 1 : 0;
    return mask;
}

ReflectanceMaps synth_reflectance_maps(int width, int height, int lobes, uint64_t seed,
                                       const Mask& valid) {
    if (valid.width != width || valid.height != height)
        throw std::invalid_argument("synth_reflectance_maps: mask shape mismatch");
    Pcg32 rng(seed, 0x90a7);
    ReflectanceMaps maps = ReflectanceMaps::zeros(width, height, lobes);
    maps.valid = valid;

    // A few random cosine bumps per channel keep the maps smooth and
    // positive. Every bump gets a mirrored twin so the maps are left-right
    // symmetric, consistent with the symmetric-pair coupling in estimation.
    struct Bump {
        double cx, cy, radius, amplitude;
    };
    auto draw_bumps = [&](int count) {
        std::vector<Bump> bumps;
        for (int i = 0; i < count; ++i) {
            Bump b{rng.next_double(), rng.next_double(), rng.uniform(0.15, 0.5),
                   rng.uniform(-0.25, 0.25)};
            bumps.push_back(b);
            bumps.push_back({1.0 - b.cx, b.cy, b.radius, b.amplitude});
        }
        return bumps;
    };
    auto field = [](const std::vector<Bump>& bumps, double u, double v) {
        double sum = 0.0;
        for (const Bump& b : bumps) {
            const double du = u - b.cx, dv = v - b.cy;
            const double d = std::sqrt(du * du + dv * dv) / b.radius;
            if (d < 1.0) sum += b.amplitude * 0.5 * (1.0 + std::cos(M_PI * d));
        }
        return sum;
    };

    std::vector<std::vector<Bump>> diffuse_bumps(3), weight_bumps(static_cast<size_t>(lobes));
    std::vector<double> diffuse_base(3), weight_base(static_cast<size_t>(lobes));
    for (int c = 0; c < 3; ++c) {
        diffuse_base[size_t(c)] = rng.uniform(0.35, 0.65);
        diffuse_bumps[size_t(c)] = draw_bumps(4);
    }
    for (int i = 0; i < lobes; ++i) {
        weight_base[size_t(i)] = rng.uniform(0.15, 0.35);
        weight_bumps[size_t(i)] = draw_bumps(3);
    }
    // Shininess drift: the balance between low and high exponents shifts from
    // the center column outward, so specular sharpness varies across UV while
    // staying mirror symmetric.
    const double tilt = rng.uniform(0.1, 0.25);

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5) / width, v = (y + 0.5) / height;
            for (int c = 0; c < 3; ++c) {
                double val = diffuse_base[size_t(c)] + field(diffuse_bumps[size_t(c)], u, v);
                maps.diffuse.at(y, x, c) = float(std::clamp(val, 0.05, 1.0));
            }
            const double radial = 4.0 * std::abs(u - 0.5) - 1.0;  // -1 center .. +1 edge
            for (int i = 0; i < lobes; ++i) {
                const double dir = lobes > 1 ? (2.0 * i / (lobes - 1) - 1.0) : 0.0;
                double val = weight_base[size_t(i)] + field(weight_bumps[size_t(i)], u, v) +
                             tilt * dir * radial;
                maps.weights[size_t(i)].at(y, x) = float(std::clamp(val, 0.02, 0.8));
            }
        }
    return maps;
}

OlatFrame render_olat(const ReflectanceMaps& maps, const BrdfConfig& cfg, const CaptureRig& rig,
                      int view, int light) {
    maps.validate();
    rig.validate();
    if (maps.width != rig.width || maps.height != rig.height)
        throw std::invalid_argument("render_olat: maps and rig dimensions differ");
    if (view < 0 || view >= rig.n_views() || light < 0 || light >= rig.n_lights())
        throw std::invalid_argument("render_olat: view or light index out of range");

    OlatFrame frame;
    frame.view = view;
    frame.light = light;
    frame.shadow = shadow_mask_convex(rig, light);
    frame.image = ImageF::zeros(rig.width, rig.height, 3);
    const ImageF& vmap = rig.views[size_t(view)];
    const ImageF& lmap = rig.lights[size_t(light)];
    for (int y = 0; y < rig.height; ++y) {
        for (int x = 0; x < rig.width; ++x) {
            if (!rig.valid.at(y, x) || !frame.shadow.at(y, x)) continue;
            Rgb s = shade_directional(maps.texel(y, x), cfg, rig.irradiance,
                                      lmap.vec3_at(y, x), vmap.vec3_at(y, x),
                                      rig.normals.vec3_at(y, x));
            frame.image.set3(y, x, s);
        }
    }
    return frame;
}

namespace {

// Per-observation precomputed coefficients of the linear model
//   s_ch = E_ch * (a0 * C_ch + sum_k q_k W_k),  a0 = <l,n>/pi, q_k = f_k <h,n>^p_k.
struct TexelSystem {
    int lobes = 0;
    std::vector<double> lambda;  // <l,n> loss weights
    std::vector<double> a0;
    std::vector<double> q;       // obs-major, stride = lobes
    std::vector<Rgb> target;
    std::vector<Rgb> irradiance;

    int count() const { return int(lambda.size()); }
};

TexelSystem build_system(std::span<const Observation> obs, const BrdfConfig& cfg) {
    TexelSystem sys;
    sys.lobes = cfg.lobe_count();
    const std::vector<double> f = cfg.normalization();
    for (const Observation& o : obs) {
        if (!o.lit) continue;
        const double nl = clamped_dot(o.light, o.normal);
        if (nl <= 0.0) continue;
        sys.lambda.push_back(nl);
        sys.a0.push_back(nl / M_PI);
        Vec3 sum = o.light + o.view;
        double norm = sum.norm();
        double hn = norm >= 1e-9 ? clamped_dot(Vec3(sum / norm), o.normal) : 0.0;
        for (int k = 0; k < sys.lobes; ++k)
            sys.q.push_back(f[size_t(k)] * lobe_pow(hn, cfg.exponents[size_t(k)]));
        sys.target.push_back(o.rgb);
        sys.irradiance.push_back(o.irradiance);
    }
    return sys;
}

// Weighted design matrix (rows scaled by sqrt(lambda)) and right-hand side,
// unknowns ordered [C_r, C_g, C_b, W_1..W_k].
void build_design(const TexelSystem& sys, Eigen::MatrixXd& A, Eigen::VectorXd& b) {
    const int k = sys.lobes;
    A.setZero(3 * sys.count(), 3 + k);
    b.resize(3 * sys.count());
    for (int i = 0; i < sys.count(); ++i) {
        const double w = std::sqrt(sys.lambda[size_t(i)]);
        for (int ch = 0; ch < 3; ++ch) {
            const int row = 3 * i + ch;
            const double e = sys.irradiance[size_t(i)][ch];
            A(row, ch) = w * e * sys.a0[size_t(i)];
            for (int j = 0; j < k; ++j) A(row, 3 + j) = w * e * sys.q[size_t(i) * k + j];
            b[row] = w * sys.target[size_t(i)][ch];
        }
    }
}

double design_condition(const Eigen::MatrixXd& A) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[sv.size() - 1] <= 0.0) return std::numeric_limits<double>::infinity();
    return sv[0] / sv[sv.size() - 1];
}

// Weighted-L1 reconstruction loss plus negativity penalty at x.
double l1_objective(const TexelSystem& sys, const Eigen::VectorXd& x, double reg_weight) {
    const int k = sys.lobes;
    double loss = 0.0;
    for (int i = 0; i < sys.count(); ++i) {
        double qw = 0.0;
        for (int j = 0; j < k; ++j) qw += sys.q[size_t(i) * k + j] * x[3 + j];
        double term = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            const double shat =
                sys.irradiance[size_t(i)][ch] * (sys.a0[size_t(i)] * x[ch] + qw);
            term += std::abs(shat - sys.target[size_t(i)][ch]);
        }
        loss += sys.lambda[size_t(i)] * term;
    }
    for (int j = 0; j < 3 + k; ++j) loss += reg_weight * std::max(0.0, -x[j]);
    return loss;
}

// Subgradient of l1_objective; sign(0) = 0. The negativity masks are
// recomputed every call, i.e. every iteration.
void l1_gradient(const TexelSystem& sys, const Eigen::VectorXd& x, double reg_weight,
                 Eigen::VectorXd& grad) {
    const int k = sys.lobes;
    grad.setZero(3 + k);
    for (int i = 0; i < sys.count(); ++i) {
        double qw = 0.0;
        const double* qi = &sys.q[size_t(i) * k];
        for (int j = 0; j < k; ++j) qw += qi[j] * x[3 + j];
        double tsum = 0.0;
        const double lam = sys.lambda[size_t(i)];
        for (int ch = 0; ch < 3; ++ch) {
            const double e = sys.irradiance[size_t(i)][ch];
            const double r = e * (sys.a0[size_t(i)] * x[ch] + qw) - sys.target[size_t(i)][ch];
            const double s = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
            grad[ch] += lam * s * e * sys.a0[size_t(i)];
            tsum += s * e;
        }
        for (int j = 0; j < k; ++j) grad[3 + j] += lam * tsum * qi[j];
    }
    for (int j = 0; j < 3 + k; ++j)
        if (x[j] < 0.0) grad[j] -= reg_weight;
}

// Adam on one texel or on a mirrored pair treated as one unit. In pair mode
// an iteration swaps the observation sets with probability flip_probability,
// which couples the two texels through the symmetry prior.
void solve_adam(const TexelSystem& sa, const TexelSystem* sb, const EstimationSettings& settings,
                Pcg32* rng, Eigen::VectorXd& xa, Eigen::VectorXd& xb) {
    const int n = int(xa.size());
    const bool pair = sb != nullptr;
    Eigen::VectorXd x(pair ? 2 * n : n);
    x.head(n) = xa;
    if (pair) x.tail(n) = xb;

    AdamParams params;
    params.learning_rate = settings.step_size;
    Adam adam(x.size(), params);
    Eigen::VectorXd grad(x.size()), ga(n), gb(n);

    for (int it = 0; it < settings.iterations; ++it) {
        bool flipped = false;
        if (pair && settings.flip_probability > 0.0)
            flipped = rng->next_double() < settings.flip_probability;

        Eigen::VectorXd head = x.head(n);
        if (!pair) {
            l1_gradient(sa, head, settings.reg_weight, ga);
            grad = ga;
        } else {
            Eigen::VectorXd tail = x.tail(n);
            l1_gradient(flipped ? *sb : sa, head, settings.reg_weight, ga);
            l1_gradient(flipped ? sa : *sb, tail, settings.reg_weight, gb);
            grad.head(n) = ga;
            grad.tail(n) = gb;
        }
        // Linear decay settles the iterates instead of chattering at the
        // kink of the L1 loss.
        const double lr_scale = 1.0 - double(it) / double(settings.iterations);
        adam.step(grad, x, lr_scale);
    }
    xa = x.head(n);
    if (pair) xb = x.tail(n);
}

TexelEstimate finalize_estimate(const TexelSystem& sys, const Eigen::VectorXd& x,
                                const EstimationSettings& settings, double condition) {
    TexelEstimate est;
    est.texel.diffuse = Rgb(x[0], x[1], x[2]);
    est.texel.weights = x.tail(x.size() - 3);
    est.condition = condition;
    est.ill_conditioned = !(condition < kIllConditionThreshold);
    est.valid = !est.ill_conditioned;
    est.objective = l1_objective(sys, x, settings.reg_weight);
    est.observation_count = sys.count();
    return est;
}

}  // namespace

TexelEstimate estimate_texel(std::span<const Observation> obs, const BrdfConfig& cfg,
                             const EstimationSettings& settings) {
    cfg.validate();
    settings.validate();
    TexelSystem sys = build_system(obs, cfg);
    if (sys.count() < settings.min_observations) {
        TexelEstimate est;
        est.texel = ReflectanceTexel::zeros(cfg.lobe_count());
        est.observation_count = sys.count();
        return est;
    }
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    build_design(sys, A, b);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(3 + cfg.lobe_count()), unused;
    solve_adam(sys, nullptr, settings, nullptr, x, unused);
    return finalize_estimate(sys, x, settings, design_condition(A));
}

TexelEstimate nnls_texel(std::span<const Observation> obs, const BrdfConfig& cfg,
                         const EstimationSettings& settings) {
    cfg.validate();
    settings.validate();
    TexelSystem sys = build_system(obs, cfg);
    if (sys.count() < settings.min_observations) {
        TexelEstimate est;
        est.texel = ReflectanceTexel::zeros(cfg.lobe_count());
        est.observation_count = sys.count();
        return est;
    }
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    build_design(sys, A, b);
    const double condition = design_condition(A);

    Eigen::VectorXd x;
    if (condition < kIllConditionThreshold) {
        x = nnls(A, b).x;
    } else {
        // Rank deficient: a tiny ridge selects the minimum-norm feasible
        // solution among the least-squares optima.
        const int n = int(A.cols());
        const double ridge = 1e-7 * std::max(1.0, A.cwiseAbs().maxCoeff());
        Eigen::MatrixXd Ar(A.rows() + n, n);
        Eigen::VectorXd br = Eigen::VectorXd::Zero(A.rows() + n);
        Ar.topRows(A.rows()) = A;
        Ar.bottomRows(n) = ridge * Eigen::MatrixXd::Identity(n, n);
        br.head(A.rows()) = b;
        x = nnls(Ar, br).x;
    }
    return finalize_estimate(sys, x, settings, condition);
}

namespace {

TexelSystem gather_system(const std::vector<const OlatFrame*>& frame_grid, const CaptureRig& rig,
                          const BrdfConfig& cfg, int y, int x) {
    std::vector<Observation> obs;
    obs.reserve(frame_grid.size());
    for (const OlatFrame* f : frame_grid) {
        Observation o;
        o.rgb = f->image.rgb_at(y, x).cast<double>();
        o.light = rig.lights[size_t(f->light)].vec3_at(y, x);
        o.view = rig.views[size_t(f->view)].vec3_at(y, x);
        o.normal = rig.normals.vec3_at(y, x);
        o.lit = f->shadow.at(y, x) != 0;
        o.irradiance = rig.irradiance;
        obs.push_back(o);
    }
    return build_system(obs, cfg);
}

}  // namespace

ReflectanceMaps estimate_maps(const std::vector<OlatFrame>& frames, const CaptureRig& rig,
                              const BrdfConfig& cfg, const EstimationSettings& settings,
                              EstimationDiagnostics* diagnostics) {
    cfg.validate();
    settings.validate();
    rig.validate();

    // Every (view, light) combination must be present exactly once.
    std::vector<const OlatFrame*> frame_grid(size_t(rig.n_views()) * rig.n_lights(), nullptr);
    for (const OlatFrame& f : frames) {
        if (f.view < 0 || f.view >= rig.n_views() || f.light < 0 || f.light >= rig.n_lights())
            throw std::invalid_argument("estimate_maps: frame indices outside the rig");
        if (!f.image.same_shape(rig.normals) || f.shadow.width != rig.width)
            throw std::invalid_argument("estimate_maps: frame dimensions differ from rig");
        frame_grid[size_t(f.view) * rig.n_lights() + f.light] = &f;
    }
    for (const OlatFrame* f : frame_grid)
        if (!f) throw std::invalid_argument("estimate_maps: frames do not cover the rig");

    const int W = rig.width, H = rig.height;
    const int k = cfg.lobe_count();
    ReflectanceMaps maps = ReflectanceMaps::zeros(W, H, k);

    EstimationDiagnostics local;
    EstimationDiagnostics& diag = diagnostics ? *diagnostics : local;
    diag.condition = ImageF::zeros(W, H, 1);
    diag.objective = ImageF::zeros(W, H, 1);
    diag.solved = Mask::zeros(W, H);
    diag.ill_conditioned = Mask::zeros(W, H);

    // Mirrored columns are estimated as one unit so the symmetry coupling
    // stays deterministic under any parallel schedule.
    struct PairTask {
        int y, xl, xr;  // xl <= xr, xl == xr on the center column
    };
    std::vector<PairTask> tasks;
    for (int y = 0; y < H; ++y)
        for (int xl = 0; xl <= (W - 1) / 2; ++xl) tasks.push_back({y, xl, W - 1 - xl});

    auto solve_one = [&](const TexelSystem& sys, int y, int x) {
        if (sys.count() < settings.min_observations) return;
        Eigen::MatrixXd A;
        Eigen::VectorXd b;
        build_design(sys, A, b);
        TexelEstimate est;
        if (settings.solver == Solver::nnls) {
            const double condition = design_condition(A);
            Eigen::VectorXd x6;
            if (condition < kIllConditionThreshold) {
                x6 = nnls(A, b).x;
            } else {
                const int n = int(A.cols());
                const double ridge = 1e-7 * std::max(1.0, A.cwiseAbs().maxCoeff());
                Eigen::MatrixXd Ar(A.rows() + n, n);
                Eigen::VectorXd br = Eigen::VectorXd::Zero(A.rows() + n);
                Ar.topRows(A.rows()) = A;
                Ar.bottomRows(n) = ridge * Eigen::MatrixXd::Identity(n, n);
                br.head(A.rows()) = b;
                x6 = nnls(Ar, br).x;
            }
            est = finalize_estimate(sys, x6, settings, condition);
        } else {
            Eigen::VectorXd x6 = Eigen::VectorXd::Zero(3 + k), unused;
            solve_adam(sys, nullptr, settings, nullptr, x6, unused);
            est = finalize_estimate(sys, x6, settings, design_condition(A));
        }
        maps.set_texel(y, x, est.texel);
        diag.condition.at(y, x) = float(est.condition);
        diag.objective.at(y, x) = float(est.objective);
        diag.solved.at(y, x) = 1;
        diag.ill_conditioned.at(y, x) = est.ill_conditioned ? 1 : 0;
    };

    parallel_for(0, int64_t(tasks.size()), settings.threads, [&](int64_t ti) {
        const PairTask& task = tasks[size_t(ti)];
        const int y = task.y;
        const bool left_valid = rig.valid.at(y, task.xl) != 0;
        const bool right_valid = task.xr != task.xl && rig.valid.at(y, task.xr) != 0;

        TexelSystem sl, sr;
        if (left_valid) sl = gather_system(frame_grid, rig, cfg, y, task.xl);
        if (right_valid) sr = gather_system(frame_grid, rig, cfg, y, task.xr);

        const bool couple = settings.solver == Solver::adam && settings.flip_probability > 0.0 &&
                            left_valid && right_valid &&
                            sl.count() >= settings.min_observations &&
                            sr.count() >= settings.min_observations;
        if (couple) {
            Eigen::MatrixXd Al, Ar;
            Eigen::VectorXd bl, br;
            build_design(sl, Al, bl);
            build_design(sr, Ar, br);
            Pcg32 rng(settings.seed, uint64_t(y) * uint64_t(W) + uint64_t(task.xl));
            Eigen::VectorXd xl6 = Eigen::VectorXd::Zero(3 + k);
            Eigen::VectorXd xr6 = Eigen::VectorXd::Zero(3 + k);
            solve_adam(sl, &sr, settings, &rng, xl6, xr6);
            TexelEstimate el = finalize_estimate(sl, xl6, settings, design_condition(Al));
            TexelEstimate er = finalize_estimate(sr, xr6, settings, design_condition(Ar));
            maps.set_texel(y, task.xl, el.texel);
            maps.set_texel(y, task.xr, er.texel);
            diag.condition.at(y, task.xl) = float(el.condition);
            diag.condition.at(y, task.xr) = float(er.condition);
            diag.objective.at(y, task.xl) = float(el.objective);
            diag.objective.at(y, task.xr) = float(er.objective);
            diag.solved.at(y, task.xl) = diag.solved.at(y, task.xr) = 1;
            diag.ill_conditioned.at(y, task.xl) = el.ill_conditioned ? 1 : 0;
            diag.ill_conditioned.at(y, task.xr) = er.ill_conditioned ? 1 : 0;
        } else {
            if (left_valid) solve_one(sl, y, task.xl);
            if (right_valid) solve_one(sr, y, task.xr);
        }
    });

    // Good = solved and well conditioned; those texels define the output
    // mask. Everything else inherits the mirror estimate when good, else the
    // per-map mean over good texels.
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            maps.valid.at(y, x) =
                (diag.solved.at(y, x) && !diag.ill_conditioned.at(y, x)) ? 1 : 0;

    Rgb dmean = Rgb::Zero();
    Eigen::VectorXd wmean = Eigen::VectorXd::Zero(k);
    size_t n_good = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!maps.valid.at(y, x)) continue;
            ReflectanceTexel t = maps.texel(y, x);
            dmean += t.diffuse;
            wmean += t.weights;
            ++n_good;
        }
    if (n_good > 0) {
        dmean /= double(n_good);
        wmean /= double(n_good);
        ReflectanceTexel mean_texel;
        mean_texel.diffuse = dmean;
        mean_texel.weights = wmean;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (maps.valid.at(y, x)) continue;
                const int xm = W - 1 - x;
                if (maps.valid.at(y, xm))
                    maps.set_texel(y, x, maps.texel(y, xm));
                else
                    maps.set_texel(y, x, mean_texel);
            }
    }
    return maps;
}

std::pair<Eigen::Matrix3d, Vec3> camera_from_pose(const Eigen::Matrix3d& rotation,
                                                  const Vec3& translation) {
    if ((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm() > 1e-6 ||
        rotation.determinant() < 0.0)
        throw std::invalid_argument("camera_from_pose: not a rotation matrix");
    Eigen::Matrix3d r_cam = rotation.transpose();
    return {r_cam, Vec3(-r_cam * translation)};
}

namespace {

std::string index_name(const char* prefix, int i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d%s", prefix, i, ext);
    return buf;
}

std::string frame_name(const char* prefix, int v, int l, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_v%03d_l%03d%s", prefix, v, l, ext);
    return buf;
}

}  // namespace

void save_olat_set(const std::filesystem::path& dir, const OlatSet& set) {
    set.rig.validate();
    set.cfg.validate();
    std::filesystem::create_directories(dir);

    json manifest;
    manifest["schema"] = "mfr.olat/1";
    manifest["width"] = set.rig.width;
    manifest["height"] = set.rig.height;
    manifest["exponents"] = set.cfg.exponents;
    manifest["irradiance"] = {set.rig.irradiance[0], set.rig.irradiance[1], set.rig.irradiance[2]};
    manifest["geometry"] = set.geometry;
    manifest["seed"] = set.seed;

    manifest["files"]["normals"] = "normals.pfm";
    manifest["files"]["valid"] = "valid.png";
    write_pfm(dir / "normals.pfm", set.rig.normals);
    write_mask_png(dir / "valid.png", set.rig.valid);

    std::vector<std::string> view_files, light_files;
    for (int i = 0; i < set.rig.n_views(); ++i) {
        view_files.push_back(index_name("view", i, ".pfm"));
        write_pfm(dir / view_files.back(), set.rig.views[size_t(i)]);
    }
    for (int j = 0; j < set.rig.n_lights(); ++j) {
        light_files.push_back(index_name("light", j, ".pfm"));
        write_pfm(dir / light_files.back(), set.rig.lights[size_t(j)]);
    }
    manifest["files"]["views"] = view_files;
    manifest["files"]["lights"] = light_files;

    json frames = json::array();
    for (const OlatFrame& f : set.frames) {
        json entry;
        entry["view"] = f.view;
        entry["light"] = f.light;
        entry["image"] = frame_name("frame", f.view, f.light, ".pfm");
        entry["shadow"] = frame_name("shadow", f.view, f.light, ".png");
        write_pfm(dir / entry["image"].get<std::string>(), f.image);
        write_mask_png(dir / entry["shadow"].get<std::string>(), f.shadow);
        frames.push_back(entry);
    }
    manifest["files"]["frames"] = frames;

    if (set.ground_truth) {
        manifest["ground_truth"] = "gt";
        set.ground_truth->save_dir(dir / "gt");
    }

    std::ofstream out(dir / "rig.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw format_error("olat: cannot write manifest in " + dir.string());
}

OlatSet load_olat_set(const std::filesystem::path& dir) {
    std::ifstream in(dir / "rig.json");
    if (!in) throw format_error("olat: missing rig.json in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("olat: bad manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("schema", "") != "mfr.olat/1")
        throw format_error("olat: unsupported manifest schema in " + dir.string());

    OlatSet set;
    set.cfg.exponents = manifest.at("exponents").get<std::vector<double>>();
    set.geometry = manifest.value("geometry", "hemisphere");
    set.seed = manifest.value("seed", uint64_t(0));
    set.rig.width = manifest.at("width").get<int>();
    set.rig.height = manifest.at("height").get<int>();
    auto irr = manifest.at("irradiance").get<std::vector<double>>();
    if (irr.size() != 3) throw format_error("olat: irradiance must have 3 entries");
    set.rig.irradiance = Rgb(irr[0], irr[1], irr[2]);

    const json& files = manifest.at("files");
    set.rig.normals = read_pfm(dir / files.at("normals").get<std::string>());
    set.rig.valid = read_mask_png(dir / files.at("valid").get<std::string>());
    for (const auto& f : files.at("views")) set.rig.views.push_back(read_pfm(dir / f.get<std::string>()));
    for (const auto& f : files.at("lights")) set.rig.lights.push_back(read_pfm(dir / f.get<std::string>()));
    set.rig.validate();

    for (const auto& entry : files.at("frames")) {
        OlatFrame frame;
        frame.view = entry.at("view").get<int>();
        frame.light = entry.at("light").get<int>();
        frame.image = read_pfm(dir / entry.at("image").get<std::string>());
        frame.shadow = read_mask_png(dir / entry.at("shadow").get<std::string>());
        if (!frame.image.same_shape(set.rig.normals))
            throw format_error("olat: frame dimensions differ from rig in " + dir.string());
        set.frames.push_back(std::move(frame));
    }

    if (manifest.contains("ground_truth"))
        set.ground_truth = ReflectanceMaps::load_dir(dir / manifest.at("ground_truth").get<std::string>());
    return set;
}

}  // namespace mfr
