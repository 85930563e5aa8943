// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/lighting_model.hpp>

#include <mfr/errors.hpp>
#include <mfr/rng.hpp>
#include <mfr/serial.hpp>

#include <Eigen/SVD>

#include <cmath>

namespace mfr {

namespace {

void quantize_f32(Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = double(float(v[i]));
}

void quantize_f32(Eigen::MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = double(float(m(i, j)));
}

}  // namespace

void LightingPcaModel::check_invariants(double tolerance) const {
    const int nc = coeff_count();
    if (mean.size() != Eigen::Index(3) * nc) throw invariant_error("lighting: mean size mismatch");
    if (bases.rows() != Eigen::Index(3) * nc || bases.cols() != basis_count())
        throw invariant_error("lighting: basis shape mismatch");
    for (int ch = 0; ch < 3; ++ch)
        if (std::abs(mean[Eigen::Index(ch) * nc] - 1.0) > tolerance)
            throw invariant_error("lighting: mean band-0 coefficient differs from 1");
    Eigen::MatrixXd gram = bases.transpose() * bases;
    gram.diagonal().array() -= 1.0;
    if (gram.size() > 0 && gram.cwiseAbs().maxCoeff() > tolerance)
        throw invariant_error("lighting: bases are not orthonormal");
    for (int j = 1; j < basis_count(); ++j)
        if (sigmas[j] > sigmas[j - 1] + tolerance)
            throw invariant_error("lighting: sigmas are not nonincreasing");
}

EnvMap rotate_equirect(const EnvMap& env, int k) {
    env.validate();
    const int w = env.width();
    if (k < 0 || k >= w) throw std::invalid_argument("rotate_equirect: shift outside [0, W)");
    EnvMap out;
    out.radiance = ImageF::zeros(w, env.height(), 3);
    for (int y = 0; y < env.height(); ++y)
        for (int x = 0; x < w; ++x) {
            const int src = (x - k + w) % w;
            for (int c = 0; c < 3; ++c) out.radiance.at(y, x, c) = env.radiance.at(y, src, c);
        }
    return out;
}

ShVector normalize_sh(const ShVector& sh) {
    ShVector out = sh;
    for (int ch = 0; ch < 3; ++ch) {
        const double dc = sh.coeffs(ch, 0);
        if (!(dc > kDarkEnvironmentEps))
            throw numerical_error("normalize_sh: near-zero 0th-order coefficient (dark environment)");
        out.coeffs.row(ch) /= dc;
    }
    return out;
}

Eigen::VectorXd sh_to_vector(const ShVector& sh) {
    const int nc = sh.coeff_count();
    Eigen::VectorXd v(3 * nc);
    for (int ch = 0; ch < 3; ++ch)
        v.segment(Eigen::Index(ch) * nc, nc) = sh.coeffs.row(ch).transpose();
    return v;
}

ShVector vector_to_sh(const Eigen::VectorXd& v, int order) {
    const int nc = sh_coeff_count(order);
    if (v.size() != Eigen::Index(3) * nc)
        throw std::invalid_argument("vector_to_sh: length mismatch");
    ShVector sh = ShVector::zeros(order);
    for (int ch = 0; ch < 3; ++ch)
        sh.coeffs.row(ch) = v.segment(Eigen::Index(ch) * nc, nc).transpose();
    return sh;
}

LightingPcaModel build_lighting_pca(const std::vector<EnvMap>& envs, int rotations, int n_bases,
                                    int order) {
    if (envs.empty()) throw std::invalid_argument("build_lighting_pca: no environments");
    if (rotations < 1) throw std::invalid_argument("build_lighting_pca: rotations must be >= 1");
    const int n_samples = int(envs.size()) * rotations;
    if (n_samples < 2) throw std::invalid_argument("build_lighting_pca: needs >= 2 samples after augmentation");
    if (n_bases < 1 || n_bases > n_samples - 1)
        throw std::invalid_argument("build_lighting_pca: basis count must be in [1, samples-1]");

    const int nc = sh_coeff_count(order);
    Eigen::MatrixXd data(3 * nc, n_samples);
    int col = 0;
    for (const EnvMap& env : envs) {
        env.validate();
        for (int r = 0; r < rotations; ++r) {
            const int shift = int(int64_t(r) * env.width() / rotations);
            const EnvMap rotated = shift == 0 ? env : rotate_equirect(env, shift);
            data.col(col++) = sh_to_vector(normalize_sh(project_envmap(rotated, order)));
        }
    }

    LightingPcaModel model;
    model.order = order;
    model.mean = data.rowwise().mean();
    data.colwise() -= model.mean;

    // Normalized samples all carry exactly 1 at band 0, so these rows of the
    // centered data are zero; pin them to avoid f32 noise in the bases.
    for (int ch = 0; ch < 3; ++ch) data.row(Eigen::Index(ch) * nc).setZero();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU);
    model.bases = svd.matrixU().leftCols(n_bases);
    model.sigmas = svd.singularValues().head(n_bases) / std::sqrt(double(n_samples - 1));
    for (int ch = 0; ch < 3; ++ch) model.bases.row(Eigen::Index(ch) * nc).setZero();

    quantize_f32(model.mean);
    quantize_f32(model.bases);
    quantize_f32(model.sigmas);
    return model;
}

ShVector decode_lighting(const LightingPcaModel& model, const Eigen::VectorXd& gamma,
                         const Rgb& z) {
    if (gamma.size() != model.basis_count())
        throw std::invalid_argument("decode_lighting: gamma length mismatch");
    if (!(z > 0.0).all()) throw std::invalid_argument("decode_lighting: z must be positive");
    Eigen::VectorXd v = model.mean + model.bases * gamma;
    const int nc = model.coeff_count();
    for (int ch = 0; ch < 3; ++ch) v.segment(Eigen::Index(ch) * nc, nc) *= z[ch];
    return vector_to_sh(v, model.order);
}

EnvMap synth_envmap(int height, uint64_t seed) {
    if (height < 2) throw std::invalid_argument("synth_envmap: height must be >= 2");
    Pcg32 rng(seed, 0xe41);
    EnvMap env;
    env.radiance = ImageF::zeros(2 * height, height, 3);

    const int n_lobes = 3 + int(rng.next_below(8));  // 3..10
    struct Lobe {
        Vec3 axis;
        double kappa;
        Rgb color;
    };
    std::vector<Lobe> lobes;
    for (int i = 0; i < n_lobes; ++i) {
        const double ct = rng.uniform(-1.0, 1.0);
        const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        Lobe lobe;
        lobe.axis = Vec3(st * std::cos(phi), st * std::sin(phi), ct);
        lobe.kappa = rng.uniform(2.0, 50.0);
        lobe.color = Rgb(rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0));
        lobes.push_back(lobe);
    }
    const double ambient = rng.uniform(0.05, 0.4);

    for (int r = 0; r < height; ++r)
        for (int c = 0; c < 2 * height; ++c) {
            const Vec3 d = env.direction(r, c);
            Rgb value = Rgb::Constant(ambient);
            for (const Lobe& lobe : lobes)
                value += lobe.color * std::exp(lobe.kappa * (d.dot(lobe.axis) - 1.0));
            env.radiance.set3(r, c, value);
        }
    return env;
}

void save_lighting_model(const LightingPcaModel& model, const std::filesystem::path& path) {
    BinaryWriter out(path);
    out.write_magic("MFLM");
    out.write_u32(1);
    out.write_u32(uint32_t(model.order));
    out.write_u32(uint32_t(model.basis_count()));
    out.write_vector_f32(model.mean);
    out.write_matrix_f32(model.bases);
    out.write_vector_f32(model.sigmas);
    out.finish();
}

LightingPcaModel load_lighting_model(const std::filesystem::path& path) {
    BinaryReader in(path);
    in.expect_magic("MFLM");
    const uint32_t version = in.read_u32();
    if (version != 1) throw format_error("lighting: unsupported version in " + path.string());
    LightingPcaModel model;
    model.order = int(in.read_u32());
    const int n = int(in.read_u32());
    if (model.order < 0 || model.order > 64 || n < 1)
        throw format_error("lighting: implausible header in " + path.string());
    const int nc = model.coeff_count();
    model.mean = in.read_vector_f32(Eigen::Index(3) * nc);
    model.bases = in.read_matrix_f32(Eigen::Index(3) * nc, n);
    model.sigmas = in.read_vector_f32(n);
    in.check_crc();
    return model;
}

}  // namespace mfr
