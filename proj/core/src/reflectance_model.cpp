// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/reflectance_model.hpp>

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

void MorphableReflectanceModel::check_invariants(double tolerance) const {
    const int v = texel_count();
    const int k = cfg.lobe_count();
    const int n = basis_count();
    if (v < 1 || n < 1) throw invariant_error("model: empty model");
    if (mean.size() != Eigen::Index((3 + k) * v)) throw invariant_error("model: mean size mismatch");
    if (diffuse_bases.rows() != Eigen::Index(3 * v) || diffuse_bases.cols() != n)
        throw invariant_error("model: diffuse basis shape mismatch");
    if (specular_bases.rows() != Eigen::Index(k * v) || specular_bases.cols() != n)
        throw invariant_error("model: specular basis shape mismatch");

    Eigen::MatrixXd gram = diffuse_bases.transpose() * diffuse_bases;
    gram.diagonal().array() -= 1.0;
    if (gram.cwiseAbs().maxCoeff() > tolerance)
        throw invariant_error("model: diffuse bases are not orthonormal");

    for (int j = 1; j < n; ++j)
        if (sigmas[j] > sigmas[j - 1] + tolerance)
            throw invariant_error("model: sigmas are not nonincreasing");
    if (sigmas.minCoeff() < -tolerance) throw invariant_error("model: negative sigma");
}

Eigen::VectorXd diffuse_vector(const ReflectanceMaps& maps) {
    const int v = maps.width * maps.height;
    Eigen::VectorXd out(3 * v);
    for (int t = 0; t < v; ++t) {
        const int y = t / maps.width, x = t % maps.width;
        for (int ch = 0; ch < 3; ++ch) out[3 * t + ch] = double(maps.diffuse.at(y, x, ch));
    }
    return out;
}

Eigen::VectorXd weights_vector(const ReflectanceMaps& maps) {
    const int v = maps.width * maps.height;
    const int k = maps.lobe_count();
    Eigen::VectorXd out(k * v);
    for (int t = 0; t < v; ++t) {
        const int y = t / maps.width, x = t % maps.width;
        for (int i = 0; i < k; ++i) out[k * t + i] = double(maps.weights[size_t(i)].at(y, x));
    }
    return out;
}

ReflectanceMaps maps_from_vectors(int width, int height, int lobes,
                                  const Eigen::VectorXd& diffuse, const Eigen::VectorXd& weights) {
    ReflectanceMaps maps = ReflectanceMaps::zeros(width, height, lobes);
    const int v = width * height;
    if (diffuse.size() != 3 * v || weights.size() != Eigen::Index(lobes) * v)
        throw std::invalid_argument("maps_from_vectors: block sizes mismatch");
    for (int t = 0; t < v; ++t) {
        const int y = t / width, x = t % width;
        for (int ch = 0; ch < 3; ++ch) maps.diffuse.at(y, x, ch) = float(diffuse[3 * t + ch]);
        for (int i = 0; i < lobes; ++i) maps.weights[size_t(i)].at(y, x) = float(weights[lobes * t + i]);
    }
    maps.valid = Mask::ones(width, height);
    return maps;
}

MorphableReflectanceModel build_model(const std::vector<ReflectanceMaps>& samples, int n_bases) {
    const int n_samples = int(samples.size());
    if (n_samples < 2) throw std::invalid_argument("build_model: needs at least 2 samples");
    const int w = samples[0].width, h = samples[0].height, k = samples[0].lobe_count();
    for (const ReflectanceMaps& s : samples) {
        s.validate();
        if (s.width != w || s.height != h || s.lobe_count() != k)
            throw std::invalid_argument("build_model: samples disagree in shape");
    }
    if (n_bases < 1 || n_bases > n_samples - 1)
        throw std::invalid_argument("build_model: basis count must be in [1, samples-1]");

    const int v = w * h;

    // Texels valid in every sample take part in the PCA.
    std::vector<int> common;
    for (int t = 0; t < v; ++t) {
        const int y = t / w, x = t % w;
        bool all = true;
        for (const ReflectanceMaps& s : samples) all = all && s.valid.at(y, x);
        if (all) common.push_back(t);
    }
    if (common.empty()) throw std::invalid_argument("build_model: no commonly valid texels");

    Eigen::MatrixXd d_full(3 * v, n_samples), s_full(k * v, n_samples);
    for (int j = 0; j < n_samples; ++j) {
        d_full.col(j) = diffuse_vector(samples[size_t(j)]);
        s_full.col(j) = weights_vector(samples[size_t(j)]);
    }
    const Eigen::VectorXd d_mean = d_full.rowwise().mean();
    const Eigen::VectorXd s_mean = s_full.rowwise().mean();
    d_full.colwise() -= d_mean;
    s_full.colwise() -= s_mean;

    // Reduced row sets for the SVD.
    Eigen::MatrixXd dc(3 * common.size(), n_samples), sc(k * common.size(), n_samples);
    for (size_t ci = 0; ci < common.size(); ++ci) {
        dc.middleRows(Eigen::Index(3 * ci), 3) = d_full.middleRows(Eigen::Index(3) * common[ci], 3);
        sc.middleRows(Eigen::Index(k) * Eigen::Index(ci), k) =
            s_full.middleRows(Eigen::Index(k) * common[ci], k);
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(dc, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();

    MorphableReflectanceModel model;
    model.width = w;
    model.height = h;
    model.cfg.exponents.assign(size_t(k), 0.0);
    model.mean.resize((3 + k) * v);
    model.mean << d_mean, s_mean;
    model.diffuse_bases = Eigen::MatrixXd::Zero(3 * v, n_bases);
    model.specular_bases = Eigen::MatrixXd::Zero(Eigen::Index(k) * v, n_bases);
    model.sigmas.resize(n_bases);

    const double sv_floor = std::max(1e-12, 1e-10 * sv[0]);
    for (int j = 0; j < n_bases; ++j) {
        const Eigen::VectorXd u = svd.matrixU().col(j);
        for (size_t ci = 0; ci < common.size(); ++ci)
            model.diffuse_bases.block(Eigen::Index(3) * common[ci], j, 3, 1) =
                u.segment(Eigen::Index(3 * ci), 3);
        model.sigmas[j] = sv[j] / std::sqrt(double(n_samples - 1));

        // Specular transfer: basis j is the centered specular data under the
        // same training-sample combination, column j of V * Sigma^-1.
        if (sv[j] > sv_floor) {
            const Eigen::VectorXd comb = svd.matrixV().col(j) / sv[j];
            const Eigen::VectorXd sj = sc * comb;
            for (size_t ci = 0; ci < common.size(); ++ci)
                model.specular_bases.block(Eigen::Index(k) * common[ci], j, k, 1) =
                    sj.segment(Eigen::Index(k) * Eigen::Index(ci), k);
        }
    }

    quantize_f32(model.mean);
    quantize_f32(model.diffuse_bases);
    quantize_f32(model.specular_bases);
    quantize_f32(model.sigmas);
    return model;
}

ReflectanceMaps reconstruct(const MorphableReflectanceModel& model, const Eigen::VectorXd& beta) {
    if (beta.size() != model.basis_count())
        throw std::invalid_argument("reconstruct: coefficient length mismatch");
    const Eigen::VectorXd d = model.mean_diffuse() + model.diffuse_bases * beta;
    const Eigen::VectorXd s = model.mean_weights() + model.specular_bases * beta;
    return maps_from_vectors(model.width, model.height, model.cfg.lobe_count(), d, s);
}

Eigen::VectorXd project_coeffs(const MorphableReflectanceModel& model,
                               const ReflectanceMaps& maps) {
    if (maps.width != model.width || maps.height != model.height ||
        maps.lobe_count() != model.cfg.lobe_count())
        throw std::invalid_argument("project_coeffs: maps shape mismatch");
    return model.diffuse_bases.transpose() * (diffuse_vector(maps) - model.mean_diffuse());
}

ReflectanceMaps sample_model(const MorphableReflectanceModel& model, uint64_t seed, double scale) {
    if (!(scale >= 0.0)) throw std::invalid_argument("sample_model: scale must be >= 0");
    Pcg32 rng(seed, 0x5a17);
    Eigen::VectorXd beta(model.basis_count());
    for (int j = 0; j < model.basis_count(); ++j) beta[j] = rng.normal() * scale * model.sigmas[j];
    return reconstruct(model, beta);
}

ReflectanceMaps clamp_negative(const ReflectanceMaps& maps) {
    ReflectanceMaps out = maps;
    for (float& f : out.diffuse.data) f = std::max(0.0f, f);
    for (ImageF& w : out.weights)
        for (float& f : w.data) f = std::max(0.0f, f);
    return out;
}

void save_model(const MorphableReflectanceModel& model, const std::filesystem::path& path) {
    const int v = model.texel_count();
    const int k = model.cfg.lobe_count();
    BinaryWriter out(path);
    out.write_magic("MFRM");
    out.write_u32(1);
    out.write_u32(uint32_t(model.height));
    out.write_u32(uint32_t(model.width));
    out.write_u32(uint32_t(k));
    out.write_u32(uint32_t(model.basis_count()));
    for (double p : model.cfg.exponents) out.write_f64(p);
    (void)v;
    out.write_vector_f32(model.mean);
    out.write_matrix_f32(model.diffuse_bases);
    out.write_matrix_f32(model.specular_bases);
    out.write_vector_f32(model.sigmas);
    out.finish();
}

MorphableReflectanceModel load_model(const std::filesystem::path& path) {
    BinaryReader in(path);
    in.expect_magic("MFRM");
    const uint32_t version = in.read_u32();
    if (version != 1) throw format_error("model: unsupported version in " + path.string());
    MorphableReflectanceModel model;
    model.height = int(in.read_u32());
    model.width = int(in.read_u32());
    const int k = int(in.read_u32());
    const int n = int(in.read_u32());
    if (model.height < 1 || model.width < 1 || k < 1 || n < 1 ||
        int64_t(model.width) * model.height > (int64_t(1) << 28))
        throw format_error("model: implausible header in " + path.string());
    model.cfg.exponents.resize(size_t(k));
    for (double& p : model.cfg.exponents) p = in.read_f64();
    const int v = model.texel_count();
    model.mean = in.read_vector_f32(Eigen::Index(3 + k) * v);
    model.diffuse_bases = in.read_matrix_f32(Eigen::Index(3) * v, n);
    model.specular_bases = in.read_matrix_f32(Eigen::Index(k) * v, n);
    model.sigmas = in.read_vector_f32(n);
    in.check_crc();
    return model;
}

}  // namespace mfr
