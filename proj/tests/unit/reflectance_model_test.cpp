// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/errors.hpp>
#include <mfr/olat.hpp>
#include <mfr/reflectance_model.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mfr;
namespace fs = std::filesystem;

namespace {

std::vector<ReflectanceMaps> make_samples(int count, int res, uint64_t seed) {
    std::vector<ReflectanceMaps> samples;
    Mask valid = Mask::ones(res, res);
    for (int i = 0; i < count; ++i)
        samples.push_back(synth_reflectance_maps(res, res, 3, seed + uint64_t(i), valid));
    return samples;
}

double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace

TEST_CASE("duplicate samples give the mean with vanishing sigmas") {
    auto samples = make_samples(1, 8, 3);
    samples.push_back(samples[0]);
    MorphableReflectanceModel model = build_model(samples, 1);
    CHECK(model.sigmas[0] < 1e-6);
    CHECK(rel_diff(model.mean_diffuse(), diffuse_vector(samples[0])) < 1e-6);
    CHECK(rel_diff(model.mean_weights(), weights_vector(samples[0])) < 1e-6);
}

TEST_CASE("full-rank model reconstructs every training sample") {
    auto samples = make_samples(6, 10, 11);
    MorphableReflectanceModel model = build_model(samples, 5);
    model.cfg.exponents = {1.0, 8.0, 64.0};
    model.check_invariants();

    for (const ReflectanceMaps& s : samples) {
        Eigen::VectorXd beta = project_coeffs(model, s);
        ReflectanceMaps rec = reconstruct(model, beta);
        CHECK(rel_diff(diffuse_vector(rec), diffuse_vector(s)) < 1e-4);
        // Specular transfer preserves the training correspondence at full rank.
        CHECK(rel_diff(weights_vector(rec), weights_vector(s)) < 1e-3);
    }
}

TEST_CASE("diffuse bases are orthonormal and sigmas ordered") {
    auto samples = make_samples(7, 9, 23);
    MorphableReflectanceModel model = build_model(samples, 4);
    Eigen::MatrixXd gram = model.diffuse_bases.transpose() * model.diffuse_bases;
    gram.diagonal().array() -= 1.0;
    CHECK(gram.cwiseAbs().maxCoeff() < 1e-6);
    for (int j = 1; j < model.basis_count(); ++j) CHECK(model.sigmas[j] <= model.sigmas[j - 1] + 1e-9);
}

TEST_CASE("mean-centering: centered columns sum to zero") {
    auto samples = make_samples(5, 8, 31);
    const int n = int(samples.size());
    Eigen::MatrixXd data(3 * 64, n);
    for (int j = 0; j < n; ++j) data.col(j) = diffuse_vector(samples[size_t(j)]);
    Eigen::VectorXd mean = data.rowwise().mean();
    data.colwise() -= mean;
    CHECK(data.rowwise().sum().cwiseAbs().maxCoeff() < 1e-6 * n);
}

TEST_CASE("project_coeffs") {
    auto samples = make_samples(6, 8, 41);
    MorphableReflectanceModel model = build_model(samples, 5);

    SUBCASE("the mean projects to zero") {
        ReflectanceMaps mean_maps = reconstruct(model, Eigen::VectorXd::Zero(5));
        CHECK(project_coeffs(model, mean_maps).cwiseAbs().maxCoeff() < 1e-4);
    }

    SUBCASE("reconstruct then project returns the coefficients") {
        Eigen::VectorXd beta(5);
        beta << 0.3, -0.2, 0.1, 0.05, -0.04;
        Eigen::VectorXd back = project_coeffs(model, reconstruct(model, beta));
        CHECK((back - beta).cwiseAbs().maxCoeff() < 1e-5);
    }

    SUBCASE("perturbations orthogonal to the diffuse span do not move beta") {
        Eigen::VectorXd beta(5);
        beta << 0.2, 0.1, 0.0, -0.1, 0.3;
        ReflectanceMaps maps = reconstruct(model, beta);
        // Construct a vector orthogonal to all diffuse bases.
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(model.diffuse_bases.rows());
        dir[0] = 1.0;
        dir -= model.diffuse_bases * (model.diffuse_bases.transpose() * dir);
        Eigen::VectorXd perturbed = diffuse_vector(maps) + 0.05 * dir;
        ReflectanceMaps maps2 =
            maps_from_vectors(model.width, model.height, 3, perturbed, weights_vector(maps));
        Eigen::VectorXd b2 = project_coeffs(model, maps2);
        CHECK((b2 - beta).cwiseAbs().maxCoeff() < 1e-5);
    }

    SUBCASE("dimension mismatch throws") {
        ReflectanceMaps wrong = ReflectanceMaps::zeros(4, 4, 3);
        CHECK_THROWS_AS(project_coeffs(model, wrong), std::invalid_argument);
    }
}

TEST_CASE("diffuse block is independent of the specular bases") {
    auto samples = make_samples(5, 8, 47);
    MorphableReflectanceModel model = build_model(samples, 4);
    Eigen::VectorXd beta(4);
    beta << 0.4, -0.3, 0.2, 0.1;
    ReflectanceMaps with_spec = reconstruct(model, beta);
    MorphableReflectanceModel stripped = model;
    stripped.specular_bases.setZero();
    ReflectanceMaps without_spec = reconstruct(stripped, beta);
    CHECK(with_spec.diffuse == without_spec.diffuse);
}

TEST_CASE("reconstruct is affine and symmetric about the mean") {
    auto samples = make_samples(5, 8, 53);
    MorphableReflectanceModel model = build_model(samples, 4);
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(4);
    e1[1] = model.sigmas[1];
    ReflectanceMaps plus = reconstruct(model, e1);
    ReflectanceMaps minus = reconstruct(model, Eigen::VectorXd(-e1));
    ReflectanceMaps mean = reconstruct(model, Eigen::VectorXd::Zero(4));
    for (size_t i = 0; i < mean.diffuse.data.size(); ++i) {
        const double up = double(plus.diffuse.data[i]) - double(mean.diffuse.data[i]);
        const double down = double(mean.diffuse.data[i]) - double(minus.diffuse.data[i]);
        CHECK(up == doctest::Approx(down).epsilon(1e-5).scale(1.0));
    }
    CHECK_THROWS_AS(reconstruct(model, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("sample_model") {
    auto samples = make_samples(6, 8, 61);
    MorphableReflectanceModel model = build_model(samples, 5);

    SUBCASE("scale zero returns the mean") {
        ReflectanceMaps s = sample_model(model, 123, 0.0);
        ReflectanceMaps mean = reconstruct(model, Eigen::VectorXd::Zero(5));
        CHECK(s.diffuse == mean.diffuse);
    }

    SUBCASE("fixed seed is deterministic") {
        ReflectanceMaps a = sample_model(model, 7, 1.0);
        ReflectanceMaps b = sample_model(model, 7, 1.0);
        CHECK(a.diffuse == b.diffuse);
        ReflectanceMaps c = sample_model(model, 8, 1.0);
        CHECK_FALSE(a.diffuse == c.diffuse);
    }

    SUBCASE("empirical coefficient variance matches (scale*sigma)^2") {
        // Project samples back to coefficients and compare variances.
        const double scale = 0.7;
        const int draws = 10000;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(5), sumsq = Eigen::VectorXd::Zero(5);
        for (int i = 0; i < draws; ++i) {
            Eigen::VectorXd beta = project_coeffs(model, sample_model(model, 1000 + uint64_t(i), scale));
            sum += beta;
            sumsq += beta.cwiseProduct(beta);
        }
        for (int j = 0; j < 5; ++j) {
            const double var = sumsq[j] / draws - std::pow(sum[j] / draws, 2);
            const double expected = std::pow(scale * model.sigmas[j], 2);
            if (expected > 1e-12) CHECK(var == doctest::Approx(expected).epsilon(0.05));
        }
    }
}

TEST_CASE("MFRM container") {
    auto samples = make_samples(5, 8, 71);
    MorphableReflectanceModel model = build_model(samples, 4);
    model.cfg.exponents = {1.0, 8.0, 64.0};

    const fs::path dir = fs::temp_directory_path() / "mfr_model_io";
    fs::create_directories(dir);
    const fs::path file = dir / "model.mfrm";

    SUBCASE("round trip is bitwise") {
        save_model(model, file);
        MorphableReflectanceModel back = load_model(file);
        CHECK(back.width == model.width);
        CHECK(back.height == model.height);
        CHECK(back.cfg.exponents == model.cfg.exponents);
        CHECK(back.mean == model.mean);
        CHECK(back.diffuse_bases == model.diffuse_bases);
        CHECK(back.specular_bases == model.specular_bases);
        CHECK(back.sigmas == model.sigmas);

        // Saving the loaded model reproduces the file byte for byte.
        const fs::path file2 = dir / "model2.mfrm";
        save_model(back, file2);
        std::ifstream f1(file, std::ios::binary), f2(file2, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
    }

    SUBCASE("truncation is a format error") {
        save_model(model, file);
        const auto size = fs::file_size(file);
        fs::resize_file(file, size - 10);
        CHECK_THROWS_AS(load_model(file), format_error);
    }

    SUBCASE("corrupted payload fails the checksum") {
        save_model(model, file);
        std::fstream f(file, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(64);
        const char junk = 0x5a;
        f.write(&junk, 1);
        f.close();
        CHECK_THROWS_AS(load_model(file), format_error);
    }

    SUBCASE("wrong magic is a format error") {
        std::ofstream f(file, std::ios::binary | std::ios::trunc);
        f << "NOPE";
        f.close();
        CHECK_THROWS_AS(load_model(file), format_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("build_model input validation") {
    auto samples = make_samples(3, 8, 83);
    CHECK_THROWS_AS(build_model({samples[0]}, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_model(samples, 3), std::invalid_argument);  // > N-1
    auto mixed = samples;
    mixed.push_back(synth_reflectance_maps(6, 6, 3, 1, Mask::ones(6, 6)));
    CHECK_THROWS_AS(build_model(mixed, 2), std::invalid_argument);
}

TEST_CASE("reflectance maps: invalid texels take the per-map mean") {
    ReflectanceMaps maps = synth_reflectance_maps(6, 6, 3, 5, Mask::ones(6, 6));
    maps.valid.at(1, 2) = 0;
    maps.valid.at(4, 4) = 0;
    maps.diffuse.set3(1, 2, Rgb(50.0, 50.0, 50.0));

    Rgb mean = Rgb::Zero();
    int n = 0;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            if (maps.valid.at(y, x)) {
                mean += maps.diffuse.rgb_at(y, x).cast<double>();
                ++n;
            }
    mean /= n;

    maps.fill_invalid_with_mean();
    for (int c = 0; c < 3; ++c) {
        CHECK(maps.diffuse.at(1, 2, c) == doctest::Approx(mean[c]).epsilon(1e-6));
        CHECK(maps.diffuse.at(4, 4, c) == doctest::Approx(mean[c]).epsilon(1e-6));
    }
    CHECK(maps.valid.at(1, 2) == 0);  // the mask itself is preserved
}

TEST_CASE("reflectance maps directory round trip") {
    ReflectanceMaps maps = synth_reflectance_maps(7, 5, 3, 9, Mask::ones(7, 5));
    maps.valid.at(2, 3) = 0;
    const fs::path dir = fs::temp_directory_path() / "mfr_maps_io";
    fs::remove_all(dir);
    maps.save_dir(dir);
    ReflectanceMaps back = ReflectanceMaps::load_dir(dir);
    CHECK(back.diffuse == maps.diffuse);
    for (int i = 0; i < 3; ++i) CHECK(back.weights[size_t(i)] == maps.weights[size_t(i)]);
    CHECK(back.valid == maps.valid);
    fs::remove_all(dir);

    CHECK_THROWS_AS(ReflectanceMaps::load_dir(dir), format_error);
}

TEST_CASE("valid-mask handling: PCA ignores texels missing from any sample") {
    auto samples = make_samples(4, 8, 89);
    // Invalidate one texel in one sample; fill it with an outlier value.
    samples[2].valid.at(3, 4) = 0;
    samples[2].diffuse.set3(3, 4, Rgb(100.0, 100.0, 100.0));
    MorphableReflectanceModel model = build_model(samples, 3);
    // Basis rows for that texel stay zero so the outlier cannot leak in.
    const int t = 3 * 8 + 4;
    for (int j = 0; j < 3; ++j) {
        CHECK(model.diffuse_bases(3 * t + 0, j) == 0.0);
        CHECK(model.diffuse_bases(3 * t + 1, j) == 0.0);
        CHECK(model.diffuse_bases(3 * t + 2, j) == 0.0);
    }
}
