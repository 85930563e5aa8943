// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <Eigen/Core>

namespace mfr {

struct AdamParams {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Plain Adam with bias correction over a flat parameter vector.
class Adam {
public:
    explicit Adam(Eigen::Index n, AdamParams params = {})
        : params_(params),
          m_(Eigen::VectorXd::Zero(n)),
          v_(Eigen::VectorXd::Zero(n)) {}

    /// One update of x in place; lr_scale multiplies the base learning rate
    /// (used for decay schedules).
    void step(const Eigen::VectorXd& grad, Eigen::VectorXd& x, double lr_scale = 1.0) {
        ++t_;
        m_ = params_.beta1 * m_ + (1.0 - params_.beta1) * grad;
        v_ = params_.beta2 * v_ + (1.0 - params_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(params_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(params_.beta2, double(t_));
        const double lr = params_.learning_rate * lr_scale;
        x.array() -= lr * (m_.array() / c1) /
                     ((v_.array() / c2).sqrt() + params_.epsilon);
    }

    /// Per-coordinate effective step scale lr_scale*lr/(sqrt(v^)+eps); the
    /// proximal model update uses it to match thresholds to the metric.
    Eigen::ArrayXd effective_rate(double lr_scale = 1.0) const {
        const double c2 = 1.0 - std::pow(params_.beta2, double(std::max<int64_t>(t_, 1)));
        return params_.learning_rate * lr_scale /
               ((v_.array() / c2).sqrt() + params_.epsilon);
    }

    void reset() {
        m_.setZero();
        v_.setZero();
        t_ = 0;
    }

private:
    AdamParams params_;
    Eigen::VectorXd m_, v_;
    int64_t t_ = 0;
};

}  // namespace mfr
