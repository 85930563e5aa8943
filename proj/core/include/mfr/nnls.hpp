// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <Eigen/Core>

namespace mfr {

struct NnlsResult {
    Eigen::VectorXd x;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Non-negative least squares min |A x - b|_2 s.t. x >= 0, Lawson-Hanson
/// active-set method. max_iterations <= 0 selects the customary 3n bound.
NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iterations = 0,
                double tolerance = 1e-12);

}  // namespace mfr
