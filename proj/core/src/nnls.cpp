// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/nnls.hpp>

#include <Eigen/QR>

#include <limits>
#include <stdexcept>
#include <vector>

namespace mfr {

namespace {

// Least-squares solve restricted to the passive columns.
Eigen::VectorXd solve_passive(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              const std::vector<int>& passive) {
    Eigen::MatrixXd Ap(A.rows(), Eigen::Index(passive.size()));
    for (size_t k = 0; k < passive.size(); ++k) Ap.col(Eigen::Index(k)) = A.col(passive[k]);
    return Ap.colPivHouseholderQr().solve(b);
}

}  // namespace

NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iterations,
                double tolerance) {
    const Eigen::Index m = A.rows(), n = A.cols();
    if (b.size() != m) throw std::invalid_argument("nnls: dimension mismatch");
    if (max_iterations <= 0) max_iterations = int(3 * n);

    NnlsResult res;
    res.x = Eigen::VectorXd::Zero(n);

    std::vector<bool> in_passive(size_t(n), false);
    std::vector<int> passive;
    Eigen::VectorXd w(n), z;

    const double wtol = tolerance * std::max(1.0, A.cwiseAbs().maxCoeff() * b.cwiseAbs().maxCoeff());

    int outer = 0;
    while (outer < max_iterations) {
        // Lagrange multipliers of the active constraints.
        w = A.transpose() * (b - A * res.x);

        int best = -1;
        double wmax = wtol;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!in_passive[size_t(j)] && w[j] > wmax) {
                wmax = w[j];
                best = int(j);
            }
        }
        if (best < 0) {
            res.converged = true;
            break;
        }

        in_passive[size_t(best)] = true;
        passive.push_back(best);

        for (;;) {
            ++outer;
            z = solve_passive(A, b, passive);

            // All passive coordinates positive: accept.
            bool feasible = true;
            for (size_t k = 0; k < passive.size(); ++k)
                if (z[Eigen::Index(k)] <= 0.0) feasible = false;
            if (feasible) {
                res.x.setZero();
                for (size_t k = 0; k < passive.size(); ++k) res.x[passive[k]] = z[Eigen::Index(k)];
                break;
            }

            // Step toward z until the first passive coordinate hits zero.
            double alpha = std::numeric_limits<double>::infinity();
            for (size_t k = 0; k < passive.size(); ++k) {
                double zk = z[Eigen::Index(k)];
                if (zk <= 0.0) {
                    double xk = res.x[passive[k]];
                    double t = xk / (xk - zk);
                    alpha = std::min(alpha, t);
                }
            }
            for (size_t k = 0; k < passive.size(); ++k) {
                int j = passive[k];
                res.x[j] += alpha * (z[Eigen::Index(k)] - res.x[j]);
            }

            // Move zeroed coordinates back to the active set.
            std::vector<int> still;
            for (int j : passive) {
                if (res.x[j] > tolerance) {
                    still.push_back(j);
                } else {
                    res.x[j] = 0.0;
                    in_passive[size_t(j)] = false;
                }
            }
            passive = std::move(still);
            if (passive.empty()) break;
            if (outer >= max_iterations) break;
        }
        if (outer >= max_iterations) break;
    }

    res.iterations = outer;
    res.residual_norm = (A * res.x - b).norm();
    return res;
}

}  // namespace mfr
