// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <Eigen/Core>

namespace mfr {

/// Gauss-Legendre nodes and weights on [a, b]. Exact for polynomials up to
/// degree 2n-1.
struct GaussLegendre {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;

    static GaussLegendre on(double a, double b, int n);

    template <typename F>
    double integrate(F&& f) const {
        double sum = 0.0;
        for (int i = 0; i < nodes.size(); ++i) sum += weights[i] * f(nodes[i]);
        return sum;
    }
};

/// Legendre polynomial P_l(x), standard normalization P_l(1) = 1.
double legendre_p(int l, double x);

}  // namespace mfr
