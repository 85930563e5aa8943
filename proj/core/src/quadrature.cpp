// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/quadrature.hpp>

#include <cmath>
#include <stdexcept>

namespace mfr {

double legendre_p(int l, double x) {
    if (l == 0) return 1.0;
    if (l == 1) return x;
    double pm2 = 1.0, pm1 = x;
    for (int k = 2; k <= l; ++k) {
        double p = ((2.0 * k - 1.0) * x * pm1 - (k - 1.0) * pm2) / double(k);
        pm2 = pm1;
        pm1 = p;
    }
    return pm1;
}

GaussLegendre GaussLegendre::on(double a, double b, int n) {
    if (n < 1) throw std::invalid_argument("GaussLegendre: node count must be >= 1");
    GaussLegendre q;
    q.nodes.resize(n);
    q.weights.resize(n);

    // Newton iteration on P_n from the Chebyshev-like initial guess; the
    // roots are symmetric so only the first half is computed.
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p = legendre_p(n, x);
            double pm1 = legendre_p(n - 1, x);
            // P'_n(x) = n (P_{n-1}(x) - x P_n(x)) / (1 - x^2)
            dp = n * (pm1 - x * p) / (1.0 - x * x);
            double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        q.nodes[i] = -x;
        q.nodes[n - 1 - i] = x;
        q.weights[i] = w;
        q.weights[n - 1 - i] = w;
    }

    // affine map [-1,1] -> [a,b]
    const double half = 0.5 * (b - a), mid = 0.5 * (b + a);
    for (int i = 0; i < n; ++i) {
        q.nodes[i] = mid + half * q.nodes[i];
        q.weights[i] *= half;
    }
    return q;
}

}  // namespace mfr
