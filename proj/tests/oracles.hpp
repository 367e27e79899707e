#pragma once

// Test-only independent oracles. These never call into the implementation
// paths they are used to check.

#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

/// Hopf-Lax value for H = p^2: phi(x,t) = min_z [ S0(z) + (x-z)^2/(4t) ],
/// evaluated by brute force over a dense z grid with local refinement.
inline double hopf_lax(const std::function<double(double)>& S0, double x, double t, double z_lo,
                       double z_hi, std::size_t n = 20000) {
    auto value = [&](double z) { return S0(z) + (x - z) * (x - z) / (4.0 * t); };
    double best_z = z_lo, best = value(z_lo);
    double h = (z_hi - z_lo) / double(n);
    for (std::size_t i = 1; i <= n; ++i) {
        double z = z_lo + double(i) * h;
        double v = value(z);
        if (v < best) {
            best = v;
            best_z = z;
        }
    }
    // Golden-section refinement around the coarse winner.
    double a = best_z - 2.0 * h, b = best_z + 2.0 * h;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    for (int it = 0; it < 80; ++it) {
        if (value(c) < value(d)) {
            b = d;
        } else {
            a = c;
        }
        c = b - gr * (b - a);
        d = a + gr * (b - a);
    }
    return value(0.5 * (a + b));
}

/// Trapezoid quadrature on a uniform grid.
inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i)
        acc += 0.5 * (y[i] + y[i + 1]) * (x[i + 1] - x[i]);
    return acc;
}

}  // namespace oracles
