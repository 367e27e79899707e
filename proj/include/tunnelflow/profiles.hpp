#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tunnelflow/common.hpp"

namespace tunnelflow {

/// Initial phase/velocity data: S0 with p0 = S0' and p0' available in
/// closed form for the built-in families.
struct InitialProfile {
    std::string name;
    std::function<double(double)> S0;
    std::function<double(double)> p0;
    std::function<double(double)> p0_prime;
};

namespace profiles {

/// S0 = x + ln cosh x, p0 = 1 + tanh x  (globally convex).
InitialProfile tanh_plus();

/// S0 = x - ln cosh x, p0 = 1 - tanh x  (concave at the origin; first
/// caustic at t = 1/2 for H = p^2).
InitialProfile tanh_minus();

/// Odd piecewise-linear compression: p0 = -clamp(x/width, -1, 1).
/// Every label in (-width, width) focuses at the same time for H = p^2.
InitialProfile wedge(double width);

/// S0 = -x^2/2 (uniform focusing at t = 1/(2) for H = p^2).
InitialProfile parabola();

/// Sum of concave Gaussian humps in S0: S0 = sum_i a_i exp(-(x-c_i)^2/(2 w_i^2)).
struct Hump {
    double amplitude;
    double center;
    double width;
};
InitialProfile gaussian_humps(const std::vector<Hump>& humps);

/// Two smoothed momentum steps 1 -> 0 -> -1 centered at +-half_gap with
/// transition scale delta; produces two converging shocks for H = p^2.
InitialProfile double_step(double half_gap, double delta);

/// Polynomial S0.
InitialProfile poly_S0(const std::vector<double>& coeffs);

/// Resolve a named built-in ("tanh-plus", "tanh-minus"); throws on unknown
/// names. Parameterized families are configured explicitly.
InitialProfile by_name(const std::string& name);

}  // namespace profiles
}  // namespace tunnelflow
