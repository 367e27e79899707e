#include "tunnelflow/profiles.hpp"

#include <cmath>

#include "tunnelflow/symbol.hpp"

namespace tunnelflow {
namespace profiles {

namespace {
// log cosh without overflow for large |x|.
double logcosh(double x) {
    double a = std::fabs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}
}  // namespace

InitialProfile tanh_plus() {
    InitialProfile p;
    p.name = "tanh-plus";
    p.S0 = [](double x) { return x + logcosh(x); };
    p.p0 = [](double x) { return 1.0 + std::tanh(x); };
    p.p0_prime = [](double x) { double c = std::cosh(x); return 1.0 / (c * c); };
    return p;
}

InitialProfile tanh_minus() {
    InitialProfile p;
    p.name = "tanh-minus";
    p.S0 = [](double x) { return x - logcosh(x); };
    p.p0 = [](double x) { return 1.0 - std::tanh(x); };
    p.p0_prime = [](double x) { double c = std::cosh(x); return -1.0 / (c * c); };
    return p;
}

InitialProfile wedge(double width) {
    require(width > 0, "wedge profile: width must be positive");
    InitialProfile p;
    p.name = "wedge";
    p.p0 = [width](double x) {
        if (x <= -width) return 1.0;
        if (x >= width) return -1.0;
        return -x / width;
    };
    p.p0_prime = [width](double x) {
        return (x > -width && x < width) ? -1.0 / width : 0.0;
    };
    // S0 = integral of p0 from 0: -x^2/(2w) inside, linear continuations outside.
    p.S0 = [width](double x) {
        if (x >= -width && x <= width) return -x * x / (2.0 * width);
        double edge = -width / 2.0;
        if (x > width) return edge - (x - width);
        return edge + (x + width);
    };
    return p;
}

InitialProfile parabola() {
    InitialProfile p;
    p.name = "parabola";
    p.S0 = [](double x) { return -0.5 * x * x; };
    p.p0 = [](double x) { return -x; };
    p.p0_prime = [](double) { return -1.0; };
    return p;
}

InitialProfile gaussian_humps(const std::vector<Hump>& humps) {
    require(!humps.empty(), "gaussian_humps: need at least one hump");
    for (const auto& h : humps) require(h.width > 0, "gaussian_humps: width must be positive");
    InitialProfile p;
    p.name = "gaussian-humps";
    auto hs = humps;
    p.S0 = [hs](double x) {
        double s = 0;
        for (const auto& h : hs) {
            double y = (x - h.center) / h.width;
            s += h.amplitude * std::exp(-0.5 * y * y);
        }
        return s;
    };
    p.p0 = [hs](double x) {
        double s = 0;
        for (const auto& h : hs) {
            double y = (x - h.center) / h.width;
            s += -h.amplitude * y / h.width * std::exp(-0.5 * y * y);
        }
        return s;
    };
    p.p0_prime = [hs](double x) {
        double s = 0;
        for (const auto& h : hs) {
            double y = (x - h.center) / h.width;
            s += h.amplitude / (h.width * h.width) * (y * y - 1.0) * std::exp(-0.5 * y * y);
        }
        return s;
    };
    return p;
}

InitialProfile double_step(double half_gap, double delta) {
    require(half_gap > 0 && delta > 0, "double_step: need positive half_gap and delta");
    InitialProfile p;
    p.name = "double-step";
    p.p0 = [half_gap, delta](double x) {
        return 1.0 - 0.5 * (1.0 + std::tanh((x + half_gap) / delta)) -
               0.5 * (1.0 + std::tanh((x - half_gap) / delta));
    };
    p.p0_prime = [half_gap, delta](double x) {
        double c1 = std::cosh((x + half_gap) / delta);
        double c2 = std::cosh((x - half_gap) / delta);
        return -0.5 / delta * (1.0 / (c1 * c1) + 1.0 / (c2 * c2));
    };
    p.S0 = [half_gap, delta](double x) {
        // integral of p0 from 0: x - delta/2 [logcosh((x+g)/d) - logcosh(g/d)]
        //                          - delta/2 [logcosh((x-g)/d) - logcosh(g/d)]
        auto lc = [](double z) { return logcosh(z); };
        return x - 0.5 * delta * (lc((x + half_gap) / delta) - lc(half_gap / delta)) -
               0.5 * delta * (lc((x - half_gap) / delta) - lc(-half_gap / delta));
    };
    return p;
}

InitialProfile poly_S0(const std::vector<double>& coeffs) {
    Coefficient c = Coefficient::poly(coeffs);
    InitialProfile p;
    p.name = "poly";
    p.S0 = [c](double x) { return c.value(x); };
    p.p0 = [c](double x) { return c.d1(x); };
    p.p0_prime = [c](double x) { return c.d2(x); };
    return p;
}

InitialProfile by_name(const std::string& name) {
    if (name == "tanh-plus") return tanh_plus();
    if (name == "tanh-minus") return tanh_minus();
    if (name == "parabola") return parabola();
    fail("unknown built-in initial profile: " + name);
}

}  // namespace profiles
}  // namespace tunnelflow
