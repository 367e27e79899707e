#include "tunnelflow/symbol.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace tunnelflow {

namespace {

double fd_step(double x) { return 1e-4 * (1.0 + std::fabs(x)); }

}  // namespace

Coefficient Coefficient::constant(double c) {
    Coefficient out;
    out.value_ = [c](double) { return c; };
    out.d1_ = [](double) { return 0.0; };
    out.d2_ = [](double) { return 0.0; };
    out.analytic_ = true;
    out.const_zero_ = (c == 0.0);
    return out;
}

Coefficient Coefficient::poly(std::vector<double> coeffs) {
    if (coeffs.empty()) coeffs.push_back(0.0);
    auto horner = [](const std::vector<double>& c, double x) {
        double acc = 0.0;
        for (std::size_t i = c.size(); i-- > 0;) acc = acc * x + c[i];
        return acc;
    };
    std::vector<double> d1c, d2c;
    for (std::size_t i = 1; i < coeffs.size(); ++i) d1c.push_back(double(i) * coeffs[i]);
    for (std::size_t i = 1; i < d1c.size(); ++i) d2c.push_back(double(i) * d1c[i]);
    if (d1c.empty()) d1c.push_back(0.0);
    if (d2c.empty()) d2c.push_back(0.0);
    Coefficient out;
    bool zero = true;
    for (double c : coeffs) zero = zero && c == 0.0;
    out.value_ = [coeffs, horner](double x) { return horner(coeffs, x); };
    out.d1_ = [d1c, horner](double x) { return horner(d1c, x); };
    out.d2_ = [d2c, horner](double x) { return horner(d2c, x); };
    out.analytic_ = true;
    out.const_zero_ = zero;
    return out;
}

Coefficient Coefficient::scaled_sin(double amp, double freq) {
    Coefficient out;
    out.value_ = [amp, freq](double x) { return amp * std::sin(freq * x); };
    out.d1_ = [amp, freq](double x) { return amp * freq * std::cos(freq * x); };
    out.d2_ = [amp, freq](double x) { return -amp * freq * freq * std::sin(freq * x); };
    out.analytic_ = true;
    out.const_zero_ = (amp == 0.0);
    return out;
}

Coefficient Coefficient::custom(std::function<double(double)> f) {
    Coefficient out;
    out.value_ = f;
    out.d1_ = [f](double x) {
        double h = fd_step(x);
        return (f(x + h) - f(x - h)) / (2.0 * h);
    };
    out.d2_ = [f](double x) {
        double h = fd_step(x);
        return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
    };
    out.analytic_ = false;
    return out;
}

double Coefficient::d1(double x) const { return d1_(x); }
double Coefficient::d2(double x) const { return d2_(x); }

HamiltonianSymbol HamiltonianSymbol::quadratic(Coefficient A) {
    HamiltonianSymbol s;
    s.kind_ = SymbolKind::Quadratic;
    s.A_ = std::move(A);
    return s;
}

HamiltonianSymbol HamiltonianSymbol::quadratic_potential(Coefficient A, Coefficient V) {
    HamiltonianSymbol s;
    s.kind_ = SymbolKind::QuadraticPotential;
    s.A_ = std::move(A);
    s.V_ = std::move(V);
    return s;
}

HamiltonianSymbol HamiltonianSymbol::jump(Coefficient A, Coefficient V, double lambda,
                                          double nu0) {
    require(lambda >= 0.0, "jump symbol: intensity lambda must be >= 0");
    HamiltonianSymbol s;
    s.kind_ = SymbolKind::Jump;
    s.A_ = std::move(A);
    s.V_ = std::move(V);
    s.lambda_ = lambda;
    s.nu0_ = nu0;
    return s;
}

HamiltonianSymbol HamiltonianSymbol::custom(std::function<double(double, double, double)> h) {
    HamiltonianSymbol s;
    s.kind_ = SymbolKind::Custom;
    s.custom_ = std::move(h);
    return s;
}

HamiltonianSymbol HamiltonianSymbol::with_time_modulation(
    std::function<double(double)> v_mod, std::function<double(double)> lam_mod) const {
    HamiltonianSymbol s = *this;
    s.v_mod_ = std::move(v_mod);
    s.lam_mod_ = std::move(lam_mod);
    return s;
}

double HamiltonianSymbol::checked(double v, const char* what, double x, double p) const {
    if (!std::isfinite(v))
        fail(detail::strf("symbol: non-finite %s at (x=%g, p=%g)", what, x, p));
    return v;
}

double HamiltonianSymbol::eval(double x, double p, double t) const {
    if (kind_ == SymbolKind::Custom) return checked(custom_(x, p, t), "eval", x, p);
    double v = A_.value(x) * p * p + V_.value(x) * v_scale(t);
    if (lambda_ != 0.0) v += lambda_ * lam_scale(t) * std::expm1(nu0_ * p);
    return checked(v, "eval", x, p);
}

double HamiltonianSymbol::grad_p(double x, double p, double t) const {
    if (kind_ == SymbolKind::Custom) {
        double h = 1e-4 * (1.0 + std::fabs(p));
        return checked((custom_(x, p + h, t) - custom_(x, p - h, t)) / (2.0 * h), "grad_p", x, p);
    }
    double v = 2.0 * A_.value(x) * p;
    if (lambda_ != 0.0) v += lambda_ * lam_scale(t) * nu0_ * std::exp(nu0_ * p);
    return checked(v, "grad_p", x, p);
}

double HamiltonianSymbol::grad_x(double x, double p, double t) const {
    if (kind_ == SymbolKind::Custom) {
        double h = fd_step(x);
        return checked((custom_(x + h, p, t) - custom_(x - h, p, t)) / (2.0 * h), "grad_x", x, p);
    }
    return checked(A_.d1(x) * p * p + V_.d1(x) * v_scale(t), "grad_x", x, p);
}

double HamiltonianSymbol::hess_pp(double x, double p, double t) const {
    if (kind_ == SymbolKind::Custom) {
        double h = 1e-4 * (1.0 + std::fabs(p));
        return checked((custom_(x, p + h, t) - 2.0 * custom_(x, p, t) + custom_(x, p - h, t)) /
                           (h * h),
                       "hess_pp", x, p);
    }
    double v = 2.0 * A_.value(x);
    if (lambda_ != 0.0) v += lambda_ * lam_scale(t) * nu0_ * nu0_ * std::exp(nu0_ * p);
    return checked(v, "hess_pp", x, p);
}

double HamiltonianSymbol::cross_xp(double x, double p, double t) const {
    if (kind_ == SymbolKind::Custom) {
        double hx = fd_step(x);
        double hp = 1e-4 * (1.0 + std::fabs(p));
        double v = (custom_(x + hx, p + hp, t) - custom_(x + hx, p - hp, t) -
                    custom_(x - hx, p + hp, t) + custom_(x - hx, p - hp, t)) /
                   (4.0 * hx * hp);
        return checked(v, "cross_xp", x, p);
    }
    return checked(2.0 * A_.d1(x) * p, "cross_xp", x, p);
}

double HamiltonianSymbol::hess_xx(double x, double p, double t) const {
    if (kind_ == SymbolKind::Custom) {
        double h = fd_step(x);
        return checked((custom_(x + h, p, t) - 2.0 * custom_(x, p, t) + custom_(x - h, p, t)) /
                           (h * h),
                       "hess_xx", x, p);
    }
    return checked(A_.d2(x) * p * p + V_.d2(x) * v_scale(t), "hess_xx", x, p);
}

ConvexityReport HamiltonianSymbol::check_convexity(Window x_window, Window p_window,
                                                   std::size_t n_samples) const {
    require(n_samples >= 2, "check_convexity: need n_samples >= 2 per axis");
    require(x_window.hi >= x_window.lo && p_window.hi > p_window.lo,
            "check_convexity: degenerate window");
    ConvexityReport rep;
    rep.min_hess = std::numeric_limits<double>::infinity();
    auto xs = linspace(x_window.lo, x_window.hi == x_window.lo ? x_window.lo + 1e-12 : x_window.hi,
                       n_samples);
    auto ps = linspace(p_window.lo, p_window.hi, n_samples);
    for (double x : xs) {
        for (double p : ps) {
            double h = hess_pp(x, p);
            if (h < rep.min_hess) {
                rep.min_hess = h;
                rep.arg_x = x;
                rep.arg_p = p;
            }
        }
    }
    // Finite-difference curvature of a flat direction lands at O(h_fd^2)
    // instead of exactly zero; certify only above that noise floor.
    constexpr double kCurvatureFloor = 1e-7;
    rep.certified = rep.min_hess > kCurvatureFloor;
    return rep;
}

bool HamiltonianSymbol::spatially_homogeneous() const {
    if (kind_ == SymbolKind::Custom) return false;
    return A_.d1(0.0) == 0.0 && A_.d1(1.0) == 0.0 && V_.is_constant_zero();
}

}  // namespace tunnelflow
