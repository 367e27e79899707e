#pragma once

#include <functional>
#include <string>

#include "tunnelflow/common.hpp"

namespace tunnelflow {

/// Scalar coefficient of one variable with first and second derivatives.
/// Built-in constructors carry analytic derivatives; custom callables fall
/// back to central differences with step 1e-4*(1+|x|).
class Coefficient {
public:
    /// Defaults to the zero constant.
    Coefficient()
        : value_([](double) { return 0.0; }),
          d1_([](double) { return 0.0; }),
          d2_([](double) { return 0.0; }),
          analytic_(true),
          const_zero_(true) {}

    static Coefficient constant(double c);
    /// c[0] + c[1] x + c[2] x^2 + ...
    static Coefficient poly(std::vector<double> coeffs);
    /// amp * sin(freq * x)
    static Coefficient scaled_sin(double amp, double freq);
    static Coefficient custom(std::function<double(double)> f);

    double value(double x) const { return value_(x); }
    double d1(double x) const;
    double d2(double x) const;
    bool analytic() const { return analytic_; }
    bool is_constant_zero() const { return const_zero_; }

private:
    std::function<double(double)> value_, d1_, d2_;
    bool analytic_ = false;
    bool const_zero_ = false;
};

enum class SymbolKind { Quadratic, QuadraticPotential, Jump, Custom };

struct ConvexityReport {
    double min_hess = 0.0;
    bool certified = false;
    double arg_x = 0.0;  ///< sample point where hess_pp is minimal
    double arg_p = 0.0;
};

struct Window {
    double lo = 0.0;
    double hi = 0.0;
};

/// Real tunnel symbol H(x,p) of a Kolmogorov-Feller-type operator.
///
/// Built-in structure: H = A(x) p^2 + V(x) + lambda (e^{nu0 p} - 1),
/// evaluated at real momenta. Analytic derivatives for built-in kinds;
/// custom callables use central differences. Instances are immutable
/// after construction and safe for concurrent reads.
class HamiltonianSymbol {
public:
    static HamiltonianSymbol quadratic(Coefficient A);
    static HamiltonianSymbol quadratic_potential(Coefficient A, Coefficient V);
    static HamiltonianSymbol jump(Coefficient A, Coefficient V, double lambda, double nu0);
    /// h(x, p, t); derivatives by finite differences.
    static HamiltonianSymbol custom(std::function<double(double, double, double)> h);

    /// Optional time modulation of the potential and jump intensity:
    /// V(x) -> V(x) v_mod(t), lambda -> lambda lam_mod(t).
    HamiltonianSymbol with_time_modulation(std::function<double(double)> v_mod,
                                           std::function<double(double)> lam_mod) const;

    double eval(double x, double p, double t = 0.0) const;
    double grad_p(double x, double p, double t = 0.0) const;
    double grad_x(double x, double p, double t = 0.0) const;
    double hess_pp(double x, double p, double t = 0.0) const;
    double cross_xp(double x, double p, double t = 0.0) const;
    double hess_xx(double x, double p, double t = 0.0) const;

    ConvexityReport check_convexity(Window x_window, Window p_window,
                                    std::size_t n_samples) const;

    SymbolKind kind() const { return kind_; }
    bool time_dependent() const { return bool(v_mod_) || bool(lam_mod_) || kind_ == SymbolKind::Custom; }
    /// True when H has no x dependence (homogeneous constructions need this).
    bool spatially_homogeneous() const;

    double jump_intensity() const { return lambda_; }
    double jump_size() const { return nu0_; }
    const Coefficient& diffusion() const { return A_; }
    const Coefficient& potential() const { return V_; }

private:
    HamiltonianSymbol() = default;

    double v_scale(double t) const { return v_mod_ ? v_mod_(t) : 1.0; }
    double lam_scale(double t) const { return lam_mod_ ? lam_mod_(t) : 1.0; }
    double checked(double v, const char* what, double x, double p) const;

    SymbolKind kind_ = SymbolKind::Quadratic;
    Coefficient A_ = Coefficient::constant(1.0);
    Coefficient V_ = Coefficient::constant(0.0);
    double lambda_ = 0.0;
    double nu0_ = 0.0;
    std::function<double(double, double, double)> custom_;
    std::function<double(double)> v_mod_;
    std::function<double(double)> lam_mod_;
};

}  // namespace tunnelflow
