#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tunnelflow/hamflow.hpp"
#include "tunnelflow/symbol.hpp"

namespace tunnelflow {

/// Grid solution of the small-parameter equation. Values are kept in
/// extended precision: tunnel solutions span hundreds of orders of
/// magnitude across the window once exp(-S/eps) tails enter.
struct GridField {
    std::vector<double> xgrid;  ///< uniform
    std::vector<double> tgrid;
    std::vector<long double> values;  ///< u(x,t) > 0, row-major in t
    double eps = 0.0;
    bool mass_warning = false;

    std::size_t idx(std::size_t ti, std::size_t xi) const { return ti * xgrid.size() + xi; }
    std::vector<long double> slice(std::size_t ti) const {
        return {values.begin() + std::ptrdiff_t(ti * xgrid.size()),
                values.begin() + std::ptrdiff_t((ti + 1) * xgrid.size())};
    }
};

/// Trapezoid convolution with the heat kernel (4 pi eps t)^{-1/2}
/// exp(-(x-xi)^2 / (4 eps t)). Sets *mass_warning when the kernel mass
/// leaking past the grid margin exceeds 1e-6 for some output point.
std::vector<long double> heat_kernel_convolve(const std::vector<double>& xgrid,
                                              const std::vector<long double>& u0, double t,
                                              double eps, bool* mass_warning = nullptr);

struct FdOptions {
    double theta = 0.5;  ///< 1/2 = Crank-Nicolson; diffusion/potential implicit
    double dt = 1e-3;    ///< internal step (tgrid entries are output times)
};

/// Theta-scheme solve of  u_t = eps A(x) u_xx - (V(x)/eps) u
///                              + (lambda/eps) (u(x - eps nu0) - u),
/// the small-parameter evolution whose real tunnel symbol is the built-in
/// H = A p^2 + V + lambda (e^{nu0 p} - 1) (potential acting as a killing
/// rate; the off-grid shift uses linear interpolation). Boundary values
/// stay frozen at the initial far-field data.
GridField fd_parabolic_solve(const HamiltonianSymbol& sym, const std::vector<double>& xgrid,
                             const std::vector<long double>& u0, double eps,
                             const std::vector<double>& tgrid, const FdOptions& options = {});

/// -eps ln u per grid point; u must be strictly positive.
std::vector<double> varadhan_extract(const std::vector<long double>& u, double eps);

struct LaplaceResult {
    double xi_star = 0.0;
    double formula = 0.0;     ///< amp(xi*) sqrt(2 pi eps / S''(xi*)) e^{-S(xi*)/eps}
    double quadrature = 0.0;  ///< direct quadrature of amp e^{-S/eps}
};

/// Leading-order Laplace evaluation of int amp(xi) e^{-S(xi)/eps} dxi with a
/// unique interior nondegenerate minimum of S on the window.
LaplaceResult laplace_quadrature(const std::function<double(double)>& S,
                                 const std::function<double(double)>& amp, double eps,
                                 Window window);

struct TimeReversalReport {
    double residual = 0.0;  ///< sup of e^{S0/eps} |reconstruction - u0|
    std::vector<double> x;
    std::vector<double> weighted_residual;
};

/// Backward-kernel reconstruction check of the initial data from the
/// evolved phase/amplitude at time t, evaluated by the stationary-point
/// (Laplace) formula; direct backward quadrature is ill-posed. Requires
/// the unit-diffusion symbol and a fold-free fan up to t, and refuses the
/// post-caustic regime.
TimeReversalReport time_reversal_check(const HamiltonianSymbol& sym, const TrajectoryFan& fan,
                                       double t, double eps,
                                       const std::function<double(double)>& S0,
                                       const std::function<double(double)>& phi0,
                                       Window x_window, std::size_t n_samples = 41);

void write_gridfield_csv(const GridField& field, const std::string& path);
void write_varadhan_csv(const GridField& field, const std::string& path);

}  // namespace tunnelflow
