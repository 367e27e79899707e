#include "tunnelflow/reference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace tunnelflow {

std::vector<long double> heat_kernel_convolve(const std::vector<double>& xgrid,
                                              const std::vector<long double>& u0, double t,
                                              double eps, bool* mass_warning) {
    require(t > 0.0 && eps > 0.0, "heat_kernel_convolve: need t > 0 and eps > 0");
    require(xgrid.size() == u0.size() && xgrid.size() >= 3,
            "heat_kernel_convolve: grid/data mismatch");
    const std::size_t n = xgrid.size();
    const double h = xgrid[1] - xgrid[0];
    const long double pref = 1.0L / sqrtl((long double)(4.0 * M_PI * eps * t));
    const long double denom = 1.0L / (long double)(4.0 * eps * t);

    std::vector<long double> out(n, 0.0L);
    for (std::size_t i = 0; i < n; ++i) {
        long double acc = 0.0L;
        for (std::size_t j = 0; j < n; ++j) {
            long double d = (long double)(xgrid[i] - xgrid[j]);
            long double g = pref * expl(-d * d * denom);
            long double w = (j == 0 || j + 1 == n) ? 0.5L : 1.0L;
            acc += w * g * u0[j];
        }
        out[i] = acc * (long double)h;
    }
    // Mass leaking past the grid margin shows up as a total-mass defect.
    if (mass_warning) {
        long double m0 = 0.0L, m1 = 0.0L;
        for (std::size_t j = 0; j + 1 < n; ++j) {
            m0 += 0.5L * (u0[j] + u0[j + 1]);
            m1 += 0.5L * (out[j] + out[j + 1]);
        }
        *mass_warning = m0 > 0.0L && fabsl(m1 / m0 - 1.0L) > 1e-6L;
    }
    return out;
}

namespace {

// Thomas solve of a tridiagonal system in extended precision.
void solve_tridiag(std::vector<long double>& a, std::vector<long double>& b,
                   std::vector<long double>& c, std::vector<long double>& d) {
    const std::size_t n = b.size();
    for (std::size_t i = 1; i < n; ++i) {
        long double m = a[i] / b[i - 1];
        b[i] -= m * c[i - 1];
        d[i] -= m * d[i - 1];
    }
    d[n - 1] /= b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
}

long double interp_shifted(const std::vector<double>& xgrid, const std::vector<long double>& u,
                           double xq) {
    if (xq <= xgrid.front()) return u.front();
    if (xq >= xgrid.back()) return u.back();
    double h = xgrid[1] - xgrid[0];
    std::size_t j = std::size_t((xq - xgrid.front()) / h);
    if (j + 1 >= xgrid.size()) j = xgrid.size() - 2;
    long double w = (long double)((xq - xgrid[j]) / h);
    return (1.0L - w) * u[j] + w * u[j + 1];
}

}  // namespace

GridField fd_parabolic_solve(const HamiltonianSymbol& sym, const std::vector<double>& xgrid,
                             const std::vector<long double>& u0, double eps,
                             const std::vector<double>& tgrid, const FdOptions& options) {
    require(xgrid.size() == u0.size() && xgrid.size() >= 5, "fd_parabolic_solve: bad grid");
    require(tgrid.size() >= 2 && tgrid.front() == 0.0,
            "fd_parabolic_solve: time grid must start at 0");
    require(options.theta >= 0.0 && options.theta <= 1.0, "fd_parabolic_solve: theta in [0,1]");
    require(sym.kind() != SymbolKind::Custom,
            "fd_parabolic_solve: custom symbols have no grid discretization");

    const std::size_t n = xgrid.size();
    const double h = xgrid[1] - xgrid[0];
    const double lambda = sym.jump_intensity();
    const double nu0 = sym.jump_size();
    const double theta = options.theta;

    GridField field;
    field.xgrid = xgrid;
    field.tgrid = tgrid;
    field.eps = eps;
    field.values.resize(n * tgrid.size());

    std::vector<long double> u = u0;
    std::copy(u.begin(), u.end(), field.values.begin());

    // Per-node coefficients of the implicit part eps A d_xx - V/eps.
    std::vector<long double> diff(n), kill(n);
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = (long double)(eps * sym.diffusion().value(xgrid[i]) / (h * h));
        kill[i] = (long double)(sym.potential().value(xgrid[i]) / eps);
    }

    std::vector<long double> a(n), b(n), c(n), d(n), jump(n);
    long double max_prev = 0.0L;
    for (long double v : u) max_prev = std::max(max_prev, fabsl(v));

    for (std::size_t ti = 1; ti < tgrid.size(); ++ti) {
        double t0 = tgrid[ti - 1], t1 = tgrid[ti];
        std::size_t nsub = std::size_t(std::ceil((t1 - t0) / options.dt));
        if (nsub == 0) nsub = 1;
        double dt = (t1 - t0) / double(nsub);
        if (lambda > 0.0)
            require(dt * lambda / eps <= 1.0,
                    "fd_parabolic_solve: explicit jump term violates dt lambda/eps <= 1");

        for (std::size_t k = 0; k < nsub; ++k) {
            if (lambda > 0.0) {
                for (std::size_t i = 0; i < n; ++i) {
                    long double shifted = interp_shifted(xgrid, u, xgrid[i] - eps * nu0);
                    jump[i] = (long double)(lambda / eps) * (shifted - u[i]);
                }
            } else {
                std::fill(jump.begin(), jump.end(), 0.0L);
            }

            for (std::size_t i = 0; i < n; ++i) {
                if (i == 0 || i + 1 == n) {
                    a[i] = 0.0L;
                    c[i] = 0.0L;
                    b[i] = 1.0L;
                    d[i] = u[i];  // frozen far-field boundary
                    continue;
                }
                long double lap = diff[i] * (u[i + 1] - 2.0L * u[i] + u[i - 1]);
                d[i] = u[i] + (long double)dt * jump[i] +
                       (long double)((1.0 - theta) * dt) * (lap - kill[i] * u[i]);
                a[i] = -(long double)(theta * dt) * diff[i];
                c[i] = -(long double)(theta * dt) * diff[i];
                b[i] = 1.0L + (long double)(theta * dt) * (2.0L * diff[i] + kill[i]);
            }
            solve_tridiag(a, b, c, d);
            u.swap(d);

            long double max_now = 0.0L;
            for (long double v : u) {
                if (isnanl(v) || isinfl(v)) fail("fd_parabolic_solve: non-finite state");
                max_now = std::max(max_now, fabsl(v));
            }
            if (max_prev > 0.0L && max_now > 10.0L * max_prev)
                fail(detail::strf("fd_parabolic_solve: instability detected near t=%g",
                                  t0 + double(k + 1) * dt));
            max_prev = max_now;
        }
        std::copy(u.begin(), u.end(), field.values.begin() + std::ptrdiff_t(ti * n));
    }
    return field;
}

std::vector<double> varadhan_extract(const std::vector<long double>& u, double eps) {
    std::vector<double> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(u[i] > 0.0L))
            fail(detail::strf("varadhan_extract: nonpositive value at index %zu", i));
        out[i] = double(-(long double)eps * logl(u[i]));
    }
    return out;
}

LaplaceResult laplace_quadrature(const std::function<double(double)>& S,
                                 const std::function<double(double)>& amp, double eps,
                                 Window window) {
    require(window.hi > window.lo && eps > 0.0, "laplace_quadrature: bad window or eps");

    // Coarse scan plus golden-section refinement of the interior minimum.
    const std::size_t n_scan = 4001;
    double best = std::numeric_limits<double>::infinity(), best_xi = window.lo;
    for (std::size_t i = 0; i < n_scan; ++i) {
        double xi = window.lo + (window.hi - window.lo) * double(i) / double(n_scan - 1);
        double v = S(xi);
        if (v < best) {
            best = v;
            best_xi = xi;
        }
    }
    double span = (window.hi - window.lo) / double(n_scan - 1);
    if (best_xi <= window.lo + span || best_xi >= window.hi - span)
        fail("laplace_quadrature: minimum lies on the window boundary");
    double a = best_xi - 2 * span, b = best_xi + 2 * span;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d2 = a + gr * (b - a);
    for (int it = 0; it < 120; ++it) {
        if (S(c) < S(d2)) {
            b = d2;
        } else {
            a = c;
        }
        c = b - gr * (b - a);
        d2 = a + gr * (b - a);
    }
    LaplaceResult res;
    res.xi_star = 0.5 * (a + b);
    double hfd = 1e-5 * (1.0 + std::fabs(res.xi_star));
    double s2 =
        (S(res.xi_star + hfd) - 2.0 * S(res.xi_star) + S(res.xi_star - hfd)) / (hfd * hfd);
    // Flat directions land on the finite-difference noise floor.
    if (!(s2 > 1e-7)) fail("laplace_quadrature: degenerate second derivative at the minimum");
    double s_star = S(res.xi_star);
    res.formula = amp(res.xi_star) * std::sqrt(2.0 * M_PI * eps / s2) * std::exp(-s_star / eps);

    // Quadrature with the dominant exponential factored out.
    const std::size_t nq = 40001;
    long double acc = 0.0L;
    double hq = (window.hi - window.lo) / double(nq - 1);
    for (std::size_t i = 0; i < nq; ++i) {
        double xi = window.lo + hq * double(i);
        long double w = (i == 0 || i + 1 == nq) ? 0.5L : 1.0L;
        acc += w * (long double)amp(xi) * expl(-(long double)((S(xi) - s_star) / eps));
    }
    res.quadrature = double((long double)std::exp(-s_star / eps) * acc * (long double)hq);
    return res;
}

TimeReversalReport time_reversal_check(const HamiltonianSymbol& sym, const TrajectoryFan& fan,
                                       double t, double eps,
                                       const std::function<double(double)>& S0,
                                       const std::function<double(double)>& phi0,
                                       Window x_window, std::size_t n_samples) {
    require(sym.kind() == SymbolKind::Quadratic && sym.diffusion().analytic() &&
                sym.diffusion().value(0.0) == 1.0 && sym.diffusion().d1(0.0) == 0.0,
            "time_reversal_check: implemented for the unit-diffusion quadratic symbol");
    require(t >= 0.0 && t <= fan.t_end() + 1e-12, "time_reversal_check: t outside the fan");

    // The identity only holds while the phase stays globally smooth; after a
    // fold, parts of the manifold turn nonessential and the initial data can
    // no longer be reconstructed in the entire domain.
    auto events = detect_caustic(sym, fan);
    for (const auto& ev : events)
        if (ev.t_star <= t)
            fail(detail::strf("time_reversal_check: refused, caustic at t*=%g precedes t=%g "
                              "(reconstruction impossible in the entire domain)",
                              ev.t_star, t));

    TimeReversalReport rep;
    auto xs = linspace(x_window.lo, x_window.hi, n_samples);
    rep.x = xs;
    rep.weighted_residual.resize(xs.size(), 0.0);
    if (t == 0.0) {
        rep.residual = 0.0;
        return rep;
    }

    std::size_t i0, i1;
    double w;
    fan.locate_time(t, i0, i1, w);
    const std::size_t nl = fan.n_labels();
    require(nl >= 7, "time_reversal_check: need at least 7 fan labels");

    // Evolved curve at time t, per label: position xi, action S, amplitude
    // g = phi0/sqrt(J), and d^2S/dx^2 = K/J.
    std::vector<double> xi(nl), Sh(nl), g(nl), spp(nl);
    for (std::size_t l = 0; l < nl; ++l) {
        auto at = [&](const std::vector<double>& arr) {
            return (1 - w) * arr[fan.idx(i0, l)] + w * arr[fan.idx(i1, l)];
        };
        xi[l] = at(fan.x);
        Sh[l] = at(fan.S);
        double J = at(fan.J);
        double K = at(fan.dpdx0);
        require(J > 0.0, "time_reversal_check: nonpositive Jacobian along the curve");
        g[l] = phi0(fan.labels[l]) / std::sqrt(J);
        spp[l] = K / J;
    }
    // Nonuniform central differences along the evolved curve.
    auto ddxi = [&](const std::vector<double>& y) {
        std::vector<double> d(nl, 0.0);
        for (std::size_t l = 1; l + 1 < nl; ++l) {
            double hl = xi[l] - xi[l - 1], hr = xi[l + 1] - xi[l];
            d[l] = (y[l + 1] * hl * hl - y[l - 1] * hr * hr + y[l] * (hr * hr - hl * hl)) /
                   (hl * hr * (hl + hr));
        }
        d[0] = d[1];
        d[nl - 1] = d[nl - 2];
        return d;
    };
    auto s3 = ddxi(spp);   // S'''
    auto s4 = ddxi(s3);    // S''''
    auto g1 = ddxi(g);
    auto g2 = ddxi(g1);

    for (std::size_t i = 0; i < xs.size(); ++i) {
        double x = xs[i];
        // The stationary point of the backward kernel is the forward image
        // of x; snap to the nearest interior fan label.
        require(x >= fan.labels.front() && x <= fan.labels.back(),
                "time_reversal_check: sample point outside the fan labels");
        auto it = std::lower_bound(fan.labels.begin(), fan.labels.end(), x);
        std::size_t l = std::size_t(it - fan.labels.begin());
        l = std::clamp<std::size_t>(l, 3, nl - 4);

        double x0 = fan.labels[l];
        double denom = 1.0 - 2.0 * t * spp[l];
        require(denom > 0.0, "time_reversal_check: stationary-point solve failed");

        // Exponent of F(xi) = (x0 - xi)^2/(4t) - S(xi) at the stationary
        // point; on the weighted scale it reduces to the integrator defect.
        double expo = ((x0 - xi[l]) * (x0 - xi[l]) / (4.0 * t) - Sh[l] + S0(x0)) / eps;
        double Fpp = denom / (2.0 * t);
        double F3 = -s3[l];
        double F4 = -s4[l];
        // Laplace stationary-point value through the first correction term
        // (formal saddle of the backward kernel).
        double corr = -g2[l] / (2.0 * g[l] * Fpp) + g1[l] * F3 / (2.0 * g[l] * Fpp * Fpp) +
                      F4 / (8.0 * Fpp * Fpp) - 5.0 * F3 * F3 / (24.0 * Fpp * Fpp * Fpp);
        double recon_weighted =
            g[l] / std::sqrt(denom) * std::exp(expo) * (1.0 + eps * corr);
        rep.x[i] = x0;
        rep.weighted_residual[i] = std::fabs(recon_weighted - phi0(x0));
        rep.residual = std::max(rep.residual, rep.weighted_residual[i]);
    }
    return rep;
}

void write_gridfield_csv(const GridField& field, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_gridfield_csv: cannot open " + path);
    f << "t,x,u\n";
    char buf[64];
    for (std::size_t ti = 0; ti < field.tgrid.size(); ++ti)
        for (std::size_t xi = 0; xi < field.xgrid.size(); ++xi) {
            snprintf(buf, sizeof(buf), "%.17Lg", field.values[field.idx(ti, xi)]);
            f << fmt_full(field.tgrid[ti]) << ',' << fmt_full(field.xgrid[xi]) << ',' << buf
              << '\n';
        }
}

void write_varadhan_csv(const GridField& field, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_varadhan_csv: cannot open " + path);
    f << "t,x,minus_eps_log_u\n";
    for (std::size_t ti = 0; ti < field.tgrid.size(); ++ti) {
        auto phi = varadhan_extract(field.slice(ti), field.eps);
        for (std::size_t xi = 0; xi < field.xgrid.size(); ++xi)
            f << fmt_full(field.tgrid[ti]) << ',' << fmt_full(field.xgrid[xi]) << ','
              << fmt_full(phi[xi]) << '\n';
    }
}

}  // namespace tunnelflow
