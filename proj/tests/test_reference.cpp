#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tunnelflow/continuity.hpp"
#include "tunnelflow/manifold.hpp"
#include "tunnelflow/profiles.hpp"
#include "tunnelflow/reference.hpp"

using namespace tunnelflow;

namespace {

HamiltonianSymbol heat() { return HamiltonianSymbol::quadratic(Coefficient::constant(1.0)); }

std::vector<long double> gaussian_data(const std::vector<double>& xg, double sigma) {
    std::vector<long double> u(xg.size());
    for (std::size_t i = 0; i < xg.size(); ++i)
        u[i] = expl(-(long double)(xg[i] * xg[i]) / (2.0L * (long double)(sigma * sigma)));
    return u;
}

std::vector<long double> wkb_data(const std::vector<double>& xg,
                                  const std::function<double(double)>& S0, double eps) {
    std::vector<long double> u(xg.size());
    for (std::size_t i = 0; i < xg.size(); ++i)
        u[i] = expl(-(long double)S0(xg[i]) / (long double)eps);
    return u;
}

}  // namespace

TEST_CASE("heat kernel convolution spreads a Gaussian by 2 eps t") {
    double sigma0 = 0.2, eps = 0.05, t = 0.5;
    auto xg = linspace(-6.0, 6.0, 4001);
    auto u0 = gaussian_data(xg, sigma0);
    bool warn = true;
    auto ut = heat_kernel_convolve(xg, u0, t, eps, &warn);
    CHECK_FALSE(warn);
    // closed form: sigma0/sqrt(sigma0^2 + 2 eps t) exp(-x^2/(2 (sigma0^2+2 eps t)))
    double s2 = sigma0 * sigma0 + 2 * eps * t;
    double amp = sigma0 / std::sqrt(s2);
    for (std::size_t i = 500; i < xg.size(); i += 250) {
        double expect = amp * std::exp(-xg[i] * xg[i] / (2 * s2));
        CHECK(double(ut[i]) == doctest::Approx(expect).epsilon(1e-6));
    }

    // Mass conservation within 1e-4 relative.
    long double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i + 1 < xg.size(); ++i) {
        m0 += 0.5L * (u0[i] + u0[i + 1]);
        m1 += 0.5L * (ut[i] + ut[i + 1]);
    }
    CHECK(std::fabs(double(m1 / m0) - 1.0) <= 1e-4);

    // Narrow margins trip the mass-leak warning.
    auto xn = linspace(-0.4, 0.4, 201);
    bool warn2 = false;
    heat_kernel_convolve(xn, gaussian_data(xn, 0.2), 0.5, 0.05, &warn2);
    CHECK(warn2);
}

TEST_CASE("t -> 0+ returns the initial data within O(t)") {
    auto xg = linspace(-3.0, 3.0, 1501);
    auto u0 = gaussian_data(xg, 0.5);
    auto ut = heat_kernel_convolve(xg, u0, 1e-4, 0.05, nullptr);
    for (std::size_t i = 100; i + 100 < xg.size(); i += 50)
        CHECK(double(ut[i]) == doctest::Approx(double(u0[i])).epsilon(1e-3));
}

TEST_CASE("theta-scheme solver agrees with the kernel on pure diffusion") {
    double eps = 0.05, t = 0.5;
    auto xg = linspace(-6.0, 6.0, 6001);
    auto u0 = gaussian_data(xg, 0.2);
    auto kernel = heat_kernel_convolve(xg, u0, t, eps, nullptr);
    FdOptions opt;
    opt.dt = 2.5e-4;
    auto field = fd_parabolic_solve(heat(), xg, u0, eps, {0.0, t}, opt);
    auto fd = field.slice(1);
    long double sup_ref = 0, sup_diff = 0;
    for (std::size_t i = 0; i < xg.size(); ++i) {
        sup_ref = std::max(sup_ref, kernel[i]);
        sup_diff = std::max(sup_diff, fabsl(fd[i] - kernel[i]));
    }
    CHECK(double(sup_diff / sup_ref) <= 1e-3);

    // Mass conserved within 1e-4 relative.
    long double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i + 1 < xg.size(); ++i) {
        m0 += 0.5L * (u0[i] + u0[i + 1]);
        m1 += 0.5L * (fd[i] + fd[i + 1]);
    }
    CHECK(std::fabs(double(m1 / m0) - 1.0) <= 1e-4);

    // lambda = 0 jump symbol reduces exactly to the diffusion path.
    auto jump0 = HamiltonianSymbol::jump(Coefficient::constant(1.0), Coefficient::constant(0.0),
                                         0.0, 1.0);
    auto field_j = fd_parabolic_solve(jump0, xg, u0, eps, {0.0, t}, opt);
    CHECK(field_j.values == field.values);
}

TEST_CASE("constant potential damps the solution by exp(-V t / eps)") {
    double eps = 0.05, t = 0.3, V = 0.2;
    auto xg = linspace(-5.0, 5.0, 2001);
    auto u0 = gaussian_data(xg, 0.3);
    FdOptions opt;
    opt.dt = 5e-4;
    auto plain = fd_parabolic_solve(heat(), xg, u0, eps, {0.0, t}, opt);
    auto damped = fd_parabolic_solve(
        HamiltonianSymbol::quadratic_potential(Coefficient::constant(1.0),
                                               Coefficient::constant(V)),
        xg, u0, eps, {0.0, t}, opt);
    double factor = std::exp(-V * t / eps);
    for (std::size_t i = 400; i + 400 < xg.size(); i += 100)
        CHECK(double(damped.values[damped.idx(1, i)]) ==
              doctest::Approx(double(plain.values[plain.idx(1, i)]) * factor).epsilon(2e-3));
}

TEST_CASE("maximum principle for nonnegative potential and positive jump rate") {
    double eps = 0.05;
    auto xg = linspace(-5.0, 5.0, 1001);
    auto u0 = gaussian_data(xg, 0.4);
    auto sym = HamiltonianSymbol::jump(Coefficient::constant(1.0), Coefficient::constant(0.1),
                                       0.5, 0.6);
    FdOptions opt;
    opt.dt = 5e-4;
    auto field = fd_parabolic_solve(sym, xg, u0, eps, linspace(0.0, 0.5, 11), opt);
    long double max0 = 0;
    for (auto v : u0) max0 = std::max(max0, v);
    for (std::size_t ti = 0; ti < field.tgrid.size(); ++ti) {
        long double m = 0;
        for (auto v : field.slice(ti)) {
            CHECK(double(v) >= 0.0);
            m = std::max(m, v);
        }
        CHECK(double(m) <= double(max0) * (1.0 + 1e-12));
    }
}

TEST_CASE("discrete generator matches the tunnel symbol on WKB data") {
    // eps u_t / u at t=0+ should equal -H(x, S0'(x)) + O(eps) for the
    // convention fixed here (potential as killing rate, jump shift x - eps nu0).
    double eps = 0.01;
    auto sym = HamiltonianSymbol::jump(Coefficient::constant(1.0), Coefficient::constant(0.0),
                                       0.5, 0.8);
    auto S0 = [](double x) { return 0.1 * x * x + 0.3 * x + 0.5; };
    auto S0p = [](double x) { return 0.2 * x + 0.3; };
    auto xg = linspace(-2.0, 2.0, 8001);
    auto u0 = wkb_data(xg, S0, eps);
    double dt = 1e-7;
    FdOptions opt;
    opt.dt = dt;
    opt.theta = 0.5;
    auto field = fd_parabolic_solve(sym, xg, u0, eps, {0.0, dt}, opt);
    for (std::size_t i = 1000; i + 1000 < xg.size(); i += 1500) {
        double lhs =
            double((long double)eps *
                   (field.values[field.idx(1, i)] - u0[i]) / ((long double)dt * u0[i]));
        double rhs = sym.eval(xg[i], S0p(xg[i]));
        CHECK(lhs == doctest::Approx(rhs).epsilon(0.02));
    }
}

TEST_CASE("varadhan extraction") {
    double eps = 0.01;
    auto prof = profiles::tanh_plus();
    auto xg = linspace(-2.0, 2.0, 401);
    auto u0 = wkb_data(xg, prof.S0, eps);
    auto phi = varadhan_extract(u0, eps);
    for (std::size_t i = 0; i < xg.size(); i += 40)
        CHECK(phi[i] == doctest::Approx(prof.S0(xg[i])).epsilon(1e-10));
    CHECK_THROWS_AS(varadhan_extract({1.0L, 0.0L}, eps), Error);
}

TEST_CASE("kernel evolution of WKB data reproduces the fan action") {
    double eps = 0.01, t = 0.5;
    auto prof = profiles::tanh_plus();
    auto xg = linspace(-4.0, 3.0, 3501);
    auto u0 = wkb_data(xg, prof.S0, eps);
    auto ut = heat_kernel_convolve(xg, u0, t, eps, nullptr);
    auto phi_num = varadhan_extract(ut, eps);

    FanInitial init;
    init.labels = grid_with_spacing(-4.0, 3.0, 2e-3);
    init.p0 = prof.p0;
    init.S0 = prof.S0;
    init.p0_prime = prof.p0_prime;
    auto fan = evolve_fan(heat(), init, linspace(0.0, t, 126));
    auto phase = min_action(branch_decompose(snapshot(fan, t)), linspace(-1.0, 1.0, 101));

    double bound = 3.0 * eps * std::fabs(std::log(eps));
    double h = xg[1] - xg[0];
    for (std::size_t i = 0; i < phase.xgrid.size(); ++i) {
        std::size_t gi = std::size_t(std::lround((phase.xgrid[i] - xg.front()) / h));
        CHECK(std::fabs(phi_num[gi] - phase.phi[i]) <= bound);
    }
}

TEST_CASE("laplace quadrature versus the closed formula") {
    // S = xi^2, amp = 1: integral = sqrt(pi eps), formula identical.
    auto res = laplace_quadrature([](double xi) { return xi * xi; },
                                  [](double) { return 1.0; }, 1e-2, {-1.0, 1.0});
    CHECK(std::fabs(res.xi_star) <= 1e-9);
    CHECK(res.formula == doctest::Approx(std::sqrt(M_PI * 1e-2)).epsilon(1e-10));
    CHECK(std::fabs(res.quadrature / res.formula - 1.0) <= 1e-3);

    // Zero amplitude integrates to zero.
    auto zero = laplace_quadrature([](double xi) { return xi * xi; },
                                   [](double) { return 0.0; }, 1e-2, {-1.0, 1.0});
    CHECK(zero.formula == 0.0);
    CHECK(zero.quadrature == doctest::Approx(0.0));

    // Quartic correction vanishes as eps -> 0.
    auto S = [](double xi) { return xi * xi + xi * xi * xi * xi; };
    double prev = 1e9;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        auto r = laplace_quadrature(S, [](double) { return 1.0; }, eps, {-1.0, 1.0});
        double dev = std::fabs(r.quadrature / r.formula - 1.0);
        CHECK(dev < prev);
        prev = dev;
    }
    CHECK(prev <= 1e-3);

    // Boundary minimum and degenerate curvature are rejected.
    CHECK_THROWS_AS(laplace_quadrature([](double xi) { return xi; },
                                       [](double) { return 1.0; }, 1e-2, {0.0, 1.0}),
                    Error);
    CHECK_THROWS_AS(laplace_quadrature([](double xi) { return xi * xi * xi * xi; },
                                       [](double) { return 1.0; }, 1e-2, {-1.0, 1.0}),
                    Error);
}

TEST_CASE("time reversal: identity at t = 0, O(eps) decay, post-caustic refusal") {
    auto prof = profiles::tanh_plus();
    FanInitial init;
    init.labels = grid_with_spacing(-2.5, 2.5, 2e-3);
    init.p0 = prof.p0;
    init.S0 = prof.S0;
    init.p0_prime = prof.p0_prime;
    auto fan = evolve_fan(heat(), init, linspace(0.0, 0.5, 126));

    auto phi0 = [](double) { return 1.0; };
    auto rep0 = time_reversal_check(heat(), fan, 0.0, 1e-2, prof.S0, phi0, {-1.0, 1.0});
    CHECK(rep0.residual == 0.0);

    double prev = 1e9;
    for (double eps : {1e-2, 5e-3, 2.5e-3}) {
        auto rep = time_reversal_check(heat(), fan, 0.5, eps, prof.S0, phi0, {-1.0, 1.0});
        CHECK(rep.residual <= 1e-1);
        CHECK(rep.residual < prev);
        prev = rep.residual;
    }

    // Concave data past the caustic: the check is refused by precondition.
    auto prof_m = profiles::tanh_minus();
    FanInitial initm;
    initm.labels = grid_with_spacing(-2.5, 2.5, 2e-3);
    initm.p0 = prof_m.p0;
    initm.S0 = prof_m.S0;
    initm.p0_prime = prof_m.p0_prime;
    auto fanm = evolve_fan(heat(), initm, linspace(0.0, 0.8, 201));
    CHECK_THROWS_WITH_AS(
        time_reversal_check(heat(), fanm, 0.7, 1e-2, prof_m.S0, phi0, {-0.5, 0.5}),
        doctest::Contains("refused"), Error);
}

TEST_CASE("square root of the transported density equals the transport amplitude") {
    // x-dependent diffusion makes tr P_xp nonzero; the identity
    // sqrt(rho_reg) = psi0 |Dx0/Dx|^{1/2} couples the Madelung coefficient
    // to the transport solution integrated independently.
    auto sym = HamiltonianSymbol::quadratic(
        Coefficient::custom([](double x) { return 1.0 + 0.2 * std::sin(x); }));
    auto prof = profiles::tanh_plus();
    FanInitial init;
    init.labels = grid_with_spacing(-1.5, 1.5, 5e-3);
    init.p0 = prof.p0;
    init.S0 = prof.S0;
    init.p0_prime = prof.p0_prime;
    auto tg = linspace(0.0, 0.4, 81);
    auto fan = std::make_shared<TrajectoryFan>(evolve_fan(sym, init, tg));

    auto psi00 = [](double x0) { return 1.0 + 0.1 * std::cos(x0); };
    RegularDensity rd(sym, fan, [&](double x0) { return psi00(x0) * psi00(x0); },
                      ARule::madelung(), {});

    for (std::size_t li = 40; li + 40 < fan->n_labels(); li += 97) {
        // Transport amplitude along this trajectory: dpsi/dt = (1/2) H_xp psi.
        double psi = psi00(fan->labels[li]);
        for (std::size_t ti = 0; ti + 1 < tg.size(); ++ti) {
            double h = tg[ti + 1] - tg[ti];
            auto slope = [&](std::size_t k) {
                return 0.5 * sym.cross_xp(fan->x[k], fan->p[k], 0.0);
            };
            double k1 = slope(fan->idx(ti, li)) * psi;
            double k2 = slope(fan->idx(ti + 1, li)) * (psi + h * k1);
            psi += h * 0.5 * (k1 + k2);
        }
        std::size_t k_end = fan->idx(tg.size() - 1, li);
        double amplitude = psi / std::sqrt(fan->J[k_end]);
        double sqrt_rho = std::sqrt(rd.eval(fan->x[k_end], tg.back()));
        CHECK(sqrt_rho == doctest::Approx(amplitude).epsilon(1e-4));
    }
}
