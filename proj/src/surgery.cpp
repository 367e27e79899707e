#include "tunnelflow/surgery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tunnelflow {

void BlendProfile::validate() const {
    if (off) return;
    require(eps > 0.0 && beta > 0.0, "blend profile: eps and beta must be positive");
    require(eps <= beta / 10.0,
            detail::strf("blend profile: scale condition violated (eps=%g > beta/10=%g)", eps,
                         beta / 10.0));
    require(bool(B), "blend profile: missing switch function");
    require(B(-40.0) <= 1e-12 && B(40.0) >= 1.0 - 1e-12,
            "blend profile: switch must increase from 0 to 1");
    double prev = B(-40.0);
    for (double z = -39.0; z <= 40.0; z += 1.0) {
        double v = B(z);
        require(v >= prev - 1e-12, "blend profile: switch must be monotone");
        prev = v;
    }
}

BlendProfile BlendProfile::logistic(double eps, double t_center, double A, double beta) {
    BlendProfile b;
    b.B = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    b.eps = eps;
    b.t_center = t_center;
    b.A = A;
    b.beta = beta;
    b.validate();
    return b;
}

BlendProfile BlendProfile::disabled(double beta) {
    BlendProfile b;
    b.B = [](double) { return 0.0; };
    b.off = true;
    b.beta = beta;
    return b;
}

namespace {

// Inverts the strictly increasing map u -> H_p(x=0, u, t) (spatially
// homogeneous symbol) by bracketed bisection.
double invert_grad_p(const HamiltonianSymbol& sym, double target, double u_lo, double u_hi,
                     double t) {
    double lo = std::min(u_lo, u_hi) - 1.0, hi = std::max(u_lo, u_hi) + 1.0;
    auto g = [&](double u) { return sym.grad_p(0.0, u, t); };
    for (int k = 0; k < 80 && g(lo) > target; ++k) lo -= std::max(1.0, hi - lo);
    for (int k = 0; k < 80 && g(hi) < target; ++k) hi += std::max(1.0, hi - lo);
    if (g(lo) > target || g(hi) < target)
        fail("insertion: root bracketing for P'_xi failed (non-invertible symbol?)");
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (g(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

Insertion insertion_initial_data(const HamiltonianSymbol& sym,
                                 const std::function<double(double)>& u0, double x0_star,
                                 double beta, double t_max) {
    require(beta > 0.0, "insertion: beta must be positive");
    require(sym.spatially_homogeneous(),
            "insertion: the implicit-equation construction needs a spatially homogeneous "
            "symbol");
    double ul = u0(x0_star - beta);
    double ur = u0(x0_star + beta);
    require(std::fabs(ul - ur) > 1e-12,
            "insertion: endpoint matching degenerates (u0 equal at both endpoints)");
    // Convexity in the momentum window makes P'_xi invertible.
    auto conv = sym.check_convexity({0.0, 0.0},
                                    {std::min(ul, ur) - 1.0, std::max(ul, ur) + 1.0}, 64);
    require(conv.certified, "insertion: Hess_xi P is not positive on the working window");

    Insertion ins;
    ins.x0_star = x0_star;
    ins.beta = beta;
    ins.p_left = ul;
    ins.p_right = ur;
    auto K = [sym, u0, x0_star, beta](double t) {
        double gl = sym.grad_p(0.0, u0(x0_star - beta), t);
        double gr = sym.grad_p(0.0, u0(x0_star + beta), t);
        return (gl - gr) / (2.0 * beta);
    };
    auto b = [sym, u0, x0_star, beta, K](double t) {
        double gl = sym.grad_p(0.0, u0(x0_star - beta), t);
        return gl + K(t) * (x0_star - beta);
    };
    ins.K = K;
    ins.b = b;
    ins.u1 = [sym, u0, x0_star, beta, K, b](double x0, double t) {
        double target = -K(t) * x0 + b(t);
        return invert_grad_p(sym, target, u0(x0_star - beta), u0(x0_star + beta), t);
    };

    // Focusing time: the insertion Jacobian 1 - int_0^t K vanishes.
    if (!sym.time_dependent()) {
        double k0 = K(0.0);
        require(k0 > 0.0, "insertion: compression constant K must be positive for focusing");
        ins.t_focus = 1.0 / k0;
    } else {
        double acc = 0.0, t = 0.0;
        const double dt = 1e-4 * t_max;
        while (acc < 1.0 && t < 4.0 * t_max) {
            acc += 0.5 * (K(t) + K(t + dt)) * dt;
            t += dt;
        }
        require(acc >= 1.0, "insertion: Jacobian never focuses within the horizon");
        ins.t_focus = t;
    }
    return ins;
}

namespace {

// Initial-shift profile: rises linearly to 1 across the block [a1, a2] (its
// derivative supplies the Jacobian floor) and falls back to 0 over a tail of
// kShiftTail block widths so the modification stays local.
constexpr double kShiftTail = 4.0;

double shift_value(double x0, double a1, double a2) {
    double w = a2 - a1;
    if (x0 <= a1) return 0.0;
    if (x0 <= a2) return (x0 - a1) / w;
    double tail_end = a2 + kShiftTail * w;
    if (x0 >= tail_end) return 0.0;
    return 1.0 - (x0 - a2) / (kShiftTail * w);
}

double shift_slope(double x0, double a1, double a2, bool inside_block) {
    double w = a2 - a1;
    if (inside_block) return 1.0 / w;
    if (x0 > a2 && x0 < a2 + kShiftTail * w) return -1.0 / (kShiftTail * w);
    return 0.0;
}

void finalize_blended(BlendedFan& result, const BlendProfile& blend, double t_windows_lo) {
    const TrajectoryFan& fan = result.fan;
    double min_j = std::numeric_limits<double>::infinity();
    for (std::size_t ti = 0; ti < fan.n_times(); ++ti) {
        if (fan.tgrid[ti] < t_windows_lo) continue;
        for (std::size_t li = result.block_lo; li <= result.block_hi; ++li)
            min_j = std::min(min_j, fan.J[fan.idx(ti, li)]);
    }
    result.min_block_J = std::isfinite(min_j) ? min_j : 0.0;
    result.floor_C = blend.off || blend.eps <= 0.0 ? 0.0 : result.min_block_J / blend.eps;
}

}  // namespace

bool absorb_and_check_sorted(TrajectoryFan& fan, std::size_t block_lo, std::size_t block_hi) {
    const std::size_t nl = fan.n_labels();
    bool sorted = true;
    for (std::size_t ti = 0; ti < fan.n_times(); ++ti) {
        double edge_l = fan.x[fan.idx(ti, block_lo)];
        double edge_r = fan.x[fan.idx(ti, block_hi)];
        for (std::size_t li = 0; li < block_lo; ++li)
            if (fan.absorbed_at[li] > ti && fan.x[fan.idx(ti, li)] >= edge_l)
                fan.absorbed_at[li] = std::uint32_t(ti);
        for (std::size_t li = block_hi + 1; li < nl; ++li)
            if (fan.absorbed_at[li] > ti && fan.x[fan.idx(ti, li)] <= edge_r)
                fan.absorbed_at[li] = std::uint32_t(ti);
        double prev = -std::numeric_limits<double>::infinity();
        for (std::size_t li = 0; li < nl; ++li) {
            if (fan.absorbed_at[li] <= ti) continue;
            double x = fan.x[fan.idx(ti, li)];
            if (x <= prev) sorted = false;
            prev = x;
        }
    }
    return sorted;
}

BlendedFan blended_fan_homogeneous(const HamiltonianSymbol& sym,
                                   const std::function<double(double)>& u0,
                                   const std::function<double(double)>& u0_prime,
                                   const Insertion& ins, const BlendProfile& blend,
                                   const std::vector<double>& labels,
                                   const std::vector<double>& tgrid,
                                   const EvolveOptions& options) {
    require(tgrid.size() >= 2, "blended_fan_homogeneous: need at least 2 time nodes");
    if (!blend.off) blend.validate();
    require(!sym.time_dependent() || blend.off,
            "blended_fan_homogeneous: time-dependent symbols are supported with the blend "
            "disabled only");

    const std::size_t nl = labels.size();
    const double a1 = ins.x0_star - ins.beta;
    const double a2 = ins.x0_star + ins.beta;
    const double eps = blend.off ? 0.0 : blend.eps;
    const double A = blend.off ? 0.0 : blend.A;

    BlendedFan result;
    result.t_center = blend.t_center;
    result.shift_eps = A * eps;
    result.block_lo = nl;
    result.block_hi = 0;

    TrajectoryFan& fan = result.fan;
    fan.labels = labels;
    fan.tgrid = tgrid;
    fan.x.resize(nl * tgrid.size());
    fan.p.resize(nl * tgrid.size());
    fan.S.resize(nl * tgrid.size());
    fan.J.resize(nl * tgrid.size());
    fan.dpdx0.resize(nl * tgrid.size());
    fan.absorbed_at.assign(nl, std::uint32_t(tgrid.size()));

    // Freeze speed from the Rankine-Hugoniot ratio of the endpoint data.
    auto c_of = [&](double t) {
        double hl = sym.eval(0.0, ins.p_left, t);
        double hr = sym.eval(0.0, ins.p_right, t);
        return (hl - hr) / (ins.p_left - ins.p_right);
    };

    const double horizon = tgrid.back() - tgrid.front();
    const double max_h = options.substep_fraction * horizon;

    for (std::size_t li = 0; li < nl; ++li) {
        double x0 = labels[li];
        bool inside = x0 >= a1 && x0 <= a2;
        if (inside) {
            result.block_lo = std::min(result.block_lo, li);
            result.block_hi = std::max(result.block_hi, li);
        }
        double x = x0 + A * eps * shift_value(x0, a1, a2);
        double J = 1.0 + A * eps * shift_slope(x0, a1, a2, inside);
        double p = inside ? ins.u1(x0, tgrid.front()) : u0(x0);
        double S = 0.0;

        fan.x[fan.idx(0, li)] = x;
        fan.p[fan.idx(0, li)] = p;
        fan.S[fan.idx(0, li)] = S;
        fan.J[fan.idx(0, li)] = J;
        fan.dpdx0[fan.idx(0, li)] = inside ? -ins.K(0.0) / sym.hess_pp(0.0, p, 0.0)
                                           : u0_prime(x0);

        for (std::size_t ti = 1; ti < tgrid.size(); ++ti) {
            double t0 = tgrid[ti - 1], t1 = tgrid[ti];
            std::size_t nsub = std::max<std::size_t>(1, std::size_t(std::ceil((t1 - t0) / max_h)));
            double h = (t1 - t0) / double(nsub);
            for (std::size_t k = 0; k < nsub; ++k) {
                double tk = t0 + double(k) * h;
                // RK4 on (x, S, J); p is carried by the label.
                auto rhs = [&](double t, double /*xc*/, double& dx, double& dS, double& dJ) {
                    if (inside) {
                        double bw = blend.weight(t);
                        double pu = ins.u1(x0, t);
                        double vel = sym.grad_p(0.0, pu, t);
                        dx = (1.0 - bw) * vel + bw * c_of(t);
                        dS = pu * dx - sym.eval(0.0, pu, t);
                        dJ = -(1.0 - bw) * ins.K(t);
                    } else {
                        double pu = u0(x0);
                        dx = sym.grad_p(0.0, pu, t);
                        dS = pu * dx - sym.eval(0.0, pu, t);
                        dJ = sym.hess_pp(0.0, pu, t) * u0_prime(x0);
                    }
                };
                double k1x, k1S, k1J, k2x, k2S, k2J, k3x, k3S, k3J, k4x, k4S, k4J;
                rhs(tk, x, k1x, k1S, k1J);
                rhs(tk + 0.5 * h, x + 0.5 * h * k1x, k2x, k2S, k2J);
                rhs(tk + 0.5 * h, x + 0.5 * h * k2x, k3x, k3S, k3J);
                rhs(tk + h, x + h * k3x, k4x, k4S, k4J);
                x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
                S += h / 6.0 * (k1S + 2 * k2S + 2 * k3S + k4S);
                J += h / 6.0 * (k1J + 2 * k2J + 2 * k3J + k4J);
            }
            p = inside ? ins.u1(x0, t1) : u0(x0);
            fan.x[fan.idx(ti, li)] = x;
            fan.p[fan.idx(ti, li)] = p;
            fan.S[fan.idx(ti, li)] = S;
            fan.J[fan.idx(ti, li)] = J;
            fan.dpdx0[fan.idx(ti, li)] = inside ? -ins.K(t1) / sym.hess_pp(0.0, p, t1)
                                                : u0_prime(x0);
        }
    }
    require(result.block_lo <= result.block_hi,
            "blended_fan_homogeneous: no labels inside the insertion");

    result.sorted_live = absorb_and_check_sorted(fan, result.block_lo, result.block_hi);
    finalize_blended(result, blend, blend.t_center + 2.0 * blend.beta);
    if (!blend.off && blend.enforce_floor && result.floor_C <= 0.0)
        fail(detail::strf("blended_fan_homogeneous: Jacobian floor failed (C=%g, A=%g must be "
                          "retuned)",
                          result.floor_C, blend.A));
    return result;
}

SurgeredManifold manifold_surgery(const LagrangianCurve& curve, double tol) {
    auto field = branch_decompose(curve);
    const auto& branches = field.branches();
    if (branches.size() == 1) {
        // Degenerate fold of zero width: surgery is the identity.
        SurgeredManifold out;
        out.t1_star = curve.t;
        out.points = curve.points;
        out.angle_lo = out.angle_hi = 0;
        out.x1_star = curve.points.front().x;
        return out;
    }
    if (branches.size() == 2) {
        // Zero-width fold (surgery exactly at t*): the vertical segment
        // degenerates to a point and the surgery is the identity.
        SurgeredManifold out;
        out.t1_star = curve.t;
        out.points = curve.points;
        out.angle_lo = out.angle_hi = branches[0].last;
        out.x1_star = curve.points[branches[0].last].x;
        out.p_left = out.p_right = curve.points[branches[0].last].p;
        return out;
    }
    require(branches.size() == 3,
            detail::strf("manifold_surgery: expected one fold (3 branches), found %zu",
                         branches.size()));

    // Equal-action point of the outer branches inside the fold window.
    const Branch& mid = branches[1];
    double lo = std::max(branches[0].x_min, mid.x_min);
    double hi = std::min(branches[2].x_max, mid.x_max);
    require(hi > lo, "manifold_surgery: fold window is empty");
    auto gap = [&](double x) -> double {
        auto cl = field.eval_branch(0, x);
        auto cr = field.eval_branch(2, x);
        require(bool(cl) && bool(cr), "manifold_surgery: outer branches do not cover the fold");
        return cl->S - cr->S;
    };
    double ga = gap(lo), gb = gap(hi);
    require(ga * gb <= 0.0, "manifold_surgery: no equal-action point inside the fold window");
    double a = lo, b2 = hi;
    while (b2 - a > tol) {
        double m = 0.5 * (a + b2);
        if (ga * gap(m) <= 0.0)
            b2 = m;
        else
            a = m;
    }
    SurgeredManifold out;
    out.t1_star = curve.t;
    out.x1_star = 0.5 * (a + b2);

    auto cl = field.eval_branch(0, out.x1_star);
    auto cr = field.eval_branch(2, out.x1_star);
    require(bool(cl) && bool(cr), "manifold_surgery: equal-action evaluation failed");
    require(std::fabs(cl->S - cr->S) <= std::max(tol, 1e-6 * (1.0 + std::fabs(cl->S))),
            "manifold_surgery: actions fail to match at the junction");
    out.p_left = cl->p;
    out.p_right = cr->p;

    // Essential left part, vertical segment, essential right part. The
    // junction action is single-valued: both angle points carry the common
    // equal-action value (the branch values agree within tol).
    double S_junction = 0.5 * (cl->S + cr->S);
    const auto& pts = curve.points;
    for (std::size_t i = branches[0].first; i <= branches[0].last; ++i)
        if (pts[i].x < out.x1_star) out.points.push_back(pts[i]);
    CurvePoint jl{cl->x0, out.x1_star, cl->p, S_junction, cl->J};
    CurvePoint jr{cr->x0, out.x1_star, cr->p, S_junction, cr->J};
    out.points.push_back(jl);
    out.angle_lo = out.points.size() - 1;

    double spacing = std::fabs(pts[1].x0 - pts[0].x0);
    std::size_t nseg = std::max<std::size_t>(
        41, std::size_t(std::fabs(out.p_left - out.p_right) * curve.t / std::max(spacing, 1e-9)));
    for (std::size_t k = 1; k < nseg; ++k) {
        double w = double(k) / double(nseg);
        CurvePoint cp;
        cp.x = out.x1_star;
        cp.p = out.p_left + w * (out.p_right - out.p_left);
        cp.S = S_junction;  // action is continuous across the vertical segment (dx = 0)
        cp.x0 = cl->x0 + w * (cr->x0 - cl->x0);
        cp.J = 0.0;
        out.points.push_back(cp);
    }
    out.points.push_back(jr);
    out.angle_hi = out.points.size() - 1;
    for (std::size_t i = branches[2].first; i <= branches[2].last; ++i)
        if (pts[i].x > out.x1_star) out.points.push_back(pts[i]);
    return out;
}

namespace {

// Backward flow of one phase point with its action.
void backflow_point(const HamiltonianSymbol& sym, CurvePoint& pt, double t_from, double t1,
                    std::size_t nsub) {
    TrajectoryState s{pt.x, pt.p, pt.S, 1.0, 0.0};
    s = integrate_state(sym, s, t_from, t_from - t1, nsub);
    pt.x = s.x;
    pt.p = s.p;
    pt.S = s.S;
}

}  // namespace

BackflowResult backflow_and_blend(const HamiltonianSymbol& sym, SurgeredManifold surgered,
                                  const BlendProfile& blend, double t_end, double dt_out,
                                  double t1, const EvolveOptions& options) {
    require(!sym.time_dependent(),
            "backflow_and_blend: the backward flow needs a time-independent symbol");
    if (!blend.off) blend.validate();
    if (t1 <= 0.0) t1 = blend.beta / 2.0;

    // Back-flow, halving t1 until the backflowed curve is a strictly
    // increasing graph (only regular points).
    bool ok = false;
    for (int attempt = 0; attempt < 7 && !ok; ++attempt) {
        surgered.backflowed = surgered.points;
        std::size_t nsub = std::max<std::size_t>(64, std::size_t(t1 / 1e-4));
        for (auto& pt : surgered.backflowed)
            backflow_point(sym, pt, surgered.t1_star, t1, nsub);
        ok = true;
        for (std::size_t i = 1; i < surgered.backflowed.size(); ++i)
            if (surgered.backflowed[i].x <= surgered.backflowed[i - 1].x) {
                ok = false;
                break;
            }
        if (!ok) t1 *= 0.5;
    }
    require(ok, "backflow_and_blend: backflowed segment keeps refolding (t1 too large)");
    surgered.t1 = t1;
    surgered.a1 = surgered.backflowed[surgered.angle_lo].x;
    surgered.a2 = surgered.backflowed[surgered.angle_hi].x;

    const double t_start = surgered.t1_star - t1;
    require(t_end > t_start, "backflow_and_blend: horizon ends before the restart time");

    const std::size_t nl = surgered.backflowed.size();
    const double eps = blend.off ? 0.0 : blend.eps;
    const double A = blend.off ? 0.0 : blend.A;
    const double a1 = surgered.a1, a2 = surgered.a2;

    BlendedFan result;
    result.block_lo = surgered.angle_lo;
    result.block_hi = surgered.angle_hi;
    result.t_center = blend.t_center;
    result.shift_eps = A * eps;

    TrajectoryFan& fan = result.fan;
    std::size_t nt = std::size_t(std::ceil((t_end - t_start) / dt_out)) + 1;
    fan.tgrid = linspace(t_start, t_end, std::max<std::size_t>(nt, 2));
    fan.labels.resize(nl);
    fan.x.resize(nl * fan.tgrid.size());
    fan.p.resize(nl * fan.tgrid.size());
    fan.S.resize(nl * fan.tgrid.size());
    fan.J.resize(nl * fan.tgrid.size());
    fan.dpdx0.resize(nl * fan.tgrid.size());
    fan.absorbed_at.assign(nl, std::uint32_t(fan.tgrid.size()));

    // Coupled state: the freeze speed couples every block label to the two
    // angle labels, so all labels advance in lockstep.
    std::vector<double> x(nl), p(nl), S(nl), J(nl), K(nl);
    for (std::size_t l = 0; l < nl; ++l) {
        const CurvePoint& pt = surgered.backflowed[l];
        fan.labels[l] = pt.x;
        bool inside = l >= result.block_lo && l <= result.block_hi;
        x[l] = pt.x + A * eps * shift_value(pt.x, a1, a2);
        p[l] = pt.p;
        S[l] = pt.S;
        J[l] = 1.0 + A * eps * shift_slope(pt.x, a1, a2, inside);
        // dp/dx0 from neighboring backflowed points.
        std::size_t ln = l > 0 ? l - 1 : l;
        std::size_t lp = l + 1 < nl ? l + 1 : l;
        K[l] = (surgered.backflowed[lp].p - surgered.backflowed[ln].p) /
               (surgered.backflowed[lp].x - surgered.backflowed[ln].x);
    }

    auto store = [&](std::size_t ti) {
        for (std::size_t l = 0; l < nl; ++l) {
            fan.x[fan.idx(ti, l)] = x[l];
            fan.p[fan.idx(ti, l)] = p[l];
            fan.S[fan.idx(ti, l)] = S[l];
            fan.J[fan.idx(ti, l)] = J[l];
            fan.dpdx0[fan.idx(ti, l)] = K[l];
        }
    };
    store(0);

    struct Deriv {
        std::vector<double> x, p, S, J, K;
    };
    Deriv d1, d2, d3, d4;
    for (Deriv* d : {&d1, &d2, &d3, &d4}) {
        d->x.resize(nl);
        d->p.resize(nl);
        d->S.resize(nl);
        d->J.resize(nl);
        d->K.resize(nl);
    }
    std::vector<double> xs(nl), ps(nl), Ss(nl), Js(nl), Ks(nl);

    auto rhs = [&](double t, const std::vector<double>& xv, const std::vector<double>& pv,
                   const std::vector<double>& Jv, const std::vector<double>& Kv, Deriv& out) {
        double bw = blend.weight(t);
        double c = 0.0;
        if (bw > 0.0) {
            double pl = pv[result.block_lo], pr = pv[result.block_hi];
            double xl = xv[result.block_lo], xr = xv[result.block_hi];
            double dp = pl - pr;
            if (std::fabs(dp) > 1e-12)
                c = (sym.eval(xl, pl, t) - sym.eval(xr, pr, t)) / dp;
            else
                c = sym.grad_p(0.5 * (xl + xr), 0.5 * (pl + pr), t);
        }
        for (std::size_t l = 0; l < nl; ++l) {
            bool inside = l >= result.block_lo && l <= result.block_hi;
            double w = inside ? bw : 0.0;
            double hp = sym.grad_p(xv[l], pv[l], t);
            double hx = sym.grad_x(xv[l], pv[l], t);
            double hpp = sym.hess_pp(xv[l], pv[l], t);
            double hxp = sym.cross_xp(xv[l], pv[l], t);
            double hxx = sym.hess_xx(xv[l], pv[l], t);
            out.x[l] = (1.0 - w) * hp + w * c;
            out.p[l] = -(1.0 - w) * hx;
            out.S[l] = pv[l] * out.x[l] - sym.eval(xv[l], pv[l], t);
            out.J[l] = (1.0 - w) * (hxp * Jv[l] + hpp * Kv[l]);
            out.K[l] = -(1.0 - w) * (hxx * Jv[l] + hxp * Kv[l]);
        }
    };

    const double horizon = t_end - t_start;
    const double max_h = options.substep_fraction * horizon;
    for (std::size_t ti = 1; ti < fan.tgrid.size(); ++ti) {
        double t0 = fan.tgrid[ti - 1], tn = fan.tgrid[ti];
        std::size_t nsub = std::max<std::size_t>(1, std::size_t(std::ceil((tn - t0) / max_h)));
        double h = (tn - t0) / double(nsub);
        for (std::size_t k = 0; k < nsub; ++k) {
            double tk = t0 + double(k) * h;
            rhs(tk, x, p, J, K, d1);
            auto stage = [&](const Deriv& d, double f) {
                for (std::size_t l = 0; l < nl; ++l) {
                    xs[l] = x[l] + f * h * d.x[l];
                    ps[l] = p[l] + f * h * d.p[l];
                    Js[l] = J[l] + f * h * d.J[l];
                    Ks[l] = K[l] + f * h * d.K[l];
                }
            };
            stage(d1, 0.5);
            rhs(tk + 0.5 * h, xs, ps, Js, Ks, d2);
            stage(d2, 0.5);
            rhs(tk + 0.5 * h, xs, ps, Js, Ks, d3);
            stage(d3, 1.0);
            rhs(tk + h, xs, ps, Js, Ks, d4);
            for (std::size_t l = 0; l < nl; ++l) {
                x[l] += h / 6.0 * (d1.x[l] + 2 * d2.x[l] + 2 * d3.x[l] + d4.x[l]);
                p[l] += h / 6.0 * (d1.p[l] + 2 * d2.p[l] + 2 * d3.p[l] + d4.p[l]);
                S[l] += h / 6.0 * (d1.S[l] + 2 * d2.S[l] + 2 * d3.S[l] + d4.S[l]);
                J[l] += h / 6.0 * (d1.J[l] + 2 * d2.J[l] + 2 * d3.J[l] + d4.J[l]);
                K[l] += h / 6.0 * (d1.K[l] + 2 * d2.K[l] + 2 * d3.K[l] + d4.K[l]);
                if (!std::isfinite(x[l]) || !std::isfinite(p[l]))
                    fail(detail::strf("backflow_and_blend: blow-up at label %g", fan.labels[l]));
            }
        }
        store(ti);
    }

    result.sorted_live = absorb_and_check_sorted(fan, result.block_lo, result.block_hi);
    finalize_blended(result, blend, blend.t_center + 2.0 * blend.beta);
    if (!blend.off && blend.enforce_floor && result.floor_C <= 0.0)
        fail(detail::strf("backflow_and_blend: Jacobian floor failed (C=%g, A=%g must be "
                          "retuned)",
                          result.floor_C, blend.A));

    BackflowResult out;
    out.surgered = std::move(surgered);
    out.blended = std::move(result);
    return out;
}

double search_shift_constant(const std::function<double(double)>& floor_of_A, double A0,
                             int max_doublings) {
    double A = A0;
    for (int k = 0; k <= max_doublings; ++k) {
        double C = floor_of_A(A);
        if (C > 0.0) return A;
        A *= 2.0;
    }
    fail(detail::strf("search_shift_constant: no positive floor up to A=%g", A));
}

}  // namespace tunnelflow
