#include "tunnelflow/continuity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

namespace tunnelflow {

namespace {

double lerp_series(const std::vector<double>& ts, const std::vector<double>& vs, double t) {
    require(!ts.empty(), "stratum: empty sample series");
    if (t <= ts.front()) return vs.front();
    if (t >= ts.back()) return vs.back();
    auto it = std::upper_bound(ts.begin(), ts.end(), t);
    std::size_t i1 = std::size_t(it - ts.begin());
    std::size_t i0 = i1 - 1;
    double dt = ts[i1] - ts[i0];
    double w = dt > 0 ? (t - ts[i0]) / dt : 0.0;
    return (1 - w) * vs[i0] + w * vs[i1];
}

// One RK4 step of e' = F(t) + f e with F linear between F0 and F1.
double jump_ode_step(double e, double F0, double F1, double f, double dt) {
    auto rhs = [&](double theta, double ev) { return F0 + theta * (F1 - F0) + f * ev; };
    double k1 = rhs(0.0, e);
    double k2 = rhs(0.5, e + 0.5 * dt * k1);
    double k3 = rhs(0.5, e + 0.5 * dt * k2);
    double k4 = rhs(1.0, e + dt * k3);
    return e + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
}

}  // namespace

double ShockStratum::position(double tq) const { return lerp_series(t, x, tq); }
double ShockStratum::amplitude(double tq) const { return lerp_series(t, e, tq); }
double ShockStratum::speed(double tq) const { return lerp_series(t, velocity, tq); }

double stratum_velocity(const HamiltonianSymbol& sym, double x, double p_left, double p_right,
                        double t, double p_jump_tol) {
    double dp = p_left - p_right;
    if (std::fabs(dp) <= p_jump_tol)
        fail(detail::strf("stratum_velocity: momentum jump %g below tolerance at x=%g "
                          "(stratum degenerates)",
                          dp, x));
    return (sym.eval(x, p_left, t) - sym.eval(x, p_right, t)) / dp;
}

double amplitude_step(double e, double R_left, double R_right, double u_left, double u_right,
                      double phi_dot, double f_value, double dt) {
    double slack = 1e-7 * (1.0 + std::fabs(u_left) + std::fabs(u_right));
    if (!(u_left >= phi_dot - slack && u_right <= phi_dot + slack))
        fail(detail::strf("amplitude_step: trajectories do not enter the stratum "
                          "(u_left=%g, phi_dot=%g, u_right=%g)",
                          u_left, phi_dot, u_right));
    double F = (R_left * u_left - R_right * u_right) - phi_dot * (R_left - R_right);
    return jump_ode_step(e, F, F, f_value, dt);
}

ShockStratum merge_strata(const ShockStratum& s1, const ShockStratum& s2,
                          const HamiltonianSymbol& sym, double p_left_outer,
                          double p_right_outer, int child_id, double proximity) {
    require(!s1.t.empty() && !s2.t.empty(), "merge_strata: empty stratum path");
    double t_lo = std::max(s1.t.front(), s2.t.front());
    double t_hi = std::min(s1.t.back(), s2.t.back());
    require(t_lo <= t_hi, "merge_strata: stratum paths do not overlap in time");

    auto gap = [&](double t) { return s1.position(t) - s2.position(t); };
    std::vector<double> ts;
    for (double tv : s1.t)
        if (tv >= t_lo && tv <= t_hi) ts.push_back(tv);
    for (double tv : s2.t)
        if (tv >= t_lo && tv <= t_hi) ts.push_back(tv);
    ts.push_back(t_lo);
    ts.push_back(t_hi);
    std::sort(ts.begin(), ts.end());

    double t_prev = ts.front(), g_prev = gap(ts.front());
    double t_merge = std::numeric_limits<double>::quiet_NaN();
    double best_gap = std::numeric_limits<double>::infinity(), t_best = t_lo;
    for (double tv : ts) {
        double g = gap(tv);
        if (std::fabs(g) < best_gap) {
            best_gap = std::fabs(g);
            t_best = tv;
        }
        if (g == 0.0) {
            t_merge = tv;
            break;
        }
        if (g_prev * g < 0.0) {
            t_merge = t_prev + (tv - t_prev) * g_prev / (g_prev - g);
            break;
        }
        t_prev = tv;
        g_prev = g;
    }
    // Paths closing below the sampling proximity count as intersecting.
    if (!std::isfinite(t_merge) && best_gap <= proximity) t_merge = t_best;
    if (!std::isfinite(t_merge)) fail("merge_strata: stratum paths do not intersect");

    ShockStratum child;
    child.id = child_id;
    child.birth_time = t_merge;
    child.parents = {s1.id, s2.id};
    double x_merge = 0.5 * (s1.position(t_merge) + s2.position(t_merge));
    child.t.push_back(t_merge);
    child.x.push_back(x_merge);
    child.velocity.push_back(stratum_velocity(sym, x_merge, p_left_outer, p_right_outer, t_merge));
    child.e.push_back(s1.amplitude(t_merge) + s2.amplitude(t_merge));
    return child;
}

std::vector<double> accumulate_a_integral(const TrajectoryFan& fan, const HamiltonianSymbol& sym,
                                          const ARule& a_rule) {
    std::vector<double> acc(fan.x.size(), 0.0);
    if (a_rule.kind == ARule::Kind::Zero) return acc;
    auto a_at = [&](std::size_t k, double t) {
        if (a_rule.kind == ARule::Kind::Smooth) return a_rule.a_xt(fan.x[k], t);
        if (a_rule.kind == ARule::Kind::Madelung) return -sym.cross_xp(fan.x[k], fan.p[k], t);
        return a_rule.f(sym.grad_p(fan.x[k], fan.p[k], t));
    };
    for (std::size_t li = 0; li < fan.n_labels(); ++li) {
        double sum = 0.0;
        double prev = a_at(fan.idx(0, li), fan.tgrid[0]);
        for (std::size_t ti = 1; ti < fan.n_times(); ++ti) {
            double cur = a_at(fan.idx(ti, li), fan.tgrid[ti]);
            sum += 0.5 * (prev + cur) * (fan.tgrid[ti] - fan.tgrid[ti - 1]);
            acc[fan.idx(ti, li)] = sum;
            prev = cur;
        }
    }
    return acc;
}

RegularDensity::RegularDensity(HamiltonianSymbol sym, std::shared_ptr<const TrajectoryFan> fan,
                               std::function<double(double)> rho0, ARule a_rule,
                               std::vector<ShockStratum> strata, double tube_radius)
    : sym_(std::move(sym)),
      fan_(std::move(fan)),
      rho0_(std::move(rho0)),
      a_rule_(std::move(a_rule)),
      strata_(std::move(strata)),
      tube_radius_(tube_radius) {
    require(bool(fan_), "RegularDensity: null fan");
    a_int_ = accumulate_a_integral(*fan_, sym_, a_rule_);
}

double RegularDensity::eval(double x, double t) const { return eval_impl(x, t, false); }

double RegularDensity::eval_impl(double x, double t, bool allow_tube) const {
    const TrajectoryFan& fan = *fan_;
    std::size_t i0, i1;
    double w;
    fan.locate_time(t, i0, i1, w);

    if (!allow_tube) {
        for (const auto& s : strata_)
            if (s.exists_at(t) && std::fabs(x - s.position(t)) <= tube_radius_)
                fail(detail::strf(
                    "regular density: query x=%g at t=%g lies inside the tube of stratum %d", x,
                    t, s.id));
    }

    // Scan consecutive live labels for segments bracketing x; the minimal
    // action candidate is the essential branch. Segments are half-open at
    // the right end (the next segment starts there), with the final live
    // point closed.
    std::size_t last_live = std::size_t(-1);
    for (std::size_t li = fan.n_labels(); li-- > 0;)
        if (fan.absorbed_at[li] > i1) {
            last_live = li;
            break;
        }
    double best_S = std::numeric_limits<double>::infinity();
    double best_R = std::numeric_limits<double>::quiet_NaN();
    int covers = 0;
    double first_cross_label = 0.0;
    std::size_t prev = std::size_t(-1);
    for (std::size_t li = 0; li < fan.n_labels(); ++li) {
        if (fan.absorbed_at[li] <= i1) continue;
        if (prev != std::size_t(-1)) {
            std::size_t ka0 = fan.idx(i0, prev), ka1 = fan.idx(i1, prev);
            std::size_t kb0 = fan.idx(i0, li), kb1 = fan.idx(i1, li);
            double xa = (1 - w) * fan.x[ka0] + w * fan.x[ka1];
            double xb = (1 - w) * fan.x[kb0] + w * fan.x[kb1];
            bool inside = (x >= xa && x < xb) || (x <= xa && x > xb) ||
                          (li == last_live && x == xb);
            if (inside) {
                double span = xb - xa;
                double s = span != 0.0 ? (x - xa) / span : 0.5;
                // A segment spanning a stratum gap carries the side limits,
                // not an interpolation through the swallowed interior: clamp
                // to the endpoint on the query's side of the stratum.
                for (const auto& st : strata_) {
                    if (!st.exists_at(t)) continue;
                    double phi = st.position(t);
                    if ((phi > xa && phi < xb) || (phi > xb && phi < xa)) {
                        bool query_left = (x < phi);
                        bool a_left = (xa < phi);
                        s = (query_left == a_left) ? 0.0 : 1.0;
                        break;
                    }
                }
                double Ja = (1 - w) * fan.J[ka0] + w * fan.J[ka1];
                double Jb = (1 - w) * fan.J[kb0] + w * fan.J[kb1];
                double Sa = (1 - w) * fan.S[ka0] + w * fan.S[ka1];
                double Sb = (1 - w) * fan.S[kb0] + w * fan.S[kb1];
                double Aa = (1 - w) * a_int_[ka0] + w * a_int_[ka1];
                double Ab = (1 - w) * a_int_[kb0] + w * a_int_[kb1];
                double x0q = fan.labels[prev] + s * (fan.labels[li] - fan.labels[prev]);
                double Jq = Ja + s * (Jb - Ja);
                double Sq = Sa + s * (Sb - Sa);
                double Aq = Aa + s * (Ab - Aa);
                if (Jq == 0.0) Jq = std::numeric_limits<double>::min();
                double Rq = rho0_(x0q) / std::fabs(Jq) * std::exp(-Aq);
                ++covers;
                if (covers == 2) first_cross_label = fan.labels[prev];
                if (Sq < best_S) {
                    best_S = Sq;
                    best_R = Rq;
                }
            }
        }
        prev = li;
    }
    if (covers == 0) {
        // Outside the simulated label window the transported density is
        // zero when rho0 is compactly supported inside it; mass quadratures
        // rely on that, strict queries report the miss.
        if (allow_tube) return 0.0;
        fail(detail::strf("regular density: x=%g at t=%g is outside the live fan", x, t));
    }
    if (covers > 1 && !allow_tube)
        fail(detail::strf(
            "regular density: trajectories cross at x=%g, t=%g (first crossing near label %g)",
            x, t, first_cross_label));
    return best_R;
}

double RegularDensity::total_mass(double t, double x_lo, double x_hi, std::size_t n_quad) const {
    auto xg = linspace(x_lo, x_hi, n_quad);
    double mass = 0.0, prev = eval_impl(xg[0], t, true);
    for (std::size_t i = 1; i < xg.size(); ++i) {
        double cur = eval_impl(xg[i], t, true);
        mass += 0.5 * (prev + cur) * (xg[i] - xg[i - 1]);
        prev = cur;
    }
    for (const auto& s : strata_)
        if (s.exists_at(t)) mass += s.amplitude(t);
    return mass;
}

namespace {

// Interpolation-ready live-fan samples at one time node.
struct LiveSlice {
    std::vector<double> x, p, J, S, aint, x0;
};

LiveSlice make_slice(const TrajectoryFan& fan, const std::vector<double>& a_int,
                     std::size_t ti) {
    LiveSlice s;
    for (std::size_t l = 0; l < fan.n_labels(); ++l) {
        if (fan.absorbed_at[l] <= ti) continue;
        std::size_t k = fan.idx(ti, l);
        s.x.push_back(fan.x[k]);
        s.p.push_back(fan.p[k]);
        s.J.push_back(fan.J[k]);
        s.S.push_back(fan.S[k]);
        s.aint.push_back(a_int[k]);
        s.x0.push_back(fan.labels[l]);
    }
    return s;
}

struct SideSample {
    double R = 0, u = 0, p = 0;
};

// Sample (R, u, p) at x_target; multivalued covers resolve by minimal action.
bool sample_slice(const LiveSlice& s, const HamiltonianSymbol& sym,
                  const std::function<double(double)>& rho0, double t, double x_target,
                  SideSample& out) {
    double best_S = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
        double xa = s.x[i], xb = s.x[i + 1];
        if (!((x_target >= xa && x_target <= xb) || (x_target >= xb && x_target <= xa))) continue;
        double span = xb - xa;
        double q = span != 0.0 ? (x_target - xa) / span : 0.5;
        double Sq = s.S[i] + q * (s.S[i + 1] - s.S[i]);
        if (Sq >= best_S) continue;
        best_S = Sq;
        double Jq = s.J[i] + q * (s.J[i + 1] - s.J[i]);
        double Aq = s.aint[i] + q * (s.aint[i + 1] - s.aint[i]);
        double x0q = s.x0[i] + q * (s.x0[i + 1] - s.x0[i]);
        double pq = s.p[i] + q * (s.p[i + 1] - s.p[i]);
        if (Jq == 0.0) Jq = std::numeric_limits<double>::min();
        out.R = rho0(x0q) / std::fabs(Jq) * std::exp(-Aq);
        out.p = pq;
        out.u = sym.grad_p(x_target, pq, t);
        found = true;
    }
    return found;
}

// Side limit at the stratum: samples at +-3 and +-4 offset cells, linearly
// extrapolated onto the stratum position.
bool side_limit(const LiveSlice& s, const HamiltonianSymbol& sym,
                const std::function<double(double)>& rho0, double t, double phi, double h,
                int dir, int offset_cells, SideSample& out) {
    SideSample ga, gb;
    double da = dir * double(offset_cells) * h;
    double db = dir * double(offset_cells + 1) * h;
    if (!sample_slice(s, sym, rho0, t, phi + da, ga)) return false;
    if (!sample_slice(s, sym, rho0, t, phi + db, gb)) return false;
    double k = double(offset_cells + 1);  // extrapolation weights to distance 0
    out.R = k * ga.R - (k - 1.0) * gb.R;
    out.u = k * ga.u - (k - 1.0) * gb.u;
    out.p = k * ga.p - (k - 1.0) * gb.p;
    return true;
}

struct Sides {
    SideSample left, right;
};

}  // namespace

TrackResult track_fronts(const HamiltonianSymbol& sym, TrajectoryFan fan,
                         const std::function<double(double)>& rho0, const ARule& a_rule,
                         const TrackOptions& options) {
    auto events = detect_caustic(sym, fan, options.tol_caustic);
    TrackResult result;
    result.fan = std::make_shared<TrajectoryFan>(std::move(fan));
    TrajectoryFan& f = *result.fan;
    if (events.empty()) return result;

    const std::vector<double> a_int = accumulate_a_integral(f, sym, a_rule);
    const std::size_t nt = f.n_times();
    double label_h = f.labels.size() >= 2
                         ? (f.labels.back() - f.labels.front()) / double(f.labels.size() - 1)
                         : 1e-3;

    std::vector<ShockStratum> strata;
    std::vector<std::vector<std::int8_t>> sides;  // sign of (label x - stratum x) at adoption
    int next_id = 0;
    std::size_t next_event = 0;

    auto f_of = [&](double v) {
        return a_rule.kind == ARule::Kind::OfVelocity ? a_rule.f(v) : 0.0;
    };

    // Sides are assigned by the entering direction: material moving faster
    // than the front comes from the left. Labels already past the front on
    // the wrong side absorb right away. Without a front velocity (merge
    // children) positions decide.
    auto adopt_labels = [&](std::size_t si, std::size_t ti, double absorb_radius,
                            double front_speed) {
        sides[si].assign(f.n_labels(), 0);
        double phi = strata[si].x.back();
        double t_now = f.tgrid[ti];
        for (std::size_t l = 0; l < f.n_labels(); ++l) {
            if (f.absorbed_at[l] <= ti) continue;
            std::size_t k = f.idx(ti, l);
            double d = f.x[k] - phi;
            std::int8_t side;
            if (std::isfinite(front_speed)) {
                double u = sym.grad_p(f.x[k], f.p[k], t_now);
                side = u > front_speed ? -1 : 1;
            } else {
                side = d > 0 ? 1 : -1;
            }
            if (std::fabs(d) < absorb_radius || d * side < 0.0)
                f.absorbed_at[l] = std::uint32_t(ti);
            else
                sides[si][l] = side;
        }
    };

    auto mark_absorbed = [&](std::size_t ti) {
        for (std::size_t si = 0; si < strata.size(); ++si) {
            if (!strata[si].alive) continue;
            double phi = strata[si].x.back();
            for (std::size_t l = 0; l < f.n_labels(); ++l) {
                if (f.absorbed_at[l] <= ti || sides[si][l] == 0) continue;
                double d = f.x[f.idx(ti, l)] - phi;
                if (d * sides[si][l] < 0.0 || std::fabs(d) < 0.25 * options.tube_radius)
                    f.absorbed_at[l] = std::uint32_t(ti);
            }
        }
    };

    auto extract_sides = [&](const LiveSlice& slice, double t, double phi, Sides& out) {
        bool okl = side_limit(slice, sym, rho0, t, phi, label_h, -1, options.side_offset_cells,
                              out.left);
        bool okr = side_limit(slice, sym, rho0, t, phi, label_h, +1, options.side_offset_cells,
                              out.right);
        return okl && okr;
    };

    for (std::size_t ti = 0; ti + 1 < nt; ++ti) {
        double t0 = f.tgrid[ti];
        double t1 = f.tgrid[ti + 1];

        while (next_event < events.size() && events[next_event].t_star <= t0) {
            const auto& ev = events[next_event];
            ++next_event;
            // A label that already fell into a stratum cannot seed a new one.
            auto lit = std::lower_bound(f.labels.begin(), f.labels.end(), ev.label_star);
            if (lit != f.labels.end() && *lit == ev.label_star &&
                f.absorbed_at[std::size_t(lit - f.labels.begin())] <= ti)
                continue;
            bool close = false;
            for (const auto& s : strata)
                if (s.alive && std::fabs(ev.x_star - s.x.back()) < options.birth_cluster_radius)
                    close = true;
            if (close) continue;
            ShockStratum s;
            s.id = next_id++;
            s.birth_time = ev.t_star;
            s.t.push_back(t0);
            s.x.push_back(ev.x_star);
            s.e.push_back(0.0);
            s.velocity.push_back(0.0);
            strata.push_back(s);
            sides.emplace_back();
            auto slice = make_slice(f, a_int, ti);
            Sides sd;
            double c0 = std::numeric_limits<double>::quiet_NaN();
            if (extract_sides(slice, t0, ev.x_star, sd) &&
                std::fabs(sd.left.p - sd.right.p) > options.p_jump_tol) {
                c0 = stratum_velocity(sym, ev.x_star, sd.left.p, sd.right.p, t0,
                                      options.p_jump_tol);
                strata.back().velocity.back() = c0;
            }
            adopt_labels(strata.size() - 1, ti, 0.25 * options.tube_radius, c0);
        }
        mark_absorbed(ti);
        if (strata.empty()) continue;

        auto slice0 = make_slice(f, a_int, ti);
        double dt = t1 - t0;

        struct Step {
            double phi1 = 0, v0 = 0, F0 = 0;
            Sides sd0;
            bool ok = false;
        };
        std::vector<Step> steps(strata.size());

        for (std::size_t si = 0; si < strata.size(); ++si) {
            auto& s = strata[si];
            if (!s.alive) continue;
            Step st;
            double phi = s.x.back();
            if (!extract_sides(slice0, t0, phi, st.sd0)) {
                s.alive = false;  // left the covered window
                continue;
            }
            // A degenerate momentum jump (only just-absorbed remnants around
            // the stratum) coasts at the previous velocity with zero flux.
            if (std::fabs(st.sd0.left.p - st.sd0.right.p) > options.p_jump_tol) {
                st.v0 = stratum_velocity(sym, phi, st.sd0.left.p, st.sd0.right.p, t0,
                                         options.p_jump_tol);
                double slack =
                    1e-7 * (1 + std::fabs(st.sd0.left.u) + std::fabs(st.sd0.right.u));
                if (!(st.sd0.left.u >= st.v0 - slack && st.sd0.right.u <= st.v0 + slack))
                    fail(detail::strf("track_fronts: stratum %d is not attracting at t=%g",
                                      s.id, t0));
                st.F0 = (st.sd0.left.R * st.sd0.left.u - st.sd0.right.R * st.sd0.right.u) -
                        st.v0 * (st.sd0.left.R - st.sd0.right.R);
            } else {
                st.v0 = s.velocity.back();
                st.F0 = 0.0;
            }
            st.phi1 = phi + dt * st.v0;
            st.ok = true;
            steps[si] = st;
        }

        // Heun corrector with sides re-extracted at the predicted endpoint.
        auto slice1 = make_slice(f, a_int, ti + 1);
        for (std::size_t si = 0; si < strata.size(); ++si) {
            auto& s = strata[si];
            if (!s.alive || !steps[si].ok) continue;
            Sides sd1;
            double v1 = steps[si].v0, F1 = steps[si].F0;
            if (extract_sides(slice1, t1, steps[si].phi1, sd1) &&
                std::fabs(sd1.left.p - sd1.right.p) > options.p_jump_tol) {
                v1 = stratum_velocity(sym, steps[si].phi1, sd1.left.p, sd1.right.p, t1,
                                      options.p_jump_tol);
                F1 = (sd1.left.R * sd1.left.u - sd1.right.R * sd1.right.u) -
                     v1 * (sd1.left.R - sd1.right.R);
            }
            double phi_new = s.x.back() + 0.5 * dt * (steps[si].v0 + v1);
            double e_new = jump_ode_step(s.e.back(), steps[si].F0, F1,
                                         f_of(0.5 * (steps[si].v0 + v1)), dt);
            s.t.push_back(t1);
            s.x.push_back(phi_new);
            s.velocity.push_back(v1);
            s.e.push_back(e_new);
        }

        mark_absorbed(ti + 1);

        // Kirchhoff merges: order flips and sub-resolution approaches. The
        // side samples live (side_offset+1) cells out, so two fronts closer
        // than that have already met at the sampling resolution.
        double prox = 2.0 * double(options.side_offset_cells + 1) * label_h +
                      options.tube_radius;
        for (std::size_t a = 0; a < strata.size(); ++a) {
            for (std::size_t b = a + 1; b < strata.size(); ++b) {
                auto& sa = strata[a];
                auto& sb = strata[b];
                if (!sa.alive || !sb.alive) continue;
                if (sa.t.size() < 2 || sb.t.size() < 2) continue;
                if (sa.t.back() != t1 || sb.t.back() != t1) continue;
                double ga = sa.x[sa.x.size() - 2] - sb.x[sb.x.size() - 2];
                double gb = sa.x.back() - sb.x.back();
                bool flipped = ga != 0.0 && ga * gb < 0.0;
                bool touching = std::fabs(gb) <= prox;
                if (!flipped && !touching) continue;

                auto slice_m = make_slice(f, a_int, ti + 1);
                double x_meet = 0.5 * (sa.x.back() + sb.x.back());
                SideSample outer_l, outer_r;
                bool okl = side_limit(slice_m, sym, rho0, t1, x_meet - 0.5 * prox, label_h, -1,
                                      options.side_offset_cells, outer_l);
                bool okr = side_limit(slice_m, sym, rho0, t1, x_meet + 0.5 * prox, label_h, +1,
                                      options.side_offset_cells, outer_r);
                require(okl && okr, "track_fronts: cannot extract sides at a merge point");
                const ShockStratum& left_par = gb < 0 || (gb == 0 && ga < 0) ? sa : sb;
                const ShockStratum& right_par = &left_par == &sa ? sb : sa;
                ShockStratum child = merge_strata(left_par, right_par, sym, outer_l.p,
                                                  outer_r.p, next_id++, prox);
                sa.alive = false;
                sb.alive = false;
                double half_gap = 0.5 * std::fabs(gb);
                strata.push_back(child);
                sides.emplace_back();
                adopt_labels(strata.size() - 1, ti + 1,
                             half_gap + 0.25 * options.tube_radius,
                             std::numeric_limits<double>::quiet_NaN());
            }
        }
    }

    result.strata = std::move(strata);
    return result;
}

WeakAsymptotic weak_asymptotic_residual(const std::function<double(double)>& R_profile,
                                        double e_amp, double stratum_x,
                                        const std::vector<double>& eps_list,
                                        const std::function<double(double)>& zeta,
                                        std::function<double(double)> omega) {
    require(e_amp >= 0.0, "weak_asymptotic_residual: amplitude must be >= 0");
    if (!omega)
        omega = [](double eta) { return std::exp(-0.5 * eta * eta) / std::sqrt(2.0 * M_PI); };

    WeakAsymptotic out;
    const double eta_max = 60.0;
    const std::size_t n = 48001;
    auto etas = linspace(-eta_max, eta_max, n);
    for (double eps : eps_list) {
        require(eps > 0.0, "weak_asymptotic_residual: eps must be positive");
        double sum = 0.0, prev = 0.0;
        for (std::size_t i = 0; i < etas.size(); ++i) {
            double eta = etas[i];
            double xq = stratum_x + eps * eta;
            double R = R_profile(xq);
            double rad = eps * R + e_amp * omega(eta);
            if (R < 0.0 || rad < 0.0) fail("weak_asymptotic_residual: negative radicand");
            double val = (std::sqrt(rad) - std::sqrt(eps * R)) * zeta(xq);
            if (i > 0) sum += 0.5 * (prev + val) * (etas[i] - etas[i - 1]);
            prev = val;
        }
        out.eps.push_back(eps);
        out.residual.push_back(std::fabs(std::sqrt(eps) * sum));
    }
    // Decay slope of log(residual) against log(eps).
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < out.eps.size(); ++i) {
        if (out.residual[i] <= 0.0) continue;
        lx.push_back(std::log(out.eps[i]));
        ly.push_back(std::log(out.residual[i]));
    }
    out.loglog_slope = lx.size() >= 2 ? fit_slope(lx, ly) : 0.0;
    return out;
}

void write_strata_paths_csv(const std::vector<ShockStratum>& strata, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_strata_paths_csv: cannot open " + path);
    f << "id,t,x,velocity,e\n";
    for (const auto& s : strata)
        for (std::size_t i = 0; i < s.t.size(); ++i)
            f << s.id << ',' << fmt_full(s.t[i]) << ',' << fmt_full(s.x[i]) << ','
              << fmt_full(s.velocity[i]) << ',' << fmt_full(s.e[i]) << '\n';
}

void write_density_csv(const RegularDensity& density, const std::vector<double>& tsample,
                       const std::vector<double>& xgrid, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_density_csv: cannot open " + path);
    f << "t,x,R\n";
    for (double t : tsample)
        for (double x : xgrid) {
            bool in_tube = false;
            for (const auto& s : density.strata())
                if (s.exists_at(t) && std::fabs(x - s.position(t)) <= density.tube_radius())
                    in_tube = true;
            double val = in_tube ? std::numeric_limits<double>::quiet_NaN()
                                 : density.eval_across_tubes(x, t);
            f << fmt_full(t) << ',' << fmt_full(x) << ',' << fmt_full(val) << '\n';
        }
}

void write_merge_graph_json(const std::vector<ShockStratum>& strata, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_merge_graph_json: cannot open " + path);
    f << "{\n  \"nodes\": [";
    for (std::size_t i = 0; i < strata.size(); ++i) {
        if (i) f << ", ";
        f << "{\"id\": " << strata[i].id << ", \"birth\": " << fmt_full(strata[i].birth_time)
          << ", \"alive\": " << (strata[i].alive ? "true" : "false") << "}";
    }
    f << "],\n  \"edges\": [";
    bool first = true;
    for (const auto& s : strata)
        for (int p : s.parents) {
            if (!first) f << ", ";
            first = false;
            f << "{\"parent\": " << p << ", \"child\": " << s.id << "}";
        }
    f << "]\n}\n";
}

}  // namespace tunnelflow
