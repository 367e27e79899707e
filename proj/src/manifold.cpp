#include "tunnelflow/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tunnelflow {

LagrangianCurve snapshot(const TrajectoryFan& fan, double t) {
    std::size_t i0, i1;
    double w;
    fan.locate_time(t, i0, i1, w);
    LagrangianCurve curve;
    curve.t = t;
    curve.points.resize(fan.n_labels());
    for (std::size_t li = 0; li < fan.n_labels(); ++li) {
        std::size_t a = fan.idx(i0, li), b = fan.idx(i1, li);
        CurvePoint& pt = curve.points[li];
        pt.x0 = fan.labels[li];
        pt.x = (1 - w) * fan.x[a] + w * fan.x[b];
        pt.p = (1 - w) * fan.p[a] + w * fan.p[b];
        pt.S = (1 - w) * fan.S[a] + w * fan.S[b];
        pt.J = (1 - w) * fan.J[a] + w * fan.J[b];
    }
    return curve;
}

BranchField branch_decompose(const LagrangianCurve& curve, std::size_t max_branches) {
    require(curve.points.size() >= 2, "branch_decompose: need at least 2 curve points");
    const auto& pts = curve.points;
    std::vector<Branch> branches;

    auto close_branch = [&](std::size_t first, std::size_t last) {
        if (last <= first) return;  // degenerate single-point runs carry no projection
        Branch b;
        b.first = first;
        b.last = last;
        b.increasing = pts[last].x >= pts[first].x;
        b.x_min = std::min(pts[first].x, pts[last].x);
        b.x_max = std::max(pts[first].x, pts[last].x);
        b.x_lo_ext = b.x_min;
        b.x_hi_ext = b.x_max;
        branches.push_back(b);
    };

    // Split at J sign changes and at sampled x-direction reversals.
    std::size_t start = 0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        bool j_flip = pts[i].J * pts[i + 1].J <= 0.0 && !(pts[i].J == 0.0 && pts[i + 1].J == 0.0);
        bool x_flip = false;
        if (i > start) {
            double d_prev = pts[i].x - pts[i - 1].x;
            double d_next = pts[i + 1].x - pts[i].x;
            x_flip = d_prev * d_next < 0.0;
        }
        if (j_flip || x_flip) {
            close_branch(start, i);
            start = j_flip && !x_flip ? i + 1 : i;
        }
    }
    close_branch(start, pts.size() - 1);
    require(!branches.empty(), "branch_decompose: no usable branch found");

    // The true turning point of a fold sits between the last samples of
    // adjacent branches; widen the coverage of interior boundaries by the
    // neighboring segment lengths so the sliver stays covered (clamped).
    for (auto& b : branches) {
        double seg_first =
            b.first + 1 <= b.last ? std::fabs(pts[b.first + 1].x - pts[b.first].x) : 0.0;
        double seg_last = b.last >= 1 ? std::fabs(pts[b.last].x - pts[b.last - 1].x) : 0.0;
        if (b.first > 0)
            (b.increasing ? b.x_lo_ext : b.x_hi_ext) +=
                (b.increasing ? -1.5 : 1.5) * std::max(seg_first, std::fabs(pts[b.first].x - pts[b.first - 1].x));
        if (b.last + 1 < pts.size())
            (b.increasing ? b.x_hi_ext : b.x_lo_ext) +=
                (b.increasing ? 1.5 : -1.5) * std::max(seg_last, std::fabs(pts[b.last + 1].x - pts[b.last].x));
    }
    if (branches.size() > max_branches)
        fail(detail::strf("branch_decompose: %zu branches; projection is not proper",
                          branches.size()));
    return BranchField(curve, branches);
}

std::optional<Candidate> BranchField::eval_branch(std::size_t branch_id, double x) const {
    const Branch& b = branches_.at(branch_id);
    if (x < b.x_lo_ext || x > b.x_hi_ext) return std::nullopt;
    x = std::clamp(x, b.x_min, b.x_max);
    const auto& pts = curve_.points;
    // Binary search over the monotone x run [first, last].
    std::size_t lo = b.first, hi = b.last;
    while (hi - lo > 1) {
        std::size_t mid = (lo + hi) / 2;
        bool go_left = b.increasing ? (pts[mid].x > x) : (pts[mid].x < x);
        if (go_left)
            hi = mid;
        else
            lo = mid;
    }
    const CurvePoint& a = pts[lo];
    const CurvePoint& c = pts[hi];
    double dx = c.x - a.x;
    double s = dx != 0.0 ? (x - a.x) / dx : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    Candidate cand;
    cand.S = a.S + s * (c.S - a.S);
    cand.p = a.p + s * (c.p - a.p);
    cand.J = a.J + s * (c.J - a.J);
    cand.x0 = a.x0 + s * (c.x0 - a.x0);
    cand.branch_id = branch_id;
    return cand;
}

std::vector<Candidate> BranchField::candidates(double x) const {
    std::vector<Candidate> out;
    for (std::size_t bi = 0; bi < branches_.size(); ++bi)
        if (auto c = eval_branch(bi, x)) out.push_back(*c);
    return out;
}

GlobalPhase min_action(const BranchField& field, const std::vector<double>& xgrid, double xtol) {
    require(!xgrid.empty(), "min_action: empty x grid");
    GlobalPhase out;
    out.t = field.curve().t;
    out.xgrid = xgrid;
    out.phi.resize(xgrid.size());
    out.p_win.resize(xgrid.size());
    out.winner.resize(xgrid.size());

    std::vector<double> gaps;
    for (std::size_t i = 0; i < xgrid.size(); ++i) {
        auto cands = field.candidates(xgrid[i]);
        if (cands.empty()) {
            gaps.push_back(xgrid[i]);
            continue;
        }
        const Candidate* best = &cands.front();
        for (const auto& c : cands)
            if (c.S < best->S || (c.S == best->S && c.branch_id < best->branch_id)) best = &c;
        out.phi[i] = best->S;
        out.p_win[i] = best->p;
        out.winner[i] = best->branch_id;
    }
    if (!gaps.empty())
        fail(detail::strf("min_action: %zu x-grid points uncovered by any branch, first at x=%g",
                          gaps.size(), gaps.front()));

    for (std::size_t i = 0; i + 1 < xgrid.size(); ++i) {
        if (out.winner[i] == out.winner[i + 1]) continue;
        std::size_t wl = out.winner[i], wr = out.winner[i + 1];
        double a = xgrid[i], b = xgrid[i + 1];
        // Action difference between the competing branches changes sign on [a,b].
        auto diff = [&](double x) -> std::optional<double> {
            auto cl = field.eval_branch(wl, x);
            auto cr = field.eval_branch(wr, x);
            if (!cl || !cr) return std::nullopt;
            return cl->S - cr->S;
        };
        auto da = diff(a), db = diff(b);
        if (da && db && *da * *db <= 0.0) {
            while (b - a > xtol) {
                double m = 0.5 * (a + b);
                auto dm = diff(m);
                if (!dm) break;
                if (*da * *dm <= 0.0) {
                    b = m;
                    db = dm;
                } else {
                    a = m;
                    da = dm;
                }
            }
        }
        Kink k;
        k.x = 0.5 * (a + b);
        k.branch_left = wl;
        k.branch_right = wr;
        auto cl = field.eval_branch(wl, k.x);
        auto cr = field.eval_branch(wr, k.x);
        k.p_left = cl ? cl->p : out.p_win[i];
        k.p_right = cr ? cr->p : out.p_win[i + 1];
        out.kinks.push_back(k);
    }
    return out;
}

std::vector<Stratum> singular_support(const TrajectoryFan& fan,
                                      const std::vector<double>& tsample,
                                      const std::vector<double>& xgrid, double xtol) {
    std::vector<Stratum> strata;
    int next_id = 0;
    double dx = xgrid.size() >= 2 ? xgrid[1] - xgrid[0] : 1e-3;
    const double link_radius = std::max(20.0 * dx, 0.05);

    for (double t : tsample) {
        auto curve = snapshot(fan, t);
        auto field = branch_decompose(curve);
        auto phase = min_action(field, xgrid, xtol);
        std::vector<bool> used(strata.size(), false);
        for (const auto& kink : phase.kinks) {
            // Continue the nearest live stratum, else record a birth.
            int best = -1;
            double best_d = link_radius;
            for (std::size_t si = 0; si < strata.size(); ++si) {
                if (used[si]) continue;
                if (!strata[si].t.empty() && strata[si].t.back() >= t) continue;
                double d = std::fabs(strata[si].x.back() - kink.x);
                if (d < best_d) {
                    best_d = d;
                    best = int(si);
                }
            }
            if (best < 0) {
                Stratum s;
                s.id = next_id++;
                s.birth_time = t;
                strata.push_back(s);
                best = int(strata.size()) - 1;
                used.push_back(true);
            } else {
                used[std::size_t(best)] = true;
            }
            strata[std::size_t(best)].t.push_back(t);
            strata[std::size_t(best)].x.push_back(kink.x);
        }
    }
    return strata;
}

void write_phase_csv(const GlobalPhase& phase, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_phase_csv: cannot open " + path);
    f << "t,x,phi,winner,p_win\n";
    for (std::size_t i = 0; i < phase.xgrid.size(); ++i)
        f << fmt_full(phase.t) << ',' << fmt_full(phase.xgrid[i]) << ',' << fmt_full(phase.phi[i])
          << ',' << phase.winner[i] << ',' << fmt_full(phase.p_win[i]) << '\n';
}

void write_strata_csv(const std::vector<Stratum>& strata, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_strata_csv: cannot open " + path);
    f << "stratum_id,t,x_kink\n";
    for (const auto& s : strata)
        for (std::size_t i = 0; i < s.t.size(); ++i)
            f << s.id << ',' << fmt_full(s.t[i]) << ',' << fmt_full(s.x[i]) << '\n';
}

}  // namespace tunnelflow
