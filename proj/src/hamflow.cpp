#include "tunnelflow/hamflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

namespace tunnelflow {

namespace {

// Right-hand side of the coupled trajectory + action + variational system:
//   x' = H_p, p' = -H_x, S' = p H_p - H,
//   J' = H_px J + H_pp K,  K' = -H_xx J - H_xp K,   K = dp/dx0.
void rhs(const HamiltonianSymbol& sym, double t, const TrajectoryState& s, TrajectoryState& d) {
    double hp = sym.grad_p(s.x, s.p, t);
    double hx = sym.grad_x(s.x, s.p, t);
    double hpp = sym.hess_pp(s.x, s.p, t);
    double hxp = sym.cross_xp(s.x, s.p, t);
    double hxx = sym.hess_xx(s.x, s.p, t);
    d.x = hp;
    d.p = -hx;
    d.S = s.p * hp - sym.eval(s.x, s.p, t);
    d.J = hxp * s.J + hpp * s.dpdx0;
    d.dpdx0 = -hxx * s.J - hxp * s.dpdx0;
}

TrajectoryState axpy(const TrajectoryState& a, double h, const TrajectoryState& b) {
    return {a.x + h * b.x, a.p + h * b.p, a.S + h * b.S, a.J + h * b.J,
            a.dpdx0 + h * b.dpdx0};
}

void rk4_step(const HamiltonianSymbol& sym, TrajectoryState& s, double t, double h) {
    TrajectoryState k1, k2, k3, k4;
    rhs(sym, t, s, k1);
    rhs(sym, t + 0.5 * h, axpy(s, 0.5 * h, k1), k2);
    rhs(sym, t + 0.5 * h, axpy(s, 0.5 * h, k2), k3);
    rhs(sym, t + h, axpy(s, h, k3), k4);
    s.x += h / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    s.p += h / 6.0 * (k1.p + 2 * k2.p + 2 * k3.p + k4.p);
    s.S += h / 6.0 * (k1.S + 2 * k2.S + 2 * k3.S + k4.S);
    s.J += h / 6.0 * (k1.J + 2 * k2.J + 2 * k3.J + k4.J);
    s.dpdx0 += h / 6.0 * (k1.dpdx0 + 2 * k2.dpdx0 + 2 * k3.dpdx0 + k4.dpdx0);
}

bool state_finite(const TrajectoryState& s) {
    return std::isfinite(s.x) && std::isfinite(s.p) && std::isfinite(s.S) &&
           std::isfinite(s.J) && std::isfinite(s.dpdx0);
}

double fd_prime(const std::function<double(double)>& f, double x) {
    double h = 1e-6 * (1.0 + std::fabs(x));
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

void TrajectoryFan::locate_time(double t, std::size_t& i0, std::size_t& i1, double& w) const {
    require(t >= tgrid.front() - 1e-12 && t <= tgrid.back() + 1e-12,
            detail::strf("fan: time %g outside [%g, %g]", t, tgrid.front(), tgrid.back()));
    auto it = std::upper_bound(tgrid.begin(), tgrid.end(), t);
    if (it == tgrid.begin()) ++it;
    if (it == tgrid.end()) --it;
    i1 = std::size_t(it - tgrid.begin());
    i0 = i1 - 1;
    double dt = tgrid[i1] - tgrid[i0];
    w = dt > 0 ? (t - tgrid[i0]) / dt : 0.0;
    w = std::clamp(w, 0.0, 1.0);
}

TrajectoryState integrate_state(const HamiltonianSymbol& sym, TrajectoryState state, double t0,
                                double t1, std::size_t n_steps) {
    if (n_steps == 0) n_steps = 1;
    double h = (t1 - t0) / double(n_steps);
    double t = t0;
    for (std::size_t k = 0; k < n_steps; ++k) {
        rk4_step(sym, state, t, h);
        t = t0 + double(k + 1) * h;
    }
    return state;
}

TrajectoryFan evolve_fan(const HamiltonianSymbol& sym, const FanInitial& initial,
                         const std::vector<double>& tgrid, const EvolveOptions& options) {
    require(tgrid.size() >= 2, "evolve_fan: need at least 2 time nodes");
    require(initial.labels.size() >= 1, "evolve_fan: empty label set");
    for (std::size_t i = 1; i < initial.labels.size(); ++i)
        require(initial.labels[i] > initial.labels[i - 1],
                "evolve_fan: labels must be strictly increasing");

    const std::size_t nl = initial.labels.size();
    const std::size_t nt = tgrid.size();
    const double horizon = tgrid.back() - tgrid.front();
    require(horizon > 0, "evolve_fan: non-increasing time grid");

    TrajectoryFan fan;
    fan.labels = initial.labels;
    fan.tgrid = tgrid;
    fan.x.resize(nl * nt);
    fan.p.resize(nl * nt);
    fan.S.resize(nl * nt);
    fan.J.resize(nl * nt);
    fan.dpdx0.resize(nl * nt);
    fan.absorbed_at.assign(nl, std::uint32_t(nt));

    const double max_h = options.substep_fraction * horizon;

    for (std::size_t li = 0; li < nl; ++li) {
        double x0 = initial.labels[li];
        TrajectoryState s;
        s.x = x0 + (initial.shift ? initial.shift(x0) : 0.0);
        s.p = initial.p0(x0);
        s.S = initial.S0 ? initial.S0(x0) : 0.0;
        s.J = 1.0 + (initial.shift_prime ? initial.shift_prime(x0)
                                         : (initial.shift ? fd_prime(initial.shift, x0) : 0.0));
        s.dpdx0 = initial.p0_prime ? initial.p0_prime(x0) : fd_prime(initial.p0, x0);
        require(std::isfinite(s.p) && std::isfinite(s.S),
                detail::strf("evolve_fan: non-finite initial data at label %g", x0));

        fan.x[fan.idx(0, li)] = s.x;
        fan.p[fan.idx(0, li)] = s.p;
        fan.S[fan.idx(0, li)] = s.S;
        fan.J[fan.idx(0, li)] = s.J;
        fan.dpdx0[fan.idx(0, li)] = s.dpdx0;

        for (std::size_t ti = 1; ti < nt; ++ti) {
            double t0 = tgrid[ti - 1];
            double t1 = tgrid[ti];
            std::size_t nsub = std::size_t(std::ceil((t1 - t0) / max_h));
            s = integrate_state(sym, s, t0, t1, nsub);
            if (!state_finite(s))
                fail(detail::strf("evolve_fan: trajectory blow-up at label %g, t=%g", x0, t1));
            fan.x[fan.idx(ti, li)] = s.x;
            fan.p[fan.idx(ti, li)] = s.p;
            fan.S[fan.idx(ti, li)] = s.S;
            fan.J[fan.idx(ti, li)] = s.J;
            fan.dpdx0[fan.idx(ti, li)] = s.dpdx0;
        }
    }
    return fan;
}

JacobianField jacobian_field(const TrajectoryFan& fan) {
    JacobianField out;
    out.variational = fan.J;
    out.neighbor_fd.assign(fan.J.size(), std::numeric_limits<double>::quiet_NaN());
    const std::size_t nl = fan.n_labels();
    for (std::size_t ti = 0; ti < fan.n_times(); ++ti) {
        for (std::size_t li = 0; li + 1 < nl; ++li) {
            std::size_t lo = li == 0 ? 0 : li - 1;
            std::size_t hi = li + 1;
            double dx0 = fan.labels[hi] - fan.labels[lo];
            out.neighbor_fd[fan.idx(ti, li)] =
                (fan.x[fan.idx(ti, hi)] - fan.x[fan.idx(ti, lo)]) / dx0;
        }
        if (nl >= 2) {
            double dx0 = fan.labels[nl - 1] - fan.labels[nl - 2];
            out.neighbor_fd[fan.idx(ti, nl - 1)] =
                (fan.x[fan.idx(ti, nl - 1)] - fan.x[fan.idx(ti, nl - 2)]) / dx0;
        }
    }
    return out;
}

std::vector<CausticEvent> detect_caustic(const HamiltonianSymbol& sym, const TrajectoryFan& fan,
                                         double tol_caustic) {
    std::vector<CausticEvent> events;
    const std::size_t nl = fan.n_labels();
    const std::size_t nt = fan.n_times();
    const double horizon = fan.tgrid.back() - fan.tgrid.front();

    for (std::size_t li = 0; li < nl; ++li) {
        for (std::size_t ti = 0; ti + 1 < nt; ++ti) {
            double j0 = fan.J[fan.idx(ti, li)];
            double j1 = fan.J[fan.idx(ti + 1, li)];
            if (!(j0 > 0.0 && j1 <= 0.0) && !(j0 <= 0.0 && j1 > 0.0)) continue;

            // Bisect inside [tgrid[ti], tgrid[ti+1]] by re-integrating from
            // the stored interval-start state.
            TrajectoryState base{fan.x[fan.idx(ti, li)], fan.p[fan.idx(ti, li)],
                                 fan.S[fan.idx(ti, li)], j0, fan.dpdx0[fan.idx(ti, li)]};
            double ta = fan.tgrid[ti];
            double tb = fan.tgrid[ti + 1];
            double ja = j0;
            TrajectoryState hit{};
            bool have_hit = false;
            while (tb - ta > tol_caustic) {
                double tm = 0.5 * (ta + tb);
                std::size_t nsub =
                    std::max<std::size_t>(1, std::size_t(std::ceil((tm - fan.tgrid[ti]) /
                                                                   (1e-3 * horizon))));
                TrajectoryState sm = integrate_state(sym, base, fan.tgrid[ti], tm, nsub);
                if ((ja > 0.0) == (sm.J > 0.0)) {
                    ta = tm;
                    ja = sm.J;
                } else {
                    tb = tm;
                }
                hit = sm;
                have_hit = true;
            }
            CausticEvent ev;
            ev.t_star = 0.5 * (ta + tb);
            ev.label_star = fan.labels[li];
            ev.x_star = have_hit ? hit.x : fan.x[fan.idx(ti, li)];
            events.push_back(ev);
            break;  // earliest crossing for this label is enough
        }
    }
    std::sort(events.begin(), events.end(),
              [](const CausticEvent& a, const CausticEvent& b) { return a.t_star < b.t_star; });
    return events;
}

void write_fan_csv(const TrajectoryFan& fan, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_fan_csv: cannot open " + path);
    f << "label,t,x,p,S,J\n";
    for (std::size_t li = 0; li < fan.n_labels(); ++li)
        for (std::size_t ti = 0; ti < fan.n_times(); ++ti) {
            std::size_t k = fan.idx(ti, li);
            f << fmt_full(fan.labels[li]) << ',' << fmt_full(fan.tgrid[ti]) << ','
              << fmt_full(fan.x[k]) << ',' << fmt_full(fan.p[k]) << ',' << fmt_full(fan.S[k])
              << ',' << fmt_full(fan.J[k]) << '\n';
        }
}

namespace {
constexpr char kFanMagic[8] = {'t', 'f', 'f', 'a', 'n', '0', '0', '1'};

void put_doubles(std::ofstream& f, const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            std::streamsize(v.size() * sizeof(double)));
}

void get_doubles(std::ifstream& f, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
}
}  // namespace

void write_fan_binary(const TrajectoryFan& fan, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "write_fan_binary: cannot open " + path);
    f.write(kFanMagic, 8);
    std::uint64_t nl = fan.n_labels(), nt = fan.n_times();
    f.write(reinterpret_cast<const char*>(&nl), 8);
    f.write(reinterpret_cast<const char*>(&nt), 8);
    put_doubles(f, fan.labels);
    put_doubles(f, fan.tgrid);
    put_doubles(f, fan.x);
    put_doubles(f, fan.p);
    put_doubles(f, fan.S);
    put_doubles(f, fan.J);
    put_doubles(f, fan.dpdx0);
    f.write(reinterpret_cast<const char*>(fan.absorbed_at.data()),
            std::streamsize(fan.absorbed_at.size() * sizeof(std::uint32_t)));
}

TrajectoryFan read_fan_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "read_fan_binary: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    require(std::memcmp(magic, kFanMagic, 8) == 0, "read_fan_binary: bad magic in " + path);
    std::uint64_t nl = 0, nt = 0;
    f.read(reinterpret_cast<char*>(&nl), 8);
    f.read(reinterpret_cast<char*>(&nt), 8);
    TrajectoryFan fan;
    get_doubles(f, fan.labels, nl);
    get_doubles(f, fan.tgrid, nt);
    get_doubles(f, fan.x, nl * nt);
    get_doubles(f, fan.p, nl * nt);
    get_doubles(f, fan.S, nl * nt);
    get_doubles(f, fan.J, nl * nt);
    get_doubles(f, fan.dpdx0, nl * nt);
    fan.absorbed_at.resize(nl);
    f.read(reinterpret_cast<char*>(fan.absorbed_at.data()),
           std::streamsize(nl * sizeof(std::uint32_t)));
    require(f.good(), "read_fan_binary: truncated file " + path);
    return fan;
}

}  // namespace tunnelflow
