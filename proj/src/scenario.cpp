#include "tunnelflow/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tunnelflow/continuity.hpp"
#include "tunnelflow/manifold.hpp"
#include "tunnelflow/profiles.hpp"
#include "tunnelflow/reference.hpp"
#include "tunnelflow/surgery.hpp"

namespace tunnelflow {

using nlohmann::json;

const Metric* RunResult::find(const std::string& name) const {
    for (const auto& m : metrics)
        if (m.name == name) return &m;
    return nullptr;
}

namespace {

void add_metric(RunResult& res, const std::string& name, double value) {
    res.metrics.push_back({name, value, false, false, ""});
}

void add_check(RunResult& res, const std::string& name, double value, bool pass,
               const std::string& detail) {
    res.metrics.push_back({name, value, true, pass, detail});
    if (!pass) res.all_pass = false;
}

HamiltonianSymbol make_symbol(const Scenario& sc) {
    Coefficient A = Coefficient::constant(sc.diffusion_const);
    Coefficient V;
    if (!sc.potential_poly.empty())
        V = Coefficient::poly(sc.potential_poly);
    else if (sc.potential_sin_amp != 0.0)
        V = Coefficient::scaled_sin(sc.potential_sin_amp, sc.potential_sin_freq);
    if (sc.symbol_kind == "quadratic") return HamiltonianSymbol::quadratic(A);
    if (sc.symbol_kind == "quadratic+potential")
        return HamiltonianSymbol::quadratic_potential(A, V);
    if (sc.symbol_kind == "jump") return HamiltonianSymbol::jump(A, V, sc.lambda, sc.nu0);
    fail("scenario: unknown symbol kind '" + sc.symbol_kind + "'");
}

InitialProfile make_profile(const Scenario& sc) {
    if (sc.initial == "tanh-plus") return profiles::tanh_plus();
    if (sc.initial == "tanh-minus") return profiles::tanh_minus();
    if (sc.initial == "parabola") return profiles::parabola();
    if (sc.initial == "wedge") return profiles::wedge(sc.wedge_width);
    if (sc.initial == "double-step")
        return profiles::double_step(sc.step_half_gap, sc.step_delta);
    if (sc.initial == "poly") return profiles::poly_S0(sc.s0_poly);
    fail("scenario: unknown initial profile '" + sc.initial + "'");
}

TrajectoryFan make_fan(const Scenario& sc, const HamiltonianSymbol& sym, double t_max) {
    auto prof = make_profile(sc);
    FanInitial init;
    init.labels = grid_with_spacing(sc.label_min, sc.label_max, sc.label_spacing);
    init.p0 = prof.p0;
    init.S0 = prof.S0;
    init.p0_prime = prof.p0_prime;
    std::size_t nt = std::size_t(std::ceil(t_max / sc.dt_out)) + 1;
    return evolve_fan(sym, init, linspace(0.0, t_max, std::max<std::size_t>(nt, 2)));
}

std::string artifact_path(const Scenario& sc, const std::string& file) {
    if (sc.output_dir.empty()) return {};
    std::filesystem::create_directories(sc.output_dir);
    return (std::filesystem::path(sc.output_dir) / file).string();
}

void maybe_write_fan(const Scenario& sc, const TrajectoryFan& fan, RunResult& res) {
    auto csv = artifact_path(sc, "fan.csv");
    if (csv.empty()) return;
    write_fan_csv(fan, csv);
    res.artifacts.push_back(csv);
    auto bin = artifact_path(sc, "fan.bin");
    write_fan_binary(fan, bin);
    res.artifacts.push_back(bin);
}

// ---------------------------------------------------------------------------
// pipeline: fan evolution, caustic report, global phase and singular support
// ---------------------------------------------------------------------------
RunResult run_pipeline(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto fan = make_fan(sc, sym, sc.t_max);
    auto events = detect_caustic(sym, fan);

    double min_j = std::numeric_limits<double>::infinity();
    for (double j : fan.J) min_j = std::min(min_j, j);

    add_metric(res, "caustic_count", double(events.size()));
    add_metric(res, "min_J", min_j);
    if (!events.empty()) {
        add_metric(res, "t_star", events.front().t_star);
        add_metric(res, "x0_star", events.front().label_star);
        add_metric(res, "x_star", events.front().x_star);
    }

    maybe_write_fan(sc, fan, res);
    if (!sc.output_dir.empty()) {
        auto curve = snapshot(fan, sc.t_max);
        auto field = branch_decompose(curve);
        auto xg = grid_with_spacing(sc.x_min, sc.x_max, sc.dx);
        auto phase = min_action(field, xg);
        auto p1 = artifact_path(sc, "phase.csv");
        write_phase_csv(phase, p1);
        res.artifacts.push_back(p1);
        if (!events.empty()) {
            auto strata = singular_support(
                fan, linspace(events.front().t_star, sc.t_max, 21), xg);
            auto p2 = artifact_path(sc, "strata.csv");
            write_strata_csv(strata, p2);
            res.artifacts.push_back(p2);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// varadhan: -eps ln u_fd against the min-action phase, pre- and post-caustic
// ---------------------------------------------------------------------------
struct FdPhase {
    std::vector<double> xgrid;
    std::vector<double> phi;
};

FdPhase fd_phase(const Scenario& sc, const HamiltonianSymbol& sym, const InitialProfile& prof,
                 double eps, double t) {
    auto xg = grid_with_spacing(sc.fd_x_min, sc.fd_x_max, sc.fd_dx);
    std::vector<long double> u0(xg.size());
    for (std::size_t i = 0; i < xg.size(); ++i)
        u0[i] = expl(-(long double)prof.S0(xg[i]) / (long double)eps);
    FdOptions opt;
    opt.dt = sc.fd_dt;
    auto field = fd_parabolic_solve(sym, xg, u0, eps, {0.0, t}, opt);
    FdPhase out;
    out.xgrid = xg;
    out.phi = varadhan_extract(field.slice(1), eps);
    return out;
}

double sup_gap_on_window(const FdPhase& fd, const GlobalPhase& phase, double lo, double hi,
                         double exclude_center, double exclude_radius) {
    double h = fd.xgrid[1] - fd.xgrid[0];
    double worst = 0.0;
    for (std::size_t i = 0; i < phase.xgrid.size(); ++i) {
        double x = phase.xgrid[i];
        if (x < lo || x > hi) continue;
        if (exclude_radius > 0.0 && std::fabs(x - exclude_center) < exclude_radius) continue;
        auto gi = std::size_t(std::lround((x - fd.xgrid.front()) / h));
        if (gi >= fd.xgrid.size()) continue;
        worst = std::max(worst, std::fabs(fd.phi[gi] - phase.phi[i]));
    }
    return worst;
}

RunResult run_varadhan(const Scenario& sc, double post_time) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto prof = make_profile(sc);
    double t_fan = std::max(sc.t_max, post_time);
    auto fan = make_fan(sc, sym, t_fan);

    auto xg = grid_with_spacing(sc.x_min, sc.x_max, sc.dx);
    auto phase_pre = min_action(branch_decompose(snapshot(fan, sc.compare_time)), xg);

    double prev = std::numeric_limits<double>::infinity();
    bool decreasing = true;
    for (std::size_t i = 0; i < sc.epsilons.size(); ++i) {
        double eps = sc.epsilons[i];
        auto fd = fd_phase(sc, sym, prof, eps, sc.compare_time);
        double gap = sup_gap_on_window(fd, phase_pre, sc.x_min, sc.x_max, 0.0, 0.0);
        double bound = 5.0 * eps * std::fabs(std::log(eps));
        add_check(res, detail::strf("varadhan_sup_err_%zu", i), gap, gap <= bound,
                  detail::strf("eps=%g bound=%g", eps, bound));
        if (gap >= prev) decreasing = false;
        prev = gap;
    }
    add_check(res, "varadhan_decreasing", decreasing ? 1.0 : 0.0, decreasing,
              "sup error strictly decreasing in eps");

    if (post_time > 0.0) {
        // Post-caustic comparison away from the kink plus kink agreement.
        auto wide = grid_with_spacing(sc.x_min, 3.0, sc.dx);
        auto phase_post = min_action(branch_decompose(snapshot(fan, post_time)), wide);
        require(!phase_post.kinks.empty(), "varadhan: no kink found past the caustic");
        double kink_m = phase_post.kinks.front().x;
        add_metric(res, "kink_manifold", kink_m);

        FdPhase fd_last;
        for (std::size_t i = 0; i < sc.epsilons.size(); ++i) {
            double eps = sc.epsilons[i];
            auto fd = fd_phase(sc, sym, prof, eps, post_time);
            double gap = sup_gap_on_window(fd, phase_post, sc.x_min, sc.x_max, kink_m, 0.1);
            double bound = 5.0 * eps * std::fabs(std::log(eps));
            add_check(res, detail::strf("post_sup_err_%zu", i), gap, gap <= bound,
                      detail::strf("eps=%g bound=%g t=%g", eps, bound, post_time));
            if (i + 1 == sc.epsilons.size()) fd_last = fd;
        }

        // Kink from the reference solution: curvature peak of -eps ln u.
        double h = fd_last.xgrid[1] - fd_last.xgrid[0];
        std::size_t stride = std::max<std::size_t>(1, std::size_t(std::lround(0.01 / h)));
        double best = 0.0, kink_fd = kink_m;
        for (std::size_t i = stride; i + stride < fd_last.xgrid.size(); ++i) {
            double x = fd_last.xgrid[i];
            if (x < kink_m - 0.5 || x > kink_m + 0.5) continue;
            double d2 = std::fabs(fd_last.phi[i + stride] - 2.0 * fd_last.phi[i] +
                                  fd_last.phi[i - stride]);
            if (d2 > best) {
                best = d2;
                kink_fd = x;
            }
        }
        add_metric(res, "kink_fd", kink_fd);
        double gap = std::fabs(kink_fd - kink_m);
        add_check(res, "kink_gap", gap, gap <= 0.05, "manifold vs max-curvature kink");
    }
    if (!sc.output_dir.empty()) {
        auto p = artifact_path(sc, "phase.csv");
        write_phase_csv(phase_pre, p);
        res.artifacts.push_back(p);
    }
    return res;
}

// ---------------------------------------------------------------------------
// kernel-vs-fd: pure diffusion cross-validation [gaussian data]
// ---------------------------------------------------------------------------
RunResult run_kernel_vs_fd(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    double eps = sc.epsilons.front();
    double t = sc.compare_time;
    auto sym = make_symbol(sc);
    auto xg = grid_with_spacing(sc.fd_x_min, sc.fd_x_max, sc.fd_dx);
    std::vector<long double> u0(xg.size());
    for (std::size_t i = 0; i < xg.size(); ++i)
        u0[i] = expl(-(long double)(xg[i] * xg[i]) / 0.08L);

    bool warn = false;
    auto kernel = heat_kernel_convolve(xg, u0, t, eps, &warn);
    FdOptions opt;
    opt.dt = sc.fd_dt;
    auto field = fd_parabolic_solve(sym, xg, u0, eps, {0.0, t}, opt);
    auto fd = field.slice(1);

    long double sup_ref = 0, sup_diff = 0, m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < xg.size(); ++i) {
        sup_ref = std::max(sup_ref, kernel[i]);
        sup_diff = std::max(sup_diff, fabsl(fd[i] - kernel[i]));
        if (i + 1 < xg.size()) {
            m0 += 0.5L * (u0[i] + u0[i + 1]);
            m1 += 0.5L * (fd[i] + fd[i + 1]);
        }
    }
    double rel = double(sup_diff / sup_ref);
    double mass_drift = std::fabs(double(m1 / m0) - 1.0);
    add_check(res, "kernel_fd_rel_sup", rel, rel <= 1e-3, "relative sup difference");
    add_check(res, "fd_mass_drift", mass_drift, mass_drift <= 1e-4, "relative mass drift");
    add_check(res, "kernel_mass_warning", warn ? 1.0 : 0.0, !warn, "margin leak flag");
    if (!sc.output_dir.empty()) {
        auto p = artifact_path(sc, "field.csv");
        write_gridfield_csv(field, p);
        res.artifacts.push_back(p);
    }
    return res;
}

// ---------------------------------------------------------------------------
// rh-sample: Rankine-Hugoniot identity on a fixed random sample
// ---------------------------------------------------------------------------
RunResult run_rh_sample(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    std::mt19937 rng(12345);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    double worst = 0.0;
    int n = 0;
    while (n < 100) {
        double pl = dist(rng), pr = dist(rng);
        if (std::fabs(pl - pr) < 0.1) continue;
        ++n;
        double c = stratum_velocity(sym, 0.0, pl, pr);
        worst = std::max(worst, std::fabs(c - (pl + pr)));
    }
    add_check(res, "rh_max_err", worst, worst <= 1e-12,
              "[H]/[p] - (p_l + p_r) over 100 samples");
    return res;
}

// ---------------------------------------------------------------------------
// amp-oracle: stationary symmetric shock amplitude ODE
// ---------------------------------------------------------------------------
RunResult run_amp_oracle(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    double dt = 1e-3;
    double e = 0.0;
    for (int i = 0; i < 1000; ++i) e = amplitude_step(e, 1.0, 1.0, 1.0, -1.0, 0.0, 0.0, dt);
    double err_lin = std::fabs(e - 2.0);
    add_check(res, "amp_err_linear", err_lin, err_lin <= 1e-6, "e(1) vs 2t oracle");

    e = 0.0;
    for (int i = 0; i < 1000; ++i) e = amplitude_step(e, 1.0, 1.0, 1.0, -1.0, 0.0, -1.0, dt);
    double err_rx = std::fabs(e - 2.0 * (1.0 - std::exp(-1.0)));
    add_check(res, "amp_err_reaction", err_rx, err_rx <= 1e-4,
              "e(1) vs 2(1 - exp(-t)) oracle");
    return res;
}

// ---------------------------------------------------------------------------
// merge: two converging shocks, Kirchhoff rule and mass balance
// ---------------------------------------------------------------------------
double merge_rho0(double x) {
    auto smoothstep = [](double s) {
        s = std::clamp(s, 0.0, 1.0);
        return s * s * (3.0 - 2.0 * s);
    };
    double a = std::fabs(x);
    return smoothstep((a - 0.6) / 0.1) * (1.0 - smoothstep((a - 2.0) / 0.2));
}

RunResult run_merge(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto fan = make_fan(sc, sym, sc.t_max);
    TrackOptions opt;
    opt.tube_radius = sc.tube_radius;
    auto tracked = track_fronts(sym, std::move(fan), merge_rho0, ARule::zero(), opt);

    add_check(res, "stratum_count", double(tracked.strata.size()), tracked.strata.size() == 3,
              "two parents and one merge child");
    if (tracked.strata.size() == 3) {
        const auto& s1 = tracked.strata[0];
        const auto& s2 = tracked.strata[1];
        const auto& s3 = tracked.strata[2];
        double t_m = s3.t.front();
        double gap = std::fabs(s3.e.front() - (s1.amplitude(t_m) + s2.amplitude(t_m)));
        add_check(res, "kirchhoff_gap", gap, gap == 0.0, "e3 = e1 + e2 exactly at the merge");
        add_metric(res, "merge_time", t_m);
        add_metric(res, "merge_x", s3.x.front());
        add_metric(res, "child_velocity", s3.velocity.back());
    }

    RegularDensity rd(sym, tracked.fan, merge_rho0, ARule::zero(), tracked.strata,
                      sc.tube_radius);
    double m0 = rd.total_mass(0.0, -2.4, 2.4, 9601);
    double worst = 0.0;
    for (double t : {0.1, 0.25, 0.45, 0.6, sc.t_max})
        worst = std::max(worst, std::fabs(rd.total_mass(t, -2.4, 2.4, 9601) - m0));
    add_check(res, "mass_drift_rel", worst / m0, worst <= 1e-3 * m0,
              "total mass conservation over the run");

    if (!sc.output_dir.empty()) {
        auto p1 = artifact_path(sc, "strata.csv");
        write_strata_paths_csv(tracked.strata, p1);
        res.artifacts.push_back(p1);
        auto p2 = artifact_path(sc, "merge_graph.json");
        write_merge_graph_json(tracked.strata, p2);
        res.artifacts.push_back(p2);
        auto p3 = artifact_path(sc, "density.csv");
        write_density_csv(rd, linspace(0.0, sc.t_max, 14), linspace(-2.4, 2.4, 961), p3);
        res.artifacts.push_back(p3);
    }
    return res;
}

// ---------------------------------------------------------------------------
// weak-sqrt: square-root weak-asymptotic residual decay
// ---------------------------------------------------------------------------
RunResult run_weak_sqrt(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    // Amplitude and background sized so the stretched-variable regime is
    // reached across the whole sweep window.
    auto R = [](double) { return 0.25; };
    auto zeta = [](double x) { return std::fabs(x) <= 1.0 ? 1.0 : 0.0; };
    auto out = weak_asymptotic_residual(R, 0.15, 0.0, sc.epsilons, zeta);
    for (std::size_t i = 0; i < out.eps.size(); ++i)
        add_metric(res, detail::strf("weak_residual_%zu", i), out.residual[i]);
    add_check(res, "weak_slope", out.loglog_slope, out.loglog_slope >= 0.4,
              "log-log decay slope");
    double last = out.residual.back();
    add_check(res, "weak_res_last", last, last <= 1e-2, "residual at the smallest eps");
    return res;
}

// ---------------------------------------------------------------------------
// surgery scenarios: blended characteristics with the eps Jacobian floor
// ---------------------------------------------------------------------------
void surgery_metrics(RunResult& res, const std::vector<double>& eps_list,
                     const std::vector<double>& Cs, const std::vector<bool>& sorted) {
    bool all_sorted = true;
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        add_metric(res, detail::strf("floor_C_%zu", i), Cs[i]);
        all_sorted = all_sorted && sorted[i];
    }
    double cmin = *std::min_element(Cs.begin(), Cs.end());
    double cmax = *std::max_element(Cs.begin(), Cs.end());
    add_check(res, "floor_C_min", cmin, cmin > 0.0, "fitted floor constant positive");
    add_check(res, "floor_C_ratio", cmin > 0 ? cmax / cmin : -1.0,
              cmin > 0 && cmax / cmin <= 2.0, "floor constant stable across the eps sweep");
    add_check(res, "sorted_live", all_sorted ? 1.0 : 0.0, all_sorted,
              "label -> x strictly increasing among live labels at every step");
}

void write_surgery_report(const Scenario& sc, RunResult& res, double t_star, double x_star,
                          double t1_star, double a1, double a2, double x1_star, double A,
                          double C_fit) {
    if (sc.output_dir.empty()) return;
    json j;
    j["t_star"] = t_star;
    j["x_star"] = x_star;
    j["t1_star"] = t1_star;
    j["a1"] = a1;
    j["a2"] = a2;
    j["x1_star"] = x1_star;
    j["A"] = A;
    j["C_fit"] = C_fit;
    auto p = artifact_path(sc, "surgery_report.json");
    std::ofstream f(p);
    f << j.dump(2) << "\n";
    res.artifacts.push_back(p);
}

RunResult run_surgery_homogeneous(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto prof = make_profile(sc);
    auto ins = insertion_initial_data(sym, prof.p0, 0.0, sc.beta, sc.t_max);
    auto labels = grid_with_spacing(sc.label_min, sc.label_max, sc.label_spacing);
    std::size_t nt = std::size_t(std::ceil(sc.t_max / sc.dt_out)) + 1;
    auto tg = linspace(0.0, sc.t_max, std::max<std::size_t>(nt, 2));

    auto build = [&](double eps, double A, bool enforce) {
        auto blend = BlendProfile::logistic(eps, ins.t_focus, A, sc.beta);
        blend.enforce_floor = enforce;
        return blended_fan_homogeneous(sym, prof.p0, prof.p0_prime, ins, blend, labels, tg);
    };
    double A = sc.shift_A;
    if (A <= 0.0)
        A = search_shift_constant(
            [&](double a) { return build(sc.epsilons.front(), a, false).floor_C; });

    std::vector<double> Cs;
    std::vector<bool> sorted;
    BlendedFan last;
    for (double eps : sc.epsilons) {
        last = build(eps, A, true);
        Cs.push_back(last.floor_C);
        sorted.push_back(last.sorted_live);
    }
    surgery_metrics(res, sc.epsilons, Cs, sorted);
    add_metric(res, "A_used", A);
    add_metric(res, "t_focus", ins.t_focus);
    double x_star = last.fan.x[last.fan.idx(0, (last.block_lo + last.block_hi) / 2)];
    write_surgery_report(sc, res, ins.t_focus, x_star, ins.t_focus, -sc.beta, sc.beta, x_star,
                         A, Cs.front());
    maybe_write_fan(sc, last.fan, res);
    return res;
}

RunResult run_surgery_inhomogeneous(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto plain = make_fan(sc, sym, sc.t_max);
    auto events = detect_caustic(sym, plain);
    require(!events.empty(), "surgery: no caustic in the plain fan");
    double t_star = events.front().t_star;
    double t1_star = t_star + sc.beta;
    auto surg = manifold_surgery(snapshot(plain, t1_star));

    auto build = [&](double eps, double A, bool enforce) {
        auto blend = BlendProfile::logistic(eps, t1_star, A, sc.beta);
        blend.enforce_floor = enforce;
        return backflow_and_blend(sym, surg, blend, sc.t_max, sc.dt_out, sc.t1);
    };
    double A = sc.shift_A;
    if (A <= 0.0)
        A = search_shift_constant(
            [&](double a) { return build(sc.epsilons.front(), a, false).blended.floor_C; });

    std::vector<double> Cs;
    std::vector<bool> sorted;
    std::vector<BackflowResult> runs;
    for (double eps : sc.epsilons) {
        runs.push_back(build(eps, A, true));
        Cs.push_back(runs.back().blended.floor_C);
        sorted.push_back(runs.back().blended.sorted_live);
    }
    surgery_metrics(res, sc.epsilons, Cs, sorted);
    add_metric(res, "A_used", A);
    add_metric(res, "t_star", t_star);
    add_metric(res, "t1_star", t1_star);
    add_metric(res, "x1_star", runs.back().surgered.x1_star);

    // Limiting Jacobian: before t1* the blended J tracks the plain flow of
    // the surgered manifold; past t1* it collapses to O(eps).
    {
        const auto& bf = runs.back().blended;  // smallest eps
        auto blend_off = BlendProfile::disabled(sc.beta);
        auto plain_run = backflow_and_blend(sym, runs.back().surgered, blend_off, t1_star - 0.05,
                                            sc.dt_out, runs.back().surgered.t1);
        const TrajectoryFan& f_eps = bf.fan;
        const TrajectoryFan& f0 = plain_run.blended.fan;
        std::size_t mid = (bf.block_lo + bf.block_hi) / 2;
        std::size_t ti_pre = 0;
        while (ti_pre + 1 < f0.n_times() && f0.tgrid[ti_pre + 1] <= t1_star - 0.05) ++ti_pre;
        std::size_t ti_eps = 0;
        while (ti_eps + 1 < f_eps.n_times() && f_eps.tgrid[ti_eps + 1] <= t1_star - 0.05)
            ++ti_eps;
        double ratio_pre =
            f_eps.J[f_eps.idx(ti_eps, mid)] / f0.J[f0.idx(ti_pre, mid)];
        add_metric(res, "limit_J_pre_ratio", ratio_pre);
        double j_post = f_eps.J[f_eps.idx(f_eps.n_times() - 1, mid)];
        add_metric(res, "limit_J_post", j_post);
        add_check(res, "limit_J_consistent", ratio_pre,
                  std::fabs(ratio_pre - 1.0) <= 0.1 && j_post <= 20.0 * sc.epsilons.back(),
                  "J tracks H(t*-t) J0 and collapses to O(eps) past t1*");
    }
    write_surgery_report(sc, res, t_star, events.front().x_star, t1_star,
                         runs.back().surgered.a1, runs.back().surgered.a2,
                         runs.back().surgered.x1_star, A, Cs.front());
    maybe_write_fan(sc, runs.back().blended.fan, res);
    return res;
}

// ---------------------------------------------------------------------------
// theorem2: leading-order ratio u e^{phi/eps} / sqrt(rho_reg) at regular points
// ---------------------------------------------------------------------------
RunResult run_theorem2(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto prof = make_profile(sc);
    double t = sc.compare_time;
    auto fan = std::make_shared<TrajectoryFan>(make_fan(sc, sym, t));

    auto xg = grid_with_spacing(sc.x_min, sc.x_max, sc.dx);
    auto phase = min_action(branch_decompose(snapshot(*fan, t)), xg);
    RegularDensity rd(sym, fan, [](double) { return 1.0; }, ARule::zero(), {});

    auto samples = linspace(sc.x_min + 0.1, sc.x_max - 0.1, 10);
    std::vector<std::vector<double>> ratios;
    for (double eps : sc.epsilons) {
        auto fd = fd_phase(sc, sym, prof, eps, t);
        double h = fd.xgrid[1] - fd.xgrid[0];
        std::vector<double> row;
        for (double x : samples) {
            auto gi = std::size_t(std::lround((x - fd.xgrid.front()) / h));
            std::size_t pi = std::size_t(std::lround((x - xg.front()) / sc.dx));
            double phi = phase.phi[pi];
            // fd.phi = -eps ln u, so u e^{phi/eps} = e^{(phi - fd.phi)/eps}.
            double ratio = std::exp((phi - fd.phi[gi]) / eps) / std::sqrt(rd.eval(x, t));
            row.push_back(ratio);
        }
        ratios.push_back(row);
    }
    // Fitted constant from the smallest eps; deviations must sit in the
    // [1 - 10 eps, 1 + 10 eps] band around it with a linear eps-trend.
    double c = 0.0;
    for (double r : ratios.back()) c += r;
    c /= double(ratios.back().size());
    add_metric(res, "fitted_const", c);

    bool band_ok = true;
    std::vector<double> devs;
    for (std::size_t i = 0; i < sc.epsilons.size(); ++i) {
        double dev = 0.0;
        for (double r : ratios[i]) dev = std::max(dev, std::fabs(r / c - 1.0));
        devs.push_back(dev);
        add_metric(res, detail::strf("t2_dev_%zu", i), dev);
        if (dev > 10.0 * sc.epsilons[i]) band_ok = false;
    }
    add_check(res, "t2_band", band_ok ? 1.0 : 0.0, band_ok,
              "ratios within [1 - 10 eps, 1 + 10 eps] of the fitted constant");
    double expect = sc.epsilons.front() / sc.epsilons.back();
    double trend = devs.back() > 0 ? devs.front() / devs.back() : 0.0;
    bool trend_ok = trend >= expect / 2.0 && trend <= expect * 2.0;
    add_check(res, "t2_trend", trend, trend_ok, "deviation scales linearly in eps (factor 2)");
    return res;
}

// ---------------------------------------------------------------------------
// time-reversal: backward-kernel reconstruction of the initial data
// ---------------------------------------------------------------------------
RunResult run_time_reversal(const Scenario& sc) {
    RunResult res;
    res.scenario = sc.name;
    auto sym = make_symbol(sc);
    auto prof = make_profile(sc);
    FanInitial init;
    init.labels = grid_with_spacing(sc.label_min, sc.label_max, sc.label_spacing);
    init.p0 = prof.p0;
    init.S0 = prof.S0;
    init.p0_prime = prof.p0_prime;
    std::size_t nt = std::size_t(std::ceil(sc.compare_time / sc.dt_out)) + 1;
    auto fan = evolve_fan(sym, init, linspace(0.0, sc.compare_time, std::max<std::size_t>(nt, 2)));

    auto phi0 = [](double) { return 1.0; };
    double prev = std::numeric_limits<double>::infinity();
    bool decreasing = true;
    for (std::size_t i = 0; i < sc.epsilons.size(); ++i) {
        auto rep = time_reversal_check(sym, fan, sc.compare_time, sc.epsilons[i], prof.S0, phi0,
                                       {sc.x_min, sc.x_max});
        add_check(res, detail::strf("tr_residual_%zu", i), rep.residual, rep.residual <= 1e-1,
                  detail::strf("eps=%g", sc.epsilons[i]));
        if (rep.residual >= prev) decreasing = false;
        prev = rep.residual;
    }
    add_check(res, "tr_decreasing", decreasing ? 1.0 : 0.0, decreasing,
              "weighted residual monotone in eps");

    // The concave data past its caustic must be refused by precondition.
    auto prof_m = profiles::tanh_minus();
    FanInitial initm;
    initm.labels = grid_with_spacing(-2.5, 2.5, 4e-3);
    initm.p0 = prof_m.p0;
    initm.S0 = prof_m.S0;
    initm.p0_prime = prof_m.p0_prime;
    auto fanm = evolve_fan(sym, initm, linspace(0.0, 0.7, 176));
    bool refused = false;
    try {
        time_reversal_check(sym, fanm, 0.7, 1e-2, prof_m.S0, phi0, {-0.5, 0.5});
    } catch (const Error&) {
        refused = true;
    }
    add_check(res, "tr_refused_post_caustic", refused ? 1.0 : 0.0, refused,
              "post-caustic reconstruction refused by precondition");
    return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

Scenario parse_scenario_json(const std::string& text) {
    json j = json::parse(text);
    Scenario sc;
    sc.raw_json = text;
    sc.schema = j.value("schema", 1);
    require(sc.schema == 1, "scenario: unsupported schema version");
    sc.name = j.value("name", "unnamed");
    sc.kind = j.value("kind", "pipeline");
    if (j.contains("symbol")) {
        const auto& s = j["symbol"];
        sc.symbol_kind = s.value("kind", "quadratic");
        sc.diffusion_const = s.value("A", 1.0);
        if (s.contains("V")) {
            if (s["V"].contains("poly"))
                sc.potential_poly = s["V"]["poly"].get<std::vector<double>>();
            if (s["V"].contains("sin")) {
                sc.potential_sin_amp = s["V"]["sin"].value("amp", 0.0);
                sc.potential_sin_freq = s["V"]["sin"].value("freq", 1.0);
            }
        }
        sc.lambda = s.value("lambda", 0.0);
        sc.nu0 = s.value("nu0", 0.0);
    }
    if (j.contains("initial")) {
        const auto& s = j["initial"];
        if (s.is_string()) {
            sc.initial = s.get<std::string>();
        } else {
            sc.initial = s.value("name", "tanh-plus");
            sc.wedge_width = s.value("width", sc.wedge_width);
            sc.step_half_gap = s.value("half_gap", sc.step_half_gap);
            sc.step_delta = s.value("delta", sc.step_delta);
            if (s.contains("poly")) sc.s0_poly = s["poly"].get<std::vector<double>>();
        }
    }
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        sc.label_min = g.value("label_min", sc.label_min);
        sc.label_max = g.value("label_max", sc.label_max);
        sc.label_spacing = g.value("label_spacing", sc.label_spacing);
        sc.t_max = g.value("t_max", sc.t_max);
        sc.dt_out = g.value("dt_out", sc.dt_out);
        sc.x_min = g.value("x_min", sc.x_min);
        sc.x_max = g.value("x_max", sc.x_max);
        sc.dx = g.value("dx", sc.dx);
    }
    if (j.contains("fd")) {
        const auto& g = j["fd"];
        sc.fd_x_min = g.value("x_min", sc.fd_x_min);
        sc.fd_x_max = g.value("x_max", sc.fd_x_max);
        sc.fd_dx = g.value("dx", sc.fd_dx);
        sc.fd_dt = g.value("dt", sc.fd_dt);
    }
    sc.compare_time = j.value("compare_time", sc.compare_time);
    if (j.contains("epsilons")) sc.epsilons = j["epsilons"].get<std::vector<double>>();
    if (j.contains("surgery")) {
        const auto& s = j["surgery"];
        sc.beta = s.value("beta", sc.beta);
        sc.shift_A = s.value("A", 0.0);
        sc.t1 = s.value("t1", 0.0);
    }
    sc.tube_radius = j.value("tube_radius", sc.tube_radius);
    sc.output_dir = j.value("output_dir", "");
    validate_scenario(sc);
    return sc;
}

Scenario parse_scenario_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "scenario: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_scenario_json(ss.str());
}

void validate_scenario(const Scenario& sc) {
    const std::vector<std::string> kinds = {
        "pipeline", "varadhan", "kernel-vs-fd", "rh-sample", "amp-oracle", "merge",
        "weak-sqrt", "surgery-homogeneous", "surgery-inhomogeneous", "theorem2",
        "time-reversal"};
    require(std::find(kinds.begin(), kinds.end(), sc.kind) != kinds.end(),
            "scenario: unknown kind '" + sc.kind + "'");
    require(sc.label_max > sc.label_min && sc.label_spacing > 0, "scenario: bad label grid");
    require(sc.t_max > 0 && sc.dt_out > 0, "scenario: bad time grid");
    require(!sc.epsilons.empty(), "scenario: empty epsilon list");
    double prev = std::numeric_limits<double>::infinity();
    for (double e : sc.epsilons) {
        require(e > 0 && e < prev, "scenario: epsilons must be positive and descending");
        prev = e;
    }
    if (sc.kind == "surgery-homogeneous" || sc.kind == "surgery-inhomogeneous") {
        require(sc.beta > 0, "scenario: surgery beta must be positive");
        for (double e : sc.epsilons)
            require(e <= sc.beta / 10.0,
                    detail::strf("scenario: scale condition eps <= beta/10 violated "
                                 "(eps=%g, beta=%g)", e, sc.beta));
    }
}

std::vector<std::string> builtin_scenario_names() {
    return {"convex-global",    "caustic-tanh",       "varadhan-convex",
            "varadhan-concave", "kernel-vs-fd",       "rh-random",
            "amp-oracle",       "merge-two-shocks",   "weak-sqrt",
            "surgery-wedge",    "surgery-sine",       "theorem2-concave",
            "time-reversal-convex"};
}

Scenario builtin_scenario(const std::string& name) {
    Scenario sc;
    sc.name = name;
    if (name == "convex-global") {
        sc.kind = "pipeline";
        sc.initial = "tanh-plus";
        sc.label_min = -3.0;
        sc.label_max = 3.0;
        sc.t_max = 5.0;
        sc.dt_out = 5e-3;
        sc.x_min = -1.0;
        sc.x_max = 1.0;
        return sc;
    }
    if (name == "caustic-tanh") {
        sc.kind = "pipeline";
        sc.initial = "tanh-minus";
        sc.label_min = -3.0;
        sc.label_max = 3.0;
        sc.t_max = 1.0;
        sc.dt_out = 2e-3;
        sc.x_min = -1.0;
        sc.x_max = 2.5;
        return sc;
    }
    if (name == "varadhan-convex") {
        sc.kind = "varadhan";
        sc.initial = "tanh-plus";
        sc.label_min = -5.0;
        sc.label_max = 3.0;
        sc.t_max = 0.4;
        sc.compare_time = 0.4;
        sc.epsilons = {0.02, 0.01, 0.005};
        sc.fd_x_min = -4.0;
        sc.fd_x_max = 3.0;
        return sc;
    }
    if (name == "varadhan-concave") {
        sc.kind = "varadhan";
        sc.initial = "tanh-minus";
        sc.label_min = -6.5;
        sc.label_max = 3.2;
        sc.t_max = 1.0;
        sc.dt_out = 4e-3;
        sc.compare_time = 0.4;
        sc.epsilons = {0.02, 0.01, 0.005};
        sc.fd_x_min = -6.5;
        sc.fd_x_max = 4.5;
        return sc;
    }
    if (name == "kernel-vs-fd") {
        sc.kind = "kernel-vs-fd";
        sc.epsilons = {0.05};
        sc.compare_time = 0.5;
        sc.fd_x_min = -6.0;
        sc.fd_x_max = 6.0;
        sc.fd_dx = 2e-3;
        sc.fd_dt = 2.5e-4;
        return sc;
    }
    if (name == "rh-random") {
        sc.kind = "rh-sample";
        return sc;
    }
    if (name == "amp-oracle") {
        sc.kind = "amp-oracle";
        return sc;
    }
    if (name == "merge-two-shocks") {
        sc.kind = "merge";
        sc.initial = "double-step";
        sc.step_half_gap = 0.5;
        sc.step_delta = 5e-3;
        sc.label_min = -3.0;
        sc.label_max = 3.0;
        sc.label_spacing = 1e-3;
        sc.t_max = 0.65;
        sc.dt_out = 2e-3;
        sc.tube_radius = 1e-3;
        return sc;
    }
    if (name == "weak-sqrt") {
        sc.kind = "weak-sqrt";
        sc.epsilons = {1e-2, 1e-3, 1e-4};
        return sc;
    }
    if (name == "surgery-wedge") {
        sc.kind = "surgery-homogeneous";
        sc.initial = "wedge";
        sc.wedge_width = 0.4;
        sc.beta = 0.4;
        sc.label_min = -2.0;
        sc.label_max = 2.0;
        sc.t_max = 1.4;
        sc.dt_out = 5e-3;
        sc.epsilons = {1e-2, 3e-3, 1e-3};
        sc.shift_A = 0.0;  // automated search
        return sc;
    }
    if (name == "surgery-sine") {
        sc.kind = "surgery-inhomogeneous";
        sc.initial = "tanh-minus";
        sc.symbol_kind = "quadratic+potential";
        sc.potential_sin_amp = 0.1;
        sc.potential_sin_freq = 1.0;
        sc.beta = 0.12;
        sc.label_min = -4.0;
        sc.label_max = 3.0;
        sc.t_max = 1.0;
        sc.dt_out = 4e-3;
        sc.epsilons = {1e-2, 3e-3, 1e-3};
        sc.shift_A = 0.0;
        return sc;
    }
    if (name == "theorem2-concave") {
        sc.kind = "theorem2";
        sc.initial = "tanh-minus";
        sc.label_min = -6.5;
        sc.label_max = 3.2;
        sc.t_max = 1.0;
        sc.dt_out = 4e-3;
        sc.compare_time = 1.0;
        sc.x_min = -1.0;
        sc.x_max = 1.0;
        sc.epsilons = {0.02, 0.01, 0.005};
        sc.fd_x_min = -6.5;
        sc.fd_x_max = 4.5;
        return sc;
    }
    if (name == "time-reversal-convex") {
        sc.kind = "time-reversal";
        sc.initial = "tanh-plus";
        sc.label_min = -2.5;
        sc.label_max = 2.5;
        sc.t_max = 0.5;
        sc.compare_time = 0.5;
        sc.x_min = -1.0;
        sc.x_max = 1.0;
        sc.epsilons = {1e-2, 5e-3, 2.5e-3};
        return sc;
    }
    fail("unknown built-in scenario '" + name + "'");
}

RunResult run_scenario(const Scenario& sc) {
    validate_scenario(sc);
    RunResult res;
    if (sc.kind == "pipeline") {
        res = run_pipeline(sc);
        if (sc.name == "caustic-tanh") {
            const Metric* ts = res.find("t_star");
            const Metric* x0 = res.find("x0_star");
            bool ok_t = ts && std::fabs(ts->value - 0.5) <= 1e-3;
            bool ok_x = x0 && std::fabs(x0->value) <= 1e-2;
            add_check(res, "t_star_check", ts ? ts->value : -1.0, ok_t, "t* = 0.5 +- 1e-3");
            add_check(res, "x0_star_check", x0 ? x0->value : -1.0, ok_x, "x0 = 0 +- 1e-2");
        }
        if (sc.name == "convex-global") {
            const Metric* mj = res.find("min_J");
            const Metric* cc = res.find("caustic_count");
            add_check(res, "min_J_check", mj ? mj->value : -1.0, mj && mj->value >= 1.0,
                      "min J >= 1 over the run");
            add_check(res, "caustics_empty", cc ? cc->value : -1.0, cc && cc->value == 0.0,
                      "no caustic events");
        }
    } else if (sc.kind == "varadhan") {
        double post = sc.name == "varadhan-concave" ? 1.0 : 0.0;
        res = run_varadhan(sc, post);
    } else if (sc.kind == "kernel-vs-fd") {
        res = run_kernel_vs_fd(sc);
    } else if (sc.kind == "rh-sample") {
        res = run_rh_sample(sc);
    } else if (sc.kind == "amp-oracle") {
        res = run_amp_oracle(sc);
    } else if (sc.kind == "merge") {
        res = run_merge(sc);
    } else if (sc.kind == "weak-sqrt") {
        res = run_weak_sqrt(sc);
    } else if (sc.kind == "surgery-homogeneous") {
        res = run_surgery_homogeneous(sc);
    } else if (sc.kind == "surgery-inhomogeneous") {
        res = run_surgery_inhomogeneous(sc);
    } else if (sc.kind == "theorem2") {
        res = run_theorem2(sc);
    } else if (sc.kind == "time-reversal") {
        res = run_time_reversal(sc);
    } else {
        fail("scenario: unknown kind '" + sc.kind + "'");
    }
    res.scenario = sc.name;
    if (!sc.output_dir.empty()) {
        auto p = artifact_path(sc, "summary.json");
        write_summary_json(res, p);
        res.artifacts.push_back(p);
    }
    return res;
}

SweepResult sweep_scenario(const Scenario& sc, const std::string& parameter,
                           const std::vector<double>& values) {
    require(parameter == "epsilon" || parameter == "beta" || parameter == "label_spacing" ||
                parameter == "dt",
            "sweep: parameter must be one of epsilon, beta, label_spacing, dt");
    require(!values.empty(), "sweep: empty value list");

    SweepResult out;
    out.parameter = parameter;
    out.values = values;

    if (parameter == "dt") {
        // Richardson-style trajectory convergence: global error of the
        // one-step method against a 4x-refined reference run.
        auto sym = make_symbol(sc);
        auto prof = make_profile(sc);
        out.metric_name = "trajectory_error";
        for (double v : values) {
            require(v > 0, "sweep: dt must be positive");
            TrajectoryState s0{0.3, prof.p0(0.3), 0.0, 1.0, prof.p0_prime(0.3)};
            double T = sc.t_max;
            auto coarse = integrate_state(sym, s0, 0.0, T, std::size_t(std::ceil(T / v)));
            auto fine = integrate_state(sym, s0, 0.0, T, std::size_t(std::ceil(T / v) * 4));
            out.metric.push_back(std::fabs(coarse.x - fine.x) + std::fabs(coarse.p - fine.p));
        }
    } else {
        for (double v : values) {
            Scenario run = sc;
            if (parameter == "epsilon") {
                run.epsilons = {v};
                if (run.kind == "pipeline") {
                    run.kind = "varadhan";
                    run.t_max = run.compare_time;
                }
            } else if (parameter == "beta") {
                run.beta = v;
            } else {
                run.label_spacing = v;
            }
            run.output_dir.clear();
            auto res = run_scenario(run);
            double metric = 0.0;
            if (const Metric* m = res.find("varadhan_sup_err_0"))
                metric = m->value;
            else if (const Metric* m2 = res.find("floor_C_0"))
                metric = m2->value;
            else if (const Metric* m3 = res.find("t_star"))
                metric = m3->value;
            else if (!res.metrics.empty())
                metric = res.metrics.front().value;
            out.metric.push_back(metric);
            if (out.metric_name.empty()) {
                out.metric_name = res.find("varadhan_sup_err_0") ? "varadhan_sup_err"
                                  : res.find("floor_C_0")        ? "floor_C"
                                  : res.find("t_star")           ? "t_star"
                                                                 : "metric";
            }
        }
    }

    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        if (out.values[i] > 0 && out.metric[i] > 0) {
            lx.push_back(std::log(out.values[i]));
            ly.push_back(std::log(out.metric[i]));
        }
    out.loglog_slope = lx.size() >= 2 ? fit_slope(lx, ly) : 0.0;
    return out;
}

void write_summary_json(const RunResult& result, const std::string& path) {
    json j;
    j["scenario"] = result.scenario;
    j["all_pass"] = result.all_pass;
    json arr = json::array();
    for (const auto& m : result.metrics) {
        json e;
        e["name"] = m.name;
        e["value"] = m.value;
        if (m.checked) {
            e["pass"] = m.pass;
            e["detail"] = m.detail;
        }
        arr.push_back(e);
    }
    j["metrics"] = arr;
    j["artifacts"] = result.artifacts;
    std::ofstream f(path);
    require(f.good(), "write_summary_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "write_sweep_csv: cannot open " + path);
    f << result.parameter << ',' << result.metric_name << "\n";
    for (std::size_t i = 0; i < result.values.size(); ++i)
        f << fmt_full(result.values[i]) << ',' << fmt_full(result.metric[i]) << "\n";
    f << "# loglog_slope," << fmt_full(result.loglog_slope) << "\n";
}

}  // namespace tunnelflow
