#pragma once

#include <map>
#include <string>
#include <vector>

#include "tunnelflow/common.hpp"

namespace tunnelflow {

/// Parsed scenario configuration. Scenarios are described by JSON files
/// with a versioned "schema" field; see the README for the full schema and
/// list-builtins for the shipped presets.
struct Scenario {
    int schema = 1;
    std::string name;
    std::string kind;  ///< pipeline | varadhan | kernel-vs-fd | rh-sample |
                       ///< amp-oracle | merge | weak-sqrt | surgery-homogeneous |
                       ///< surgery-inhomogeneous | theorem2 | time-reversal
    std::string raw_json;

    // symbol
    std::string symbol_kind = "quadratic";  // quadratic | quadratic+potential | jump
    double diffusion_const = 1.0;
    std::vector<double> potential_poly;
    double potential_sin_amp = 0.0, potential_sin_freq = 1.0;
    double lambda = 0.0, nu0 = 0.0;

    // initial data
    std::string initial = "tanh-plus";  // tanh-plus | tanh-minus | wedge | double-step | poly
    double wedge_width = 0.4;
    double step_half_gap = 0.5, step_delta = 0.01;
    std::vector<double> s0_poly;

    // grids
    double label_min = -3.0, label_max = 3.0, label_spacing = 2e-3;
    double t_max = 1.0, dt_out = 2e-3;
    double x_min = -1.0, x_max = 1.0, dx = 1e-3;

    // reference solver
    double fd_x_min = -4.0, fd_x_max = 3.0, fd_dx = 1e-3, fd_dt = 1e-4;
    double compare_time = 0.4;

    std::vector<double> epsilons = {1e-2};

    // surgery
    double beta = 0.05;
    double shift_A = 0.0;  ///< 0 = automated search
    double t1 = 0.0;       ///< 0 = beta/2

    // continuity
    double tube_radius = 1e-3;

    std::string output_dir;
};

/// One scalar summary metric with an optional pass/fail check attached.
struct Metric {
    std::string name;
    double value = 0.0;
    bool checked = false;
    bool pass = false;
    std::string detail;
};

struct RunResult {
    std::string scenario;
    std::vector<Metric> metrics;
    std::vector<std::string> artifacts;
    bool all_pass = true;

    const Metric* find(const std::string& name) const;
};

Scenario parse_scenario_file(const std::string& path);
Scenario parse_scenario_json(const std::string& text);
void validate_scenario(const Scenario& sc);

std::vector<std::string> builtin_scenario_names();
Scenario builtin_scenario(const std::string& name);

/// Executes the scenario, writes its artifact files under output_dir (when
/// set) and returns the summary metrics. Deterministic for a fixed config.
RunResult run_scenario(const Scenario& sc);

/// Re-runs the scenario over a swept parameter, collecting the primary
/// metric per value plus a log-log convergence slope where meaningful.
/// parameter is one of: epsilon, beta, label_spacing, dt.
struct SweepResult {
    std::string parameter;
    std::vector<double> values;
    std::vector<double> metric;
    std::string metric_name;
    double loglog_slope = 0.0;
};

SweepResult sweep_scenario(const Scenario& sc, const std::string& parameter,
                           const std::vector<double>& values);

void write_summary_json(const RunResult& result, const std::string& path);
void write_sweep_csv(const SweepResult& result, const std::string& path);

}  // namespace tunnelflow
