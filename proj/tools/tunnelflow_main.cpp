// Scenario runner: validates configs, executes named experiments and
// parameter sweeps, and emits the CSV/JSON artifacts described in the
// README. Exit codes: 0 = all checks pass, 1 = a check failed, 2 = error.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tunnelflow/scenario.hpp"

namespace {

tunnelflow::Scenario load(const std::string& ref) {
    if (std::filesystem::exists(ref)) return tunnelflow::parse_scenario_file(ref);
    auto names = tunnelflow::builtin_scenario_names();
    for (const auto& n : names)
        if (n == ref) return tunnelflow::builtin_scenario(ref);
    tunnelflow::fail("no such config file or built-in scenario: " + ref);
}

void print_result(const tunnelflow::RunResult& res) {
    std::printf("scenario %s\n", res.scenario.c_str());
    for (const auto& m : res.metrics) {
        if (m.checked)
            std::printf("  [%s] %-28s %.17g  (%s)\n", m.pass ? "PASS" : "FAIL",
                        m.name.c_str(), m.value, m.detail.c_str());
        else
            std::printf("  [    ] %-28s %.17g\n", m.name.c_str(), m.value);
    }
    for (const auto& a : res.artifacts) std::printf("  wrote %s\n", a.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tunnelflow: global-in-time tunnel asymptotics toolkit"};
    app.require_subcommand(1);

    std::string config;
    auto* validate = app.add_subcommand("validate", "parse and validate a scenario config");
    validate->add_option("config", config, "config file or built-in name")->required();

    auto* run = app.add_subcommand("run", "run a scenario and emit artifacts");
    run->add_option("config", config, "config file or built-in name")->required();
    std::string out_dir;
    run->add_option("--output", out_dir, "override the output directory");

    auto* sweep = app.add_subcommand("sweep", "re-run a scenario over a parameter");
    sweep->add_option("config", config, "config file or built-in name")->required();
    std::string param;
    std::vector<double> values;
    sweep->add_option("--param", param, "epsilon | beta | label_spacing | dt")->required();
    sweep->add_option("--values", values, "swept values")->required()->delimiter(',');
    std::string sweep_out;
    sweep->add_option("--output", sweep_out, "sweep table CSV path");

    auto* list = app.add_subcommand("list-builtins", "list built-in scenarios");

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            for (const auto& n : tunnelflow::builtin_scenario_names()) std::printf("%s\n", n.c_str());
            return 0;
        }
        if (validate->parsed()) {
            auto sc = load(config);
            std::printf("ok: scenario '%s' (kind %s)\n", sc.name.c_str(), sc.kind.c_str());
            return 0;
        }
        if (run->parsed()) {
            auto sc = load(config);
            if (!out_dir.empty()) sc.output_dir = out_dir;
            auto res = tunnelflow::run_scenario(sc);
            print_result(res);
            return res.all_pass ? 0 : 1;
        }
        if (sweep->parsed()) {
            auto sc = load(config);
            sc.output_dir.clear();
            auto res = tunnelflow::sweep_scenario(sc, param, values);
            std::printf("%s sweep of %s (metric %s)\n", param.c_str(), sc.name.c_str(),
                        res.metric_name.c_str());
            for (std::size_t i = 0; i < res.values.size(); ++i)
                std::printf("  %-12.6g %.17g\n", res.values[i], res.metric[i]);
            std::printf("  loglog slope %.6g\n", res.loglog_slope);
            if (!sweep_out.empty()) {
                tunnelflow::write_sweep_csv(res, sweep_out);
                std::printf("  wrote %s\n", sweep_out.c_str());
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
