// Command-line front end: runs and validates estimation scenarios.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "mfest/harness.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitEstimatorFailure = 3;

mfest::ScenarioConfig resolve_config(const std::string& ref) {
    for (const auto& name : mfest::bundled_scenario_names()) {
        if (ref == name) return mfest::parse_config_text(mfest::bundled_scenario_config(name), name);
    }
    return mfest::load_config(ref);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mfest - modulating-function parameter and state estimation"};
    app.require_subcommand(1);

    std::string config_ref;
    std::string out_dir = ".";
    std::string format = "csv";
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* run = app.add_subcommand("run", "run a scenario (bundled name or config path)");
    run->add_option("config", config_ref, "bundled scenario name or config file")->required();
    run->add_option("--out-dir", out_dir, "output directory (default: current)");
    run->add_option("--format", format, "estimate trace format: csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
    run->add_option("--seed", seed, "override the scenario seed")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* validate = app.add_subcommand("validate", "check a scenario config");
    validate->add_option("config", config_ref, "bundled scenario name or config file")->required();

    auto* list = app.add_subcommand("list-scenarios", "list bundled scenarios");

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            for (const auto& name : mfest::bundled_scenario_names()) std::cout << name << '\n';
            return 0;
        }

        if (validate->parsed()) {
            const auto cfg = resolve_config(config_ref);
            const auto issues = mfest::validate_config(cfg);
            if (!issues.empty()) {
                for (const auto& issue : issues) std::cerr << issue << '\n';
                return kExitConfigError;
            }
            std::cout << "ok\n";
            return 0;
        }

        const auto cfg = resolve_config(config_ref);
        mfest::RunOptions opts;
        opts.out_dir = out_dir;
        opts.trace_format = format;
        if (seed_set) opts.seed_override = seed;

        const auto report = mfest::run_scenario(cfg, opts);
        bool all_produced = true;
        for (const auto& er : report.estimators) {
            std::cout << er.name << " (" << er.method << "): "
                      << (er.produced_estimate ? "ok" : "no valid estimate");
            if (!er.metrics.empty()) {
                for (const auto& [k, v] : er.metrics) std::cout << "  " << k << "=" << v;
            }
            std::cout << '\n';
            all_produced = all_produced && er.produced_estimate;
        }
        std::cout << "report: " << report.files.back() << '\n';
        return all_produced ? 0 : kExitEstimatorFailure;
    } catch (const mfest::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
