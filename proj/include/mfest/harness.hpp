#pragma once

#include <filesystem>
#include <map>
#include <optional>

#include "mfest/estimators.hpp"
#include "mfest/plant.hpp"

namespace mfest {

/// Configuration problems, each formatted as "section.key: message".
struct ConfigError : std::runtime_error {
    explicit ConfigError(std::vector<std::string> problems);
    std::vector<std::string> issues;
};

/// Observability-canonical realization of an IO coefficient set, with the
/// constant disturbance entering the last state equation (gain e_n, value d).
ContinuousLtiSystem observability_canonical_system(const IoCoefficients& io);

struct EstimatorSpec {
    std::string name;
    std::string method;        // batch | gramian | normalized | direct-ct | mf-state | luenberger
    double horizon = 2000.0;   // T
    double t_prime = 2000.0;   // T'
    bool include_d = true;
    int mf_count = 5;          // fixed-bank size
    int mf_first_order = 0;    // 0 -> diverse default bank; k -> symmetric family from k
    std::string quadrature;    // rectangle | trapezoid | interpolant; empty -> method default
    int solve_stride = 1;      // normalized: kernel re-solve cadence in ticks
    std::string gramian_kernel = "uniform"; // uniform | poly
    std::string y_hold = "foh";             // direct-ct y channel: zoh | foh | qoh
    // mf-state
    int m_l = 0;                            // 0 -> n
    std::string mode = "left";              // left | right-reversed
    std::string coeff_source = "truth";     // truth | explicit | <estimator name>
    std::vector<double> coeff_values;       // a0..a_{n-1}, b0..b_{n-1}, d
    double update_stride = 0.0;             // 0 -> T'/10 of the source
    // luenberger
    double pole_scale = 2.5;
};

struct ScenarioConfig {
    std::string name = "scenario";
    // plant
    bool plant_from_csv = false;
    std::string csv_path;
    RcParams rc;
    double input_gain = 1.0;
    // input
    InputProfile input;
    // noise
    double noise_amplitude = 0.0;
    // run
    double ts = 2.0;
    double duration = 4000.0;
    std::uint64_t seed = 1;

    std::vector<EstimatorSpec> estimators;
};

/// Parses the sectioned key = value format. Throws ConfigError listing every
/// problem with its field path.
ScenarioConfig parse_config_text(const std::string& text, const std::string& name = "scenario");
ScenarioConfig load_config(const std::filesystem::path& path);

/// Full validation; empty result means the config is runnable.
std::vector<std::string> validate_config(const ScenarioConfig& cfg);

struct EstimatorReport {
    std::string name;
    std::string method;
    bool produced_estimate = false;
    Vector final_value;                      // theta or state estimate
    double condition = 0.0;
    int failures = 0;
    double fit = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> metrics;   // relative errors, sup errors, ...
    std::vector<std::string> warnings;
    std::string trace_file;
};

struct RunReport {
    std::string scenario;
    std::uint64_t seed = 0;
    double ts = 0.0;
    double duration = 0.0;
    std::vector<EstimatorReport> estimators;
    std::vector<std::string> files;          // everything written
};

struct RunOptions {
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed_override;
    std::string trace_format = "csv";        // csv | json
    bool write_tidy = true;
};

/// Streams the scenario tick by tick through every configured estimator and
/// writes traces, tidy plot data and report.json. Deterministic for a given
/// config + seed; estimator failures become warnings, not aborts.
RunReport run_scenario(const ScenarioConfig& cfg, const RunOptions& opts);

/// CSV schema: header `t,u,y[,x1,x2]`, comma separated, one row per tick.
/// Rejects missing columns (naming them), ragged rows and time grids with
/// more than 0.1% jitter.
Trajectory load_csv(const std::filesystem::path& path);
void write_trace_csv(const std::filesystem::path& path, const Trajectory& traj);
void write_report(const std::filesystem::path& path, const RunReport& report);

std::vector<std::string> bundled_scenario_names();
/// Config text of a bundled scenario; throws std::out_of_range for unknown
/// names.
std::string bundled_scenario_config(const std::string& name);

}  // namespace mfest
