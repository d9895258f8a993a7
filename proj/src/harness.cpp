#include "mfest/harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "json.hpp"

namespace mfest {

namespace {

using Json = nlohmann::ordered_json;

std::string join_issues(const std::vector<std::string>& problems) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    return msg;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

bool is_multiple(double value, double ts) {
    if (!(value > 0.0) || !(ts > 0.0)) return false;
    const double k = std::round(value / ts);
    return k >= 1.0 && std::abs(k * ts - value) <= 1e-9 * value;
}

// --- sectioned key = value text ---------------------------------------------

using RawConfig = std::map<std::string, std::map<std::string, std::string>>;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

RawConfig parse_sections(const std::string& text, std::vector<std::string>& problems) {
    RawConfig raw;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                problems.push_back("line " + std::to_string(lineno) + ": malformed section header");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            raw[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            problems.push_back("line " + std::to_string(lineno) + ": key outside any section");
            continue;
        }
        raw[section][key] = value;
    }
    return raw;
}

struct FieldReader {
    const std::map<std::string, std::string>* kv;
    std::string section;
    std::vector<std::string>* problems;

    std::optional<std::string> raw(const std::string& key) const {
        if (!kv) return std::nullopt;
        const auto it = kv->find(key);
        if (it == kv->end()) return std::nullopt;
        return it->second;
    }

    double number(const std::string& key, double fallback) const {
        const auto v = raw(key);
        if (!v) return fallback;
        try {
            std::size_t used = 0;
            const double d = std::stod(*v, &used);
            if (used != v->size()) throw std::invalid_argument("trailing characters");
            return d;
        } catch (const std::exception&) {
            problems->push_back(section + "." + key + ": not a number ('" + *v + "')");
            return fallback;
        }
    }

    int integer(const std::string& key, int fallback) const {
        const double d = number(key, fallback);
        if (d != std::floor(d)) {
            problems->push_back(section + "." + key + ": not an integer");
            return fallback;
        }
        return static_cast<int>(d);
    }

    bool boolean(const std::string& key, bool fallback) const {
        const auto v = raw(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1") return true;
        if (*v == "false" || *v == "0") return false;
        problems->push_back(section + "." + key + ": expected true/false");
        return fallback;
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        const auto v = raw(key);
        return v ? *v : fallback;
    }

    std::vector<double> number_list(const std::string& key) const {
        std::vector<double> out;
        const auto v = raw(key);
        if (!v) return out;
        std::istringstream in(*v);
        std::string item;
        while (std::getline(in, item, ',')) {
            try {
                out.push_back(std::stod(trim(item)));
            } catch (const std::exception&) {
                problems->push_back(section + "." + key + ": bad list entry '" + item + "'");
            }
        }
        return out;
    }
};

const std::vector<std::string> kParameterMethods = {"batch", "gramian", "normalized",
                                                    "direct-ct"};

bool is_parameter_method(const std::string& m) {
    return std::find(kParameterMethods.begin(), kParameterMethods.end(), m) !=
           kParameterMethods.end();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_issues(problems)), issues(std::move(problems)) {}

ContinuousLtiSystem observability_canonical_system(const IoCoefficients& io) {
    const auto n = io.a.size();
    // First state is y; the -a column sits on the left of a shifted identity
    // and b stacks in matching (reversed) order.
    Matrix A = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        A(i, 0) = -io.a(n - 1 - i);
        if (i + 1 < n) A(i, i + 1) = 1.0;
    }
    Matrix B(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) B(i, 0) = io.b(n - 1 - i);
    Matrix C = Matrix::Zero(1, n);
    C(0, 0) = 1.0;
    Vector bd = Vector::Zero(n);
    bd(n - 1) = 1.0;  // constant disturbance drives the last state equation
    return ContinuousLtiSystem(std::move(A), std::move(B), std::move(C), bd);
}

ScenarioConfig parse_config_text(const std::string& text, const std::string& name) {
    std::vector<std::string> problems;
    const RawConfig raw = parse_sections(text, problems);

    ScenarioConfig cfg;
    cfg.name = name;

    const auto reader = [&](const std::string& section) -> FieldReader {
        const auto it = raw.find(section);
        return FieldReader{it == raw.end() ? nullptr : &it->second, section, &problems};
    };

    {
        const FieldReader plant = reader("plant");
        const std::string type = plant.text("type", "rc");
        if (type == "csv") {
            cfg.plant_from_csv = true;
            cfg.csv_path = plant.text("path", "");
        } else if (type == "rc") {
            cfg.rc.c_m = plant.number("c_m", cfg.rc.c_m);
            cfg.rc.c_s = plant.number("c_s", cfg.rc.c_s);
            cfg.rc.r_ms = plant.number("r_ms", cfg.rc.r_ms);
            cfg.rc.r_sr = plant.number("r_sr", cfg.rc.r_sr);
            cfg.rc.t_r = plant.number("t_r", cfg.rc.t_r);
        } else {
            problems.push_back("plant.type: must be rc or csv");
        }
        cfg.input_gain = plant.number("input_gain", 1.0);
    }
    {
        const FieldReader input = reader("input");
        const std::string kind = input.text("kind", "pulse");
        if (kind == "pulse") cfg.input.kind = InputProfile::Kind::Pulse;
        else if (kind == "prbs") cfg.input.kind = InputProfile::Kind::Prbs;
        else if (kind == "sine") cfg.input.kind = InputProfile::Kind::Sine;
        else if (kind == "constant") cfg.input.kind = InputProfile::Kind::Constant;
        else problems.push_back("input.kind: must be pulse, prbs, sine or constant");
        cfg.input.amplitude = input.number("amplitude", cfg.input.amplitude);
        cfg.input.period = input.number("period", cfg.input.period);
        cfg.input.duty = input.number("duty", cfg.input.duty);
        cfg.input.offset = input.number("offset", cfg.input.offset);
        cfg.input.chip_time = input.number("chip", cfg.input.chip_time);
        cfg.input.prbs_bits = input.integer("prbs_bits", cfg.input.prbs_bits);
    }
    {
        const FieldReader noise = reader("noise");
        cfg.noise_amplitude = noise.number("amplitude", 0.0);
    }
    {
        const FieldReader run = reader("run");
        cfg.ts = run.number("ts", cfg.ts);
        cfg.duration = run.number("duration", cfg.duration);
        cfg.seed = static_cast<std::uint64_t>(run.number("seed", 1.0));
    }

    for (const auto& [section, kv] : raw) {
        (void)kv;
        constexpr const char* prefix = "estimator.";
        if (section.rfind(prefix, 0) != 0) continue;
        const FieldReader est = reader(section);
        EstimatorSpec spec;
        spec.name = section.substr(std::string(prefix).size());
        spec.method = est.text("method", spec.name);
        spec.horizon = est.number("t", spec.horizon);
        spec.t_prime = est.number("t_prime", spec.t_prime);
        spec.include_d = est.boolean("include_d", spec.include_d);
        spec.mf_count = est.integer("mf_count", spec.mf_count);
        spec.mf_first_order = est.integer("mf_first_order", spec.mf_first_order);
        spec.quadrature = est.text("quadrature", spec.quadrature);
        spec.solve_stride = est.integer("stride", spec.solve_stride);
        spec.gramian_kernel = est.text("gramian_kernel", spec.gramian_kernel);
        spec.y_hold = est.text("y_hold", spec.y_hold);
        spec.m_l = est.integer("m_l", spec.m_l);
        spec.mode = est.text("mode", spec.mode);
        spec.coeff_source = est.text("coeff_source", spec.coeff_source);
        spec.coeff_values = est.number_list("coefficients");
        spec.update_stride = est.number("update_stride", spec.update_stride);
        spec.pole_scale = est.number("pole_scale", spec.pole_scale);
        cfg.estimators.push_back(std::move(spec));
    }

    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"config file not readable: " + path.string()});
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path.stem().string());
}

std::vector<std::string> validate_config(const ScenarioConfig& cfg) {
    std::vector<std::string> issues;
    const auto require = [&](bool ok, const std::string& msg) {
        if (!ok) issues.push_back(msg);
    };

    require(cfg.ts > 0.0, "run.ts: must be positive");
    require(cfg.duration >= cfg.ts, "run.duration: must be at least one sample period");
    require(!cfg.estimators.empty(), "estimator: at least one estimator must be enabled");

    if (cfg.plant_from_csv) {
        require(!cfg.csv_path.empty(), "plant.path: required for csv plants");
    } else {
        require(cfg.rc.c_m > 0.0, "plant.c_m: must be positive");
        require(cfg.rc.c_s > 0.0, "plant.c_s: must be positive");
        require(cfg.rc.r_ms > 0.0, "plant.r_ms: must be positive");
        require(cfg.rc.r_sr > 0.0, "plant.r_sr: must be positive");
    }
    require(cfg.noise_amplitude >= 0.0, "noise.amplitude: must be >= 0");

    if (cfg.input.kind == InputProfile::Kind::Pulse || cfg.input.kind == InputProfile::Kind::Sine)
        require(cfg.input.period > 0.0, "input.period: must be positive");
    if (cfg.input.kind == InputProfile::Kind::Pulse)
        require(cfg.input.duty >= 0.0 && cfg.input.duty <= 1.0, "input.duty: must be in [0, 1]");
    if (cfg.input.kind == InputProfile::Kind::Prbs) {
        require(cfg.input.chip_time > 0.0, "input.chip: must be positive");
        require(cfg.input.prbs_bits == 7 || cfg.input.prbs_bits == 10 || cfg.input.prbs_bits == 15,
                "input.prbs_bits: must be 7, 10 or 15");
    }

    for (const auto& est : cfg.estimators) {
        const std::string path = "estimator." + est.name;
        const bool param = is_parameter_method(est.method);
        const bool state = est.method == "mf-state";
        const bool luen = est.method == "luenberger";
        if (!param && !state && !luen) {
            issues.push_back(path + ".method: unknown method '" + est.method + "'");
            continue;
        }
        if (param || state)
            require(is_multiple(est.horizon, cfg.ts), path + ".t: must be a positive multiple of run.ts");
        if (param && est.method != "batch")
            require(is_multiple(est.t_prime, cfg.ts),
                    path + ".t_prime: must be a positive multiple of run.ts");
        if (est.method == "batch" || est.method == "gramian") {
            require(est.mf_count >= 1, path + ".mf_count: must be >= 1");
            require(est.quadrature.empty() || est.quadrature == "rectangle" ||
                        est.quadrature == "trapezoid" || est.quadrature == "interpolant",
                    path + ".quadrature: must be rectangle, trapezoid or interpolant");
        }
        if (est.method == "normalized") {
            require(est.quadrature.empty() || est.quadrature == "rectangle" ||
                        est.quadrature == "trapezoid",
                    path + ".quadrature: must be rectangle or trapezoid");
            require(est.solve_stride >= 1, path + ".stride: must be >= 1");
            if (est.solve_stride >= 1)
                require(is_multiple(est.t_prime, est.solve_stride * cfg.ts),
                        path + ".t_prime: must be a multiple of stride * run.ts");
        }
        if (est.method == "gramian" || est.method == "direct-ct")
            require(est.gramian_kernel == "uniform" || est.gramian_kernel == "poly",
                    path + ".gramian_kernel: must be uniform or poly");
        if (est.method == "direct-ct")
            require(est.y_hold == "zoh" || est.y_hold == "foh" || est.y_hold == "qoh",
                    path + ".y_hold: must be zoh, foh or qoh");
        if (state) {
            require(est.mode == "left" || est.mode == "right-reversed",
                    path + ".mode: must be left or right-reversed");
            require(est.m_l >= 0, path + ".m_l: must be >= 0");
        }
        if (state || luen) {
            if (est.coeff_source == "truth") {
                require(!cfg.plant_from_csv,
                        path + ".coeff_source: truth is unavailable for csv plants");
            } else if (est.coeff_source == "explicit") {
                require(est.coeff_values.size() == 5,
                        path + ".coefficients: expected a0,a1,b0,b1,d");
            } else if (luen) {
                // The observer is realized once at start; it cannot follow a
                // cascaded coefficient stream.
                issues.push_back(path + ".coeff_source: luenberger supports truth or explicit");
            } else {
                const bool found = std::any_of(
                    cfg.estimators.begin(), cfg.estimators.end(), [&](const EstimatorSpec& e) {
                        return e.name == est.coeff_source && is_parameter_method(e.method);
                    });
                require(found, path + ".coeff_source: no parameter estimator named '" +
                                   est.coeff_source + "'");
            }
        }
        if (luen) require(est.pole_scale > 0.0, path + ".pole_scale: must be positive");
    }
    return issues;
}

// ---------------------------------------------------------------------------

namespace {

struct RunningEstimator {
    EstimatorSpec spec;
    std::unique_ptr<ParameterEstimatorBase> param;
    std::unique_ptr<MfStateEstimator> state;
    std::unique_ptr<LuenbergerObserver> luenberger;
    ParameterEstimatorBase* cascade_source = nullptr;
    std::int64_t stride_ticks = 0;
    int cascade_failures = 0;
    EstimateTrace trace;
};

// The diverse asymmetric bank by default; an explicit mf_first_order selects
// the nested symmetric family t^k (t-T)^k instead.
std::vector<ModulatingFunction> default_bank(int n, int first_k, int count, double horizon) {
    if (first_k <= 0) return make_total_mf_bank(n, count, horizon);
    std::vector<ModulatingFunction> bank;
    for (int k = first_k; k < first_k + count; ++k)
        bank.push_back(make_normalized_total_mf(std::max(k, n), horizon));
    return bank;
}

Vector param_trace_value(const ParameterEstimate& est, int n, bool include_d) {
    const IoCoefficients io = est.to_io(n, include_d);
    Vector v(2 * n + 1);
    v.segment(0, n) = io.a;
    v.segment(n, n) = io.b;
    v(2 * n) = io.d;
    return v;
}

void apply_coefficients(MfStateEstimator& est, const IoCoefficients& io) {
    // Second-order coefficient sets go through the physical map so the state
    // is expressed in the plant's own coordinates; other orders use the
    // observability-canonical realization.
    if (io.a.size() == 2) {
        const RcParams p = io_to_physical(io);
        est.set_coefficients(io, structural_matrices(rc_system(p)));
    } else {
        est.set_coefficients(io, structural_matrices(observability_canonical_system(io)));
    }
}

// Exact ZOH propagation of a model along recorded input samples; returns the
// output sequence. Used for goodness-of-fit re-simulation.
std::vector<double> resimulate_output(const ContinuousLtiSystem& model, const Vector& x0,
                                      const std::vector<double>& u, double ts,
                                      double disturbance_value) {
    const auto n = model.order();
    Matrix aug = Matrix::Zero(n + 2, n + 2);
    aug.topLeftCorner(n, n) = model.A();
    aug.block(0, n, n, 1) = model.B();
    if (model.disturbance_gain())
        aug.block(0, n + 1, n, 1) = *model.disturbance_gain() * disturbance_value;
    const Matrix e = (aug * ts).exp();
    const Matrix ad = e.topLeftCorner(n, n);
    const Vector bu = e.block(0, n, n, 1);
    const Vector bd = e.block(0, n + 1, n, 1);

    std::vector<double> y(u.size());
    Vector x = x0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        y[k] = (model.C() * x)(0, 0);
        x = ad * x + bu * u[k] + bd;
    }
    return y;
}

void write_csv_line(std::ofstream& out, const std::vector<double>& row,
                    const std::vector<std::string>& tail) {
    bool first = true;
    for (double v : row) {
        if (!first) out << ',';
        out << fmt_double(v);
        first = false;
    }
    for (const auto& s : tail) {
        if (!first) out << ',';
        out << s;
        first = false;
    }
    out << '\n';
}

}  // namespace

RunReport run_scenario(const ScenarioConfig& cfg, const RunOptions& opts) {
    {
        auto issues = validate_config(cfg);
        if (!issues.empty()) throw ConfigError(std::move(issues));
    }
    const auto t_start = std::chrono::steady_clock::now();

    ScenarioConfig run_cfg = cfg;
    if (opts.seed_override) run_cfg.seed = *opts.seed_override;

    // --- data -----------------------------------------------------------
    Trajectory clean;
    std::optional<ContinuousLtiSystem> truth_sys;
    std::optional<IoCoefficients> truth_io;
    if (run_cfg.plant_from_csv) {
        clean = load_csv(run_cfg.csv_path);
        run_cfg.ts = clean.ts;
    } else {
        truth_sys = rc_system(run_cfg.rc);
        truth_io = rc_io_truth(run_cfg.rc);
        InputProfile profile = run_cfg.input;
        profile.amplitude *= run_cfg.input_gain;
        profile.offset *= run_cfg.input_gain;
        profile.seed = derive_seed(run_cfg.seed, 2);
        clean = simulate(*truth_sys, profile, rc_equilibrium(run_cfg.rc), run_cfg.ts,
                         run_cfg.duration, run_cfg.rc.t_r);
    }
    const Trajectory data = run_cfg.noise_amplitude > 0.0
                                ? add_noise(clean, run_cfg.noise_amplitude, derive_seed(run_cfg.seed, 1))
                                : clean;

    const int n = 2;  // second-order identification model
    const bool have_truth = truth_io.has_value();

    // --- estimator construction ------------------------------------------
    std::vector<RunningEstimator> running;
    std::vector<std::string> warnings_global;
    for (const auto& spec : cfg.estimators) {
        RunningEstimator re;
        re.spec = spec;
        // Method defaults: the exact-interpolant regression and the
        // trapezoidal kernel solver measure one to two orders of magnitude
        // more accurately at coarse sampling than the plain rectangle rule.
        const RegressionQuadrature scheme =
            spec.quadrature == "trapezoid"
                ? RegressionQuadrature::Trapezoid
                : (spec.quadrature == "rectangle" ? RegressionQuadrature::Rectangle
                                                  : RegressionQuadrature::InterpolantExact);
        if (spec.method == "batch") {
            re.param = std::make_unique<BatchEstimator>(
                n, spec.include_d, spec.horizon, run_cfg.ts,
                default_bank(n, spec.mf_first_order, spec.mf_count, spec.horizon), scheme);
        } else if (spec.method == "gramian") {
            std::unique_ptr<MfGenerator> kernel;
            if (spec.gramian_kernel == "poly")
                kernel = std::make_unique<MfGenerator>(
                    make_mf_generator(make_normalized_total_mf(2, spec.t_prime)));
            re.param = std::make_unique<GramianEstimator>(
                n, spec.include_d, spec.horizon, spec.t_prime, run_cfg.ts,
                default_bank(n, spec.mf_first_order, spec.mf_count, spec.horizon), kernel.get(),
                scheme);
        } else if (spec.method == "normalized") {
            re.param = std::make_unique<NormalizedEstimator>(
                n, spec.include_d, spec.horizon, spec.t_prime, run_cfg.ts,
                spec.quadrature == "rectangle" ? AlphaScheme::Rectangle
                                               : AlphaScheme::Trapezoid,
                spec.solve_stride);
        } else if (spec.method == "direct-ct") {
            const MfGenerator reg_kernel =
                make_mf_generator(make_normalized_total_mf(n, spec.horizon));
            std::unique_ptr<MfGenerator> kernel;
            if (spec.gramian_kernel == "poly")
                kernel = std::make_unique<MfGenerator>(
                    make_mf_generator(make_normalized_total_mf(2, spec.t_prime)));
            const InputHold hold = spec.y_hold == "foh"
                                       ? InputHold::Foh
                                       : (spec.y_hold == "qoh" ? InputHold::Qoh : InputHold::Zoh);
            re.param = std::make_unique<DirectCtEstimator>(n, spec.include_d, reg_kernel,
                                                           run_cfg.ts, spec.t_prime, kernel.get(),
                                                           hold);
        } else if (spec.method == "mf-state") {
            re.state = std::make_unique<MfStateEstimator>(
                n, spec.horizon, run_cfg.ts, spec.m_l,
                spec.mode == "right-reversed" ? StateMfMode::RightReversed : StateMfMode::Left);
        } else if (spec.method == "luenberger") {
            // Realized below once coefficients are known.
        }
        running.push_back(std::move(re));
    }

    // Cascade wiring and fixed coefficient sources.
    for (auto& re : running) {
        if (!re.state && re.spec.method != "luenberger") continue;
        IoCoefficients io;
        bool have_io = false;
        if (re.spec.coeff_source == "truth" && have_truth) {
            io = *truth_io;
            have_io = true;
        } else if (re.spec.coeff_source == "explicit") {
            io.a = Eigen::Map<const Vector>(re.spec.coeff_values.data(), 2);
            io.b = Eigen::Map<const Vector>(re.spec.coeff_values.data() + 2, 2);
            io.d = re.spec.coeff_values[4];
            have_io = true;
        } else {
            for (auto& other : running) {
                if (other.spec.name == re.spec.coeff_source && other.param) {
                    re.cascade_source = other.param.get();
                    const double source_tp = other.spec.t_prime;
                    const double stride =
                        re.spec.update_stride > 0.0 ? re.spec.update_stride : source_tp / 10.0;
                    re.stride_ticks = std::max<std::int64_t>(
                        1, static_cast<std::int64_t>(std::llround(stride / run_cfg.ts)));
                }
            }
        }
        if (re.state && have_io) {
            try {
                apply_coefficients(*re.state, io);
            } catch (const EstimationError& e) {
                warnings_global.push_back(re.spec.name + ": " + e.what());
            }
        }
        if (re.spec.method == "luenberger") {
            try {
                ContinuousLtiSystem sys = have_io && io.a.size() == 2
                                              ? rc_system(io_to_physical(io))
                                              : (truth_sys ? *truth_sys
                                                           : observability_canonical_system(io));
                const double dist = have_io ? (io.a(0) != 0.0 ? io.d / io.a(0) : 0.0)
                                            : (have_truth ? run_cfg.rc.t_r : 0.0);
                re.luenberger = std::make_unique<LuenbergerObserver>(
                    LuenbergerObserver::with_pole_scale(sys, re.spec.pole_scale, run_cfg.ts, dist));
            } catch (const std::exception& e) {
                warnings_global.push_back(re.spec.name + ": observer construction failed: " +
                                          std::string(e.what()));
            }
        }
    }

    // --- tick loop --------------------------------------------------------
    const std::size_t samples = data.t.size();
    for (std::size_t k = 0; k < samples; ++k) {
        const double tk = data.t[k];
        const double uk = data.u[k];
        const double yk = data.y[k];
        for (auto& re : running) {
            // Cascaded coefficient refresh uses the source's previous tick.
            if (re.state && re.cascade_source && re.stride_ticks > 0 &&
                static_cast<std::int64_t>(k) % re.stride_ticks == 0) {
                if (auto est = re.cascade_source->latest(); est && !est->stale) {
                    try {
                        apply_coefficients(*re.state, est->to_io(n, re.spec.include_d));
                    } catch (const EstimationError&) {
                        ++re.cascade_failures;
                    }
                }
            }

            if (re.param) {
                re.param->step(uk, yk);
                const auto est = re.param->latest();
                if (est) {
                    const Vector v = param_trace_value(*est, n, re.spec.include_d);
                    re.trace.append(tk, &v, true, est->stale);
                } else {
                    re.trace.append(tk, nullptr, false, false);
                }
            } else if (re.state) {
                re.state->step(uk, yk);
                const auto est = re.state->latest();
                if (est) {
                    re.trace.append(tk, &est->x_hat, true, false);
                } else {
                    re.trace.append(tk, nullptr, false, false);
                }
            } else if (re.luenberger) {
                re.luenberger->step(uk, yk);
                const Vector v = re.luenberger->state();
                re.trace.append(tk, &v, true, false);
            } else {
                re.trace.append(tk, nullptr, false, false);
            }
        }
    }

    // --- outputs ----------------------------------------------------------
    std::filesystem::create_directories(opts.out_dir);
    RunReport report;
    report.scenario = run_cfg.name;
    report.seed = run_cfg.seed;
    report.ts = run_cfg.ts;
    report.duration = run_cfg.duration;

    const auto data_file = opts.out_dir / (run_cfg.name + "_data.csv");
    write_trace_csv(data_file, data);
    report.files.push_back(data_file.string());

    std::ofstream tidy;
    std::filesystem::path tidy_file;
    if (opts.write_tidy) {
        tidy_file = opts.out_dir / (run_cfg.name + "_tidy.csv");
        tidy.open(tidy_file);
        tidy << "t,series,value\n";
        for (std::size_t k = 0; k < samples; ++k) {
            tidy << fmt_double(data.t[k]) << ",u," << fmt_double(data.u[k]) << '\n';
            tidy << fmt_double(data.t[k]) << ",y," << fmt_double(data.y[k]) << '\n';
        }
    }

    for (auto& re : running) {
        EstimatorReport er;
        er.name = re.spec.name;
        er.method = re.spec.method;

        const bool param_kind = re.param != nullptr;
        const std::vector<std::string> comp_names = [&]() -> std::vector<std::string> {
            if (param_kind) return {"a0", "a1", "b0", "b1", "d"};
            std::vector<std::string> names;
            for (int i = 1; i <= n; ++i) names.push_back("x" + std::to_string(i) + "_hat");
            return names;
        }();

        // Trace file.
        const auto trace_path =
            opts.out_dir / (run_cfg.name + "_" + re.spec.name + "." + opts.trace_format);
        if (opts.trace_format == "json") {
            Json j = Json::array();
            for (std::size_t k = 0; k < re.trace.size(); ++k) {
                Json row;
                row["t"] = re.trace.t[k];
                row["valid"] = re.trace.valid[k] != 0;
                row["stale"] = re.trace.stale[k] != 0;
                if (re.trace.valid[k])
                    for (std::size_t c = 0; c < comp_names.size(); ++c)
                        row[comp_names[c]] = re.trace.values[k](static_cast<Eigen::Index>(c));
                j.push_back(std::move(row));
            }
            std::ofstream out(trace_path);
            out << j.dump(1) << '\n';
        } else {
            std::ofstream out(trace_path);
            out << "t";
            for (const auto& c : comp_names) out << ',' << c;
            const bool with_err = !param_kind && clean.x_true.size() > 0;
            if (with_err) out << ",err_sup";
            out << ",valid,stale\n";
            for (std::size_t k = 0; k < re.trace.size(); ++k) {
                std::vector<double> row{re.trace.t[k]};
                if (re.trace.valid[k]) {
                    for (std::size_t c = 0; c < comp_names.size(); ++c)
                        row.push_back(re.trace.values[k](static_cast<Eigen::Index>(c)));
                    if (with_err)
                        row.push_back((re.trace.values[k] -
                                       clean.x_true.row(static_cast<Eigen::Index>(k)).transpose())
                                          .cwiseAbs()
                                          .maxCoeff());
                } else {
                    row.insert(row.end(), comp_names.size() + (with_err ? 1 : 0),
                               std::numeric_limits<double>::quiet_NaN());
                }
                write_csv_line(out, row, {re.trace.valid[k] ? "1" : "0",
                                          re.trace.stale[k] ? "1" : "0"});
            }
        }
        er.trace_file = trace_path.string();
        report.files.push_back(trace_path.string());

        if (tidy.is_open()) {
            for (std::size_t k = 0; k < re.trace.size(); ++k) {
                if (!re.trace.valid[k]) continue;
                for (std::size_t c = 0; c < comp_names.size(); ++c)
                    tidy << fmt_double(re.trace.t[k]) << ',' << re.spec.name << '.'
                         << comp_names[c] << ','
                         << fmt_double(re.trace.values[k](static_cast<Eigen::Index>(c))) << '\n';
            }
        }

        // Final values and metrics.
        if (re.param) {
            er.failures = re.param->failure_count();
            if (const auto est = re.param->latest()) {
                er.produced_estimate = true;
                er.final_value = param_trace_value(*est, n, re.spec.include_d);
                er.condition = est->condition;
                if (est->stale) er.warnings.push_back("final estimate is stale");
                if (have_truth) {
                    const IoCoefficients hat = est->to_io(n, re.spec.include_d);
                    const auto rel = [](double est_v, double truth_v) {
                        return std::abs(est_v - truth_v) / std::max(1e-300, std::abs(truth_v));
                    };
                    er.metrics["rel_err_a0"] = rel(hat.a(0), truth_io->a(0));
                    er.metrics["rel_err_a1"] = rel(hat.a(1), truth_io->a(1));
                    er.metrics["rel_err_b0"] = rel(hat.b(0), truth_io->b(0));
                    er.metrics["rel_err_b1"] = rel(hat.b(1), truth_io->b(1));
                    if (re.spec.include_d) er.metrics["rel_err_d"] = rel(hat.d, truth_io->d);
                }
                // Goodness of fit of the re-simulated model against the clean
                // output (or the measurement itself for imported logs).
                try {
                    const IoCoefficients hat = est->to_io(n, re.spec.include_d);
                    const ContinuousLtiSystem model = observability_canonical_system(hat);
                    Vector x0(2);
                    const double y_eq = hat.a(0) != 0.0 ? hat.d / hat.a(0) : clean.y.front();
                    x0 << y_eq, hat.a(1) * y_eq;
                    const std::vector<double> y_model =
                        resimulate_output(model, x0, data.u, run_cfg.ts, hat.d);
                    er.fit = fit_percent(clean.y, y_model);
                } catch (const std::exception& e) {
                    er.warnings.push_back(std::string("fit unavailable: ") + e.what());
                }
            }
        } else if (re.state || re.luenberger) {
            if (re.cascade_failures > 0)
                er.warnings.push_back(std::to_string(re.cascade_failures) +
                                      " cascade updates rejected");
            if (re.state) er.failures = re.state->failure_count();
            double sup_err = 0.0;
            bool any_valid = false;
            for (std::size_t k = 0; k < re.trace.size(); ++k) {
                if (!re.trace.valid[k]) continue;
                if (!any_valid) {
                    er.produced_estimate = true;
                    any_valid = true;
                }
                er.final_value = re.trace.values[k];
                if (clean.x_true.size() > 0) {
                    const double e = (re.trace.values[k] -
                                      clean.x_true.row(static_cast<Eigen::Index>(k)).transpose())
                                         .cwiseAbs()
                                         .maxCoeff();
                    sup_err = std::max(sup_err, e);
                }
            }
            if (any_valid && clean.x_true.size() > 0) er.metrics["sup_state_err"] = sup_err;
        }
        for (const auto& w : warnings_global)
            if (w.rfind(re.spec.name + ":", 0) == 0) er.warnings.push_back(w);
        report.estimators.push_back(std::move(er));
    }

    if (tidy.is_open()) {
        tidy.close();
        report.files.push_back(tidy_file.string());
    }

    const auto report_path = opts.out_dir / (run_cfg.name + "_report.json");
    write_report(report_path, report);
    report.files.push_back(report_path.string());

    const auto elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::cerr << run_cfg.name << ": " << samples << " ticks in " << elapsed << " s ("
              << (elapsed / static_cast<double>(samples) * 1e3) << " ms/tick)\n";
    return report;
}

Trajectory load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("csv is empty: " + path.string());
    std::vector<std::string> header;
    {
        std::istringstream hs(trim(line));
        std::string col;
        while (std::getline(hs, col, ',')) header.push_back(trim(col));
    }
    const std::vector<std::string> required = {"t", "u", "y"};
    for (std::size_t c = 0; c < required.size(); ++c) {
        if (header.size() <= c || header[c] != required[c])
            throw std::runtime_error("csv schema error: missing column '" + required[c] + "'");
    }
    const bool with_state = header.size() >= 5 && header[3] == "x1" && header[4] == "x2";

    Trajectory traj;
    std::vector<std::array<double, 2>> states;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> cells;
        while (std::getline(ls, cell, ',')) {
            try {
                cells.push_back(std::stod(trim(cell)));
            } catch (const std::exception&) {
                throw std::runtime_error("csv parse error at line " + std::to_string(lineno));
            }
        }
        if (cells.size() != header.size())
            throw std::runtime_error("csv row width mismatch at line " + std::to_string(lineno));
        traj.t.push_back(cells[0]);
        traj.u.push_back(cells[1]);
        traj.y.push_back(cells[2]);
        if (with_state) states.push_back({cells[3], cells[4]});
    }
    if (traj.t.size() < 2) throw std::runtime_error("csv needs at least two rows");

    const double ts = traj.t[1] - traj.t[0];
    if (!(ts > 0.0)) throw std::runtime_error("csv time grid is not increasing");
    for (std::size_t k = 0; k < traj.t.size(); ++k) {
        const double expected = traj.t[0] + static_cast<double>(k) * ts;
        if (std::abs(traj.t[k] - expected) > 1e-3 * ts)
            throw std::runtime_error("csv time grid is not uniform at line " +
                                     std::to_string(k + 2));
    }
    traj.ts = ts;
    if (with_state) {
        traj.x_true.resize(static_cast<Eigen::Index>(states.size()), 2);
        for (std::size_t k = 0; k < states.size(); ++k) {
            traj.x_true(static_cast<Eigen::Index>(k), 0) = states[k][0];
            traj.x_true(static_cast<Eigen::Index>(k), 1) = states[k][1];
        }
    }
    return traj;
}

void write_trace_csv(const std::filesystem::path& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write csv: " + path.string());
    const bool with_state = traj.x_true.size() > 0;
    out << (with_state ? "t,u,y,x1,x2" : "t,u,y") << '\n';
    for (std::size_t k = 0; k < traj.t.size(); ++k) {
        out << fmt_double(traj.t[k]) << ',' << fmt_double(traj.u[k]) << ','
            << fmt_double(traj.y[k]);
        if (with_state)
            for (Eigen::Index c = 0; c < traj.x_true.cols(); ++c)
                out << ',' << fmt_double(traj.x_true(static_cast<Eigen::Index>(k), c));
        out << '\n';
    }
}

void write_report(const std::filesystem::path& path, const RunReport& report) {
    Json j;
    j["scenario"] = report.scenario;
    j["seed"] = report.seed;
    j["ts"] = report.ts;
    j["duration"] = report.duration;
    Json ests = Json::array();
    for (const auto& er : report.estimators) {
        Json e;
        e["name"] = er.name;
        e["method"] = er.method;
        e["produced_estimate"] = er.produced_estimate;
        if (er.produced_estimate) {
            Json final_value = Json::array();
            for (Eigen::Index i = 0; i < er.final_value.size(); ++i)
                final_value.push_back(er.final_value(i));
            e["final_value"] = std::move(final_value);
            e["condition"] = er.condition;
        }
        e["failures"] = er.failures;
        if (std::isfinite(er.fit)) e["fit_percent"] = er.fit;
        if (!er.metrics.empty()) {
            Json m;
            for (const auto& [k, v] : er.metrics) m[k] = v;
            e["metrics"] = std::move(m);
        }
        if (!er.warnings.empty()) e["warnings"] = er.warnings;
        e["trace_file"] = er.trace_file;
        ests.push_back(std::move(e));
    }
    j["estimators"] = std::move(ests);
    j["files"] = report.files;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path.string());
    out << j.dump(1) << '\n';
}

std::vector<std::string> bundled_scenario_names() { return {"param-pulse", "state-prbs"}; }

std::string bundled_scenario_config(const std::string& name) {
    if (name == "param-pulse") {
        return R"(# On-line identification of the simulated RC plant under pulse excitation.
[plant]
type = rc
c_m = 10
c_s = 50
r_ms = 2
r_sr = 5
t_r = 20
input_gain = 1

[input]
kind = pulse
amplitude = 1.5
period = 1200
duty = 0.5

[noise]
amplitude = 0

[run]
ts = 2
duration = 4200
seed = 1

[estimator.batch]
method = batch
t = 2000

[estimator.gramian]
method = gramian
t = 2000
t_prime = 2000

[estimator.normalized]
method = normalized
t = 2000
t_prime = 2000

[estimator.direct-ct]
method = direct-ct
t = 2000
t_prime = 2000
gramian_kernel = poly
)";
    }
    if (name == "state-prbs") {
        return R"(# Finite-time state estimation on the simulated RC plant, PRBS input.
[plant]
type = rc
c_m = 10
c_s = 50
r_ms = 2
r_sr = 5
t_r = 20
input_gain = 1

[input]
kind = prbs
amplitude = 1.5
chip = 60

[noise]
amplitude = 0

[run]
ts = 1
duration = 600
seed = 1

[estimator.mf-state]
method = mf-state
t = 50
mode = left
coeff_source = truth

[estimator.luenberger]
method = luenberger
pole_scale = 2.5
coeff_source = truth
)";
    }
    throw std::out_of_range("unknown bundled scenario: " + name);
}

}  // namespace mfest
