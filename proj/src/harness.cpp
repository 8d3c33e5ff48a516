#include "wior/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "wior/problems.hpp"
#include "wior/rng.hpp"
#include "wior/vecops.hpp"

namespace wior {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// --- config parsing ----------------------------------------------------------

struct RawConfig {
    struct Entry {
        std::string value;
        std::size_t line = 0;
        bool consumed = false;
    };
    std::map<std::string, Entry> entries;
    std::string origin;

    bool has(const std::string& key) const { return entries.contains(key); }

    std::optional<std::string> take(const std::string& key) {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        it->second.consumed = true;
        return it->second.value;
    }

    std::string require(const std::string& key) {
        auto v = take(key);
        if (!v) throw ConfigError(origin + ": missing required key '" + key + "'");
        return *v;
    }

    void fail_unconsumed() const {
        for (const auto& [key, entry] : entries)
            if (!entry.consumed)
                throw ConfigError(origin + ":" + std::to_string(entry.line) +
                                  ": unknown key '" + key + "'");
    }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

RawConfig tokenize_config(const std::string& text, const std::string& origin) {
    RawConfig raw;
    raw.origin = origin;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key or value");
        if (raw.entries.contains(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                              "'");
        raw.entries[key] = {value, lineno, false};
    }
    return raw;
}

double parse_double(const RawConfig& raw, const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(raw.origin + ": key '" + key + "': expected a number, got '" + value +
                          "'");
    }
}

std::uint64_t parse_u64(const RawConfig& raw, const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(raw.origin + ": key '" + key + "': expected a nonnegative integer, got '" +
                          value + "'");
    }
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> items;
    std::string current;
    std::istringstream is(value);
    while (std::getline(is, current, ',')) {
        const std::string t = trim(current);
        if (!t.empty()) items.push_back(t);
    }
    return items;
}

const std::map<std::string, std::vector<std::string>> kAlgorithmProblems = {
    {"wior_bo", {"quadratic_bilevel", "data_cleaning"}},
    {"wior_cbo", {"irm"}},
    {"wior_comp", {"linear_comp"}},
    {"wior_ccomp", {"cond_linear_comp"}},
    {"wior_minimax", {"quad_minimax"}},
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    RawConfig raw = tokenize_config(text, origin);
    ExperimentConfig cfg;

    cfg.problem.name = raw.require("problem.name");
    cfg.problem.seed = parse_u64(raw, "problem.seed", raw.require("problem.seed"));
    auto take_size = [&](const std::string& key, std::size_t fallback, bool required = false) {
        auto v = raw.take(key);
        if (!v) {
            if (required) throw ConfigError(origin + ": missing required key '" + key + "'");
            return fallback;
        }
        return static_cast<std::size_t>(parse_u64(raw, key, *v));
    };
    auto take_double = [&](const std::string& key, double fallback) {
        auto v = raw.take(key);
        return v ? parse_double(raw, key, *v) : fallback;
    };

    if (cfg.problem.name == "quadratic_bilevel") {
        cfg.problem.p = take_size("problem.p", 0, true);
        cfg.problem.d = take_size("problem.d", 0, true);
        cfg.problem.m = take_size("problem.m", 0, true);
        cfg.problem.n = take_size("problem.n", 0, true);
        cfg.problem.kappa = take_double("problem.kappa", 10.0);
    } else if (cfg.problem.name == "irm") {
        cfg.problem.m = take_size("problem.m", 0, true);
        cfg.problem.n = take_size("problem.n", 0, true);
        cfg.problem.p = take_size("problem.p", 0, true);
        cfg.problem.sigma = take_double("problem.sigma", 0.1);
        cfg.problem.lambda_out = take_double("problem.lambda_out", 0.1);
    } else if (cfg.problem.name == "data_cleaning") {
        cfg.problem.n_train = take_size("problem.n_train", 200);
        cfg.problem.n_val = take_size("problem.n_val", 50);
        cfg.problem.corrupt_frac = take_double("problem.corrupt_frac", 0.6);
    } else if (cfg.problem.name == "quad_minimax") {
        cfg.problem.p = take_size("problem.p", 0, true);
        cfg.problem.d = take_size("problem.d", 0, true);
        cfg.problem.m = take_size("problem.m", 0, true);
    } else if (cfg.problem.name == "linear_comp" || cfg.problem.name == "cond_linear_comp") {
        cfg.problem.p = take_size("problem.p", 0, true);
        cfg.problem.d = take_size("problem.d", 0, true);
        cfg.problem.m = take_size("problem.m", 0, true);
        cfg.problem.n = take_size("problem.n", 0, true);
    } else {
        throw ConfigError(origin + ": unknown problem '" + cfg.problem.name + "'");
    }

    cfg.algorithm = raw.require("algorithm");
    const auto algo_it = kAlgorithmProblems.find(cfg.algorithm);
    if (algo_it == kAlgorithmProblems.end())
        throw ConfigError(origin + ": unknown algorithm '" + cfg.algorithm + "'");
    const auto& allowed = algo_it->second;
    if (std::find(allowed.begin(), allowed.end(), cfg.problem.name) == allowed.end())
        throw ConfigError(origin + ": algorithm " + cfg.algorithm +
                          " is not compatible with problem " + cfg.problem.name);

    for (const std::string& name : split_list(raw.require("samplers"))) {
        try {
            cfg.samplers.push_back(sampling_from_string(name));
        } catch (const Error& e) {
            throw ConfigError(origin + ": " + e.what());
        }
    }
    if (cfg.samplers.empty()) throw ConfigError(origin + ": samplers list is empty");

    cfg.epochs = take_size("run.epochs", 0, true);
    if (cfg.epochs == 0) throw ConfigError(origin + ": run.epochs must be >= 1");
    cfg.inner_epochs = take_size("run.inner_epochs", 1);
    cfg.eta = parse_double(raw, "run.eta", raw.require("run.eta"));
    cfg.gamma = parse_double(raw, "run.gamma", raw.require("run.gamma"));
    cfg.rho = take_double("run.rho", cfg.gamma);
    if (auto v = raw.take("run.iota"); v && *v != "auto")
        cfg.iota = parse_double(raw, "run.iota", *v);
    cfg.eval_interval = take_size("run.eval_interval", 0);
    cfg.rate_decay = take_double("run.decay", 1.0);
    if (auto v = raw.take("run.warm_start")) {
        if (*v == "fresh")
            cfg.warm_start = WarmStart::FreshEachOuterStep;
        else if (*v == "carry")
            cfg.warm_start = WarmStart::CarryAcrossS;
        else
            throw ConfigError(origin + ": run.warm_start must be 'fresh' or 'carry'");
    }
    if (auto v = raw.take("run.max_wall_seconds"))
        cfg.max_wall_seconds = parse_double(raw, "run.max_wall_seconds", *v);

    for (const std::string& s : split_list(raw.require("trial.seeds")))
        cfg.trial_seeds.push_back(parse_u64(raw, "trial.seeds", s));
    if (cfg.trial_seeds.empty()) throw ConfigError(origin + ": trial.seeds list is empty");

    if (auto v = raw.take("output.dir")) cfg.out_dir = *v;
    else if (const char* env = std::getenv("WIOR_OUT_DIR")) cfg.out_dir = env;
    if (auto v = raw.take("target.grad_norm"))
        cfg.target_grad_norm = parse_double(raw, "target.grad_norm", *v);

    raw.fail_unconsumed();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

// --- trial execution -----------------------------------------------------------

namespace {

struct BuiltRun {
    RunTrace trace;
    bool diverged = false;
};

double auto_iota_comp(std::span<const double> target_grad) {
    return 4.0 * vec::nrm2(target_grad) + 1.0;
}

BuiltRun dispatch_trial(const ExperimentConfig& cfg, Sampling sampler, std::uint64_t seed) {
    BuiltRun out;
    const ProblemSpec& ps = cfg.problem;

    auto run_caught = [&](auto&& fn) {
        try {
            out.trace = fn();
        } catch (DivergenceError& e) {
            out.trace = std::move(e.partial);
            out.diverged = true;
        }
    };

    if (cfg.algorithm == "wior_bo") {
        RunConfig rc;
        rc.epochs = cfg.epochs;
        rc.strategy = sampler;
        rc.seed = seed;
        rc.eval_interval = cfg.eval_interval;
        rc.max_wall_seconds = cfg.max_wall_seconds;
        rc.rate_decay_per_epoch = cfg.rate_decay;
        if (ps.name == "quadratic_bilevel") {
            const QuadraticBilevel prob =
                gen_quadratic_bilevel(ps.p, ps.d, ps.m, ps.n, ps.kappa, ps.seed);
            rc.rates = RateConfig::from_rates(cfg.eta, cfg.gamma, cfg.rho,
                                              cfg.iota.value_or(prob.meta().default_iota()));
            run_caught([&] {
                return wior_bo(prob, IterateBO::zeros(prob.p(), prob.d()), rc);
            });
        } else {
            const DataCleaningSmall prob =
                gen_data_cleaning_small(ps.n_train, ps.n_val, ps.corrupt_frac, ps.seed);
            rc.rates = RateConfig::from_rates(cfg.eta, cfg.gamma, cfg.rho,
                                              cfg.iota.value_or(prob.meta().default_iota()));
            IterateBO init = IterateBO::zeros(prob.p(), prob.d());
            init.x = prob.uniform_weights();
            run_caught([&] { return wior_bo(prob, init, rc); });
        }
    } else if (cfg.algorithm == "wior_cbo") {
        const SyntheticIRM prob = gen_irm(ps.m, ps.n, ps.p, ps.sigma, ps.lambda_out, ps.seed);
        CondRunConfig rc;
        rc.outer_epochs = cfg.epochs;
        rc.inner_epochs = cfg.inner_epochs;
        rc.strategy = sampler;
        rc.seed = seed;
        rc.warm_start = cfg.warm_start;
        rc.eval_interval = cfg.eval_interval;
        rc.max_wall_seconds = cfg.max_wall_seconds;
        rc.rate_decay_per_epoch = cfg.rate_decay;
        rc.rates = RateConfig::from_rates(cfg.eta, cfg.gamma, cfg.rho,
                                          cfg.iota.value_or(prob.meta().default_iota()));
        run_caught([&] {
            return wior_cbo(prob, std::vector<double>(prob.p(), 0.0), rc);
        });
    } else if (cfg.algorithm == "wior_comp") {
        const LinearComp prob = gen_linear_comp(ps.p, ps.d, ps.m, ps.n, ps.seed);
        RunConfig rc;
        rc.epochs = cfg.epochs;
        rc.strategy = sampler;
        rc.seed = seed;
        rc.eval_interval = cfg.eval_interval;
        rc.max_wall_seconds = cfg.max_wall_seconds;
        rc.rate_decay_per_epoch = cfg.rate_decay;
        double iota = 1.0;
        if (cfg.iota) {
            iota = *cfg.iota;
        } else {
            const HypergradResult ref = exact_hypergradient_comp(prob, std::vector<double>(ps.p, 0.0));
            iota = auto_iota_comp(ref.u);
        }
        rc.rates = RateConfig::from_rates(cfg.eta, cfg.gamma, cfg.rho, iota);
        run_caught([&] { return wior_comp(prob, IterateBO::zeros(prob.p(), prob.d()), rc); });
    } else if (cfg.algorithm == "wior_ccomp") {
        const CondLinearComp prob = gen_linear_comp_cond(ps.p, ps.d, ps.m, ps.n, ps.seed);
        CondRunConfig rc;
        rc.outer_epochs = cfg.epochs;
        rc.inner_epochs = cfg.inner_epochs;
        rc.strategy = sampler;
        rc.seed = seed;
        rc.warm_start = cfg.warm_start;
        rc.eval_interval = cfg.eval_interval;
        rc.max_wall_seconds = cfg.max_wall_seconds;
        rc.rate_decay_per_epoch = cfg.rate_decay;
        double iota = 1.0;
        if (cfg.iota) {
            iota = *cfg.iota;
        } else {
            const std::vector<double> g =
                exact_hypergradient_ccomp(prob, std::vector<double>(ps.p, 0.0));
            iota = auto_iota_comp(g) + 4.0;
        }
        rc.rates = RateConfig::from_rates(cfg.eta, cfg.gamma, cfg.rho, iota);
        run_caught([&] { return wior_ccomp(prob, std::vector<double>(prob.p(), 0.0), rc); });
    } else if (cfg.algorithm == "wior_minimax") {
        const QuadMinimax prob = gen_quad_minimax(ps.p, ps.d, ps.m, ps.seed);
        RunConfig rc;
        rc.epochs = cfg.epochs;
        rc.strategy = sampler;
        rc.seed = seed;
        rc.eval_interval = cfg.eval_interval;
        rc.max_wall_seconds = cfg.max_wall_seconds;
        rc.rate_decay_per_epoch = cfg.rate_decay;
        rc.rates = RateConfig::from_rates(cfg.eta, cfg.gamma, cfg.rho, cfg.iota.value_or(1.0));
        IterateBO init = IterateBO::zeros(prob.p(), prob.d());
        init.x.assign(prob.p(), 1.0);
        run_caught([&] { return wior_minimax(prob, init, rc); });
    } else {
        throw ConfigError("unknown algorithm: " + cfg.algorithm);
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double epochs_to_tolerance(const RunTrace& trace, double target_grad_norm) {
    for (const TraceRecord& rec : trace.records)
        if (rec.hypergrad_norm <= target_grad_norm) return static_cast<double>(rec.epoch);
    return kInf;
}

double median(std::vector<double> values) {
    if (values.empty()) return kInf;
    std::sort(values.begin(), values.end());
    const std::size_t k = values.size();
    if (k % 2 == 1) return values[k / 2];
    return 0.5 * (values[k / 2 - 1] + values[k / 2]);
}

void write_trace_csv(const std::string& path, const RunTrace& trace) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f << "step,epoch,hypergrad_norm,loss,y_err,u_err,gc_f,gc_g,jv_g,hv_g,wall_seconds\n";
        auto opt = [](const std::optional<double>& v) {
            return v ? format_double(*v) : std::string();
        };
        for (const TraceRecord& r : trace.records) {
            f << r.step << ',' << r.epoch << ',' << format_double(r.hypergrad_norm) << ','
              << opt(r.loss) << ',' << opt(r.y_err) << ',' << opt(r.u_err) << ','
              << r.counters.gc_f << ',' << r.counters.gc_g << ',' << r.counters.jv_g << ','
              << r.counters.hv_g << ',' << format_double(r.wall_seconds) << '\n';
        }
        if (!f) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path + ": " + ec.message());
}

TrialResult run_single_trial(const ExperimentConfig& config, Sampling sampler,
                             std::uint64_t seed) {
    TrialResult result;
    result.sampler = sampler;
    result.seed = seed;
    BuiltRun run = dispatch_trial(config, sampler, seed);
    result.trace = std::move(run.trace);
    result.diverged = run.diverged;
    result.epochs_to_tol =
        config.target_grad_norm ? epochs_to_tolerance(result.trace, *config.target_grad_norm)
                                : kInf;
    return result;
}

// --- per-example gradients for the error analyzer -------------------------------

namespace {

struct StateGrads {
    std::vector<std::vector<double>> grads;
    std::size_t n_examples = 0;
};

StateGrads per_example_state_grads(const ExperimentConfig& cfg) {
    const ProblemSpec& ps = cfg.problem;
    StateGrads out;
    if (ps.name == "quadratic_bilevel") {
        const QuadraticBilevel prob =
            gen_quadratic_bilevel(ps.p, ps.d, ps.m, ps.n, ps.kappa, ps.seed);
        const std::vector<double> x0(prob.p(), 0.0), y0(prob.d(), 0.0);
        out.n_examples = prob.m();
        for (std::size_t i = 0; i < prob.m(); ++i) {
            std::vector<double> g(prob.p() + prob.d());
            prob.grad_f_x(x0, y0, i, std::span<double>(g.data(), prob.p()));
            prob.grad_f_y(x0, y0, i, std::span<double>(g.data() + prob.p(), prob.d()));
            out.grads.push_back(std::move(g));
        }
    } else if (ps.name == "irm") {
        const SyntheticIRM prob = gen_irm(ps.m, ps.n, ps.p, ps.sigma, ps.lambda_out, ps.seed);
        const std::vector<double> x0(prob.p(), 0.0);
        out.n_examples = prob.m();
        for (std::size_t i = 0; i < prob.m(); ++i)
            out.grads.push_back(cond_inner_reference(prob, x0, i, kReferenceTol).grad);
    } else {
        throw UnsupportedProblemError(
            "gradient-error fit needs per-example full gradients; problem '" + ps.name +
            "' does not expose them");
    }
    return out;
}

// Windows from n/2 up to 4n: the regime where the averaged-error envelope
// binds. Smaller windows sit on the flat worst-case plateau and wash out
// the fitted exponent.
std::vector<std::size_t> default_k_grid(std::size_t n_examples, std::size_t length) {
    static constexpr double kRatios[] = {0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0};
    std::vector<std::size_t> ks;
    for (double r : kRatios) {
        std::size_t k = static_cast<std::size_t>(r * static_cast<double>(n_examples) + 0.5);
        k = std::clamp<std::size_t>(k, 1, std::max<std::size_t>(1, length / 2));
        if (ks.empty() || ks.back() != k) ks.push_back(k);
    }
    return ks;
}

json counters_json(const OracleCounters& c) {
    return json{{"gc_f", c.gc_f}, {"gc_g", c.gc_g}, {"jv_g", c.jv_g}, {"hv_g", c.hv_g}};
}

json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

FitOutcome fit_sampler_errors(const ExperimentConfig& config, std::uint64_t seed_offset) {
    const StateGrads sg = per_example_state_grads(config);
    const std::size_t length = 8 * sg.n_examples;
    const std::vector<std::size_t> ks = default_k_grid(sg.n_examples, length);

    FitOutcome out;
    for (Sampling sampler : config.samplers) {
        std::vector<GradientErrorFit> fits;
        for (std::uint64_t seed : config.trial_seeds) {
            const SampleOrder order =
                make_order(sampler, sg.n_examples, length, derive_seed(seed + seed_offset, 0xf1));
            fits.push_back(measure_avg_gradient_error(sg.grads, order, ks));
        }
        out.per_sampler[sampler] = std::move(fits);
    }

    fs::create_directories(config.out_dir);
    json doc;
    doc["problem"] = config.problem.name;
    doc["k_values"] = ks;
    for (const auto& [sampler, fits] : out.per_sampler) {
        json arr = json::array();
        std::vector<double> alphas;
        for (const GradientErrorFit& f : fits) {
            arr.push_back(json{{"alpha_hat", finite_or_null(f.alpha_hat)},
                               {"C_hat", f.C_hat},
                               {"A_hat", f.A_hat},
                               {"sq_errors", f.sq_errors}});
            alphas.push_back(f.alpha_hat);
        }
        doc["fits"][to_string(sampler)] = arr;
        doc["alpha_median"][to_string(sampler)] = finite_or_null(median(alphas));
    }
    out.json_path = (fs::path(config.out_dir) / "fit_errors.json").string();
    const std::string tmp = out.json_path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f << doc.dump(2) << "\n";
    }
    std::error_code ec;
    fs::rename(tmp, out.json_path, ec);
    if (ec) throw IoError("rename failed for " + out.json_path + ": " + ec.message());
    return out;
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, std::size_t jobs,
                                 std::uint64_t seed_offset) {
    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + config.out_dir);

    struct TrialSpec {
        Sampling sampler;
        std::uint64_t seed;
    };
    std::vector<TrialSpec> specs;
    for (Sampling s : config.samplers)
        for (std::uint64_t seed : config.trial_seeds) specs.push_back({s, seed + seed_offset});

    std::vector<TrialResult> results(specs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= specs.size() || failed.load()) break;
            try {
                TrialResult r = run_single_trial(config, specs[idx].sampler, specs[idx].seed);
                const std::string name = config.problem.name + "_" + config.algorithm + "_" +
                                         to_string(r.sampler) + "_seed" +
                                         std::to_string(r.seed) + ".csv";
                r.csv_path = (fs::path(config.out_dir) / name).string();
                write_trace_csv(r.csv_path, r.trace);
                results[idx] = std::move(r);
            } catch (const std::exception& e) {
                std::scoped_lock lock(failure_mutex);
                failure = e.what();
                failed.store(true);
                break;
            }
        }
    };

    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(jobs, specs.size()); ++w)
            pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw IoError("trial execution failed: " + failure);

    ExperimentOutcome outcome;
    outcome.trials = std::move(results);

    // Gradient-error medians when the problem supports the analyzer.
    std::map<Sampling, std::pair<double, double>> fit_medians;
    try {
        const FitOutcome fits = fit_sampler_errors(config, seed_offset);
        for (const auto& [sampler, per_seed] : fits.per_sampler) {
            std::vector<double> alphas, cs;
            for (const GradientErrorFit& f : per_seed) {
                alphas.push_back(f.alpha_hat);
                cs.push_back(f.C_hat);
            }
            fit_medians[sampler] = {median(alphas), median(cs)};
        }
    } catch (const UnsupportedProblemError&) {
    }

    for (Sampling sampler : config.samplers) {
        SamplerSummary ss;
        ss.sampler = sampler;
        std::vector<double> to_tol, finals;
        for (const TrialResult& r : outcome.trials) {
            if (r.sampler != sampler) continue;
            const bool complete = !r.diverged && !r.trace.wall_clock_truncated;
            if (!complete) {
                ++ss.incomplete_trials;
                outcome.any_divergence |= r.diverged;
                continue;
            }
            ++ss.completed_trials;
            to_tol.push_back(r.epochs_to_tol);
            if (!r.trace.records.empty())
                finals.push_back(r.trace.records.back().hypergrad_norm);
            const OracleCounters c = r.trace.records.empty() ? OracleCounters{}
                                                             : r.trace.records.back().counters;
            ss.counters_total.gc_f += c.gc_f;
            ss.counters_total.gc_g += c.gc_g;
            ss.counters_total.jv_g += c.jv_g;
            ss.counters_total.hv_g += c.hv_g;
        }
        ss.median_epochs_to_tol = median(to_tol);
        ss.median_final_grad_norm = median(finals);
        if (auto it = fit_medians.find(sampler); it != fit_medians.end()) {
            ss.alpha_hat = it->second.first;
            ss.C_hat = it->second.second;
        }
        outcome.summary.counters_total.gc_f += ss.counters_total.gc_f;
        outcome.summary.counters_total.gc_g += ss.counters_total.gc_g;
        outcome.summary.counters_total.jv_g += ss.counters_total.jv_g;
        outcome.summary.counters_total.hv_g += ss.counters_total.hv_g;
        outcome.summary.per_sampler.push_back(std::move(ss));
    }

    json doc;
    doc["problem"] = config.problem.name;
    doc["algorithm"] = config.algorithm;
    doc["trials"] = outcome.trials.size();
    doc["target_grad_norm"] =
        config.target_grad_norm ? json(*config.target_grad_norm) : json(nullptr);
    doc["counters_total"] = counters_json(outcome.summary.counters_total);
    for (const SamplerSummary& ss : outcome.summary.per_sampler) {
        json s;
        s["median_epochs_to_tol"] = finite_or_null(ss.median_epochs_to_tol);
        s["median_final_grad_norm"] = finite_or_null(ss.median_final_grad_norm);
        s["counters_total"] = counters_json(ss.counters_total);
        s["alpha_hat"] = ss.alpha_hat ? finite_or_null(*ss.alpha_hat) : json(nullptr);
        s["C_hat"] = ss.C_hat ? json(*ss.C_hat) : json(nullptr);
        s["completed_trials"] = ss.completed_trials;
        s["incomplete_trials"] = ss.incomplete_trials;
        doc["samplers"][to_string(ss.sampler)] = s;
    }
    outcome.summary_path = (fs::path(config.out_dir) / "summary.json").string();
    const std::string tmp = outcome.summary_path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f << doc.dump(2) << "\n";
    }
    fs::rename(tmp, outcome.summary_path, ec);
    if (ec) throw IoError("rename failed for " + outcome.summary_path + ": " + ec.message());
    return outcome;
}

}  // namespace wior
