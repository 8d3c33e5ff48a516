#pragma once

// Experiment front end: flat key-value configs with dotted sections, trial
// fan-out over (sampler, seed), one CSV per trace plus one JSON summary.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wior/sampler.hpp"
#include "wior/solvers.hpp"
#include "wior/solvers_cond.hpp"

namespace wior {

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ProblemSpec {
    std::string name;  // quadratic_bilevel | irm | data_cleaning | quad_minimax |
                       // linear_comp | cond_linear_comp
    std::uint64_t seed = 0;
    std::size_t p = 0, d = 0, m = 0, n = 0;
    double kappa = 10.0;                          // quadratic_bilevel
    double sigma = 0.1, lambda_out = 0.1;         // irm
    std::size_t n_train = 200, n_val = 50;        // data_cleaning
    double corrupt_frac = 0.6;                    // data_cleaning
};

struct ExperimentConfig {
    ProblemSpec problem;
    std::string algorithm;  // wior_bo | wior_cbo | wior_comp | wior_ccomp | wior_minimax
    std::vector<Sampling> samplers;

    std::size_t epochs = 1;
    std::size_t inner_epochs = 1;  // conditional algorithms only
    double eta = 0.0, gamma = 0.0, rho = 0.0;
    std::optional<double> iota;  // absent = problem-derived default
    std::size_t eval_interval = 0;
    double rate_decay = 1.0;
    WarmStart warm_start = WarmStart::FreshEachOuterStep;
    std::optional<double> max_wall_seconds;

    std::vector<std::uint64_t> trial_seeds;
    std::string out_dir = ".";
    std::optional<double> target_grad_norm;
};

// Parse with full validation; unknown or misplaced keys are errors carrying
// the line number.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig parse_config_file(const std::string& path);

struct TrialResult {
    Sampling sampler = Sampling::Independent;
    std::uint64_t seed = 0;
    RunTrace trace;
    bool diverged = false;
    double epochs_to_tol = 0.0;  // +inf when the target was never reached
    std::string csv_path;
};

struct SamplerSummary {
    Sampling sampler = Sampling::Independent;
    double median_epochs_to_tol = 0.0;
    double median_final_grad_norm = 0.0;
    OracleCounters counters_total;
    std::optional<double> alpha_hat;  // median over trial seeds, when measurable
    std::optional<double> C_hat;
    std::size_t completed_trials = 0;
    std::size_t incomplete_trials = 0;
};

struct ComparisonSummary {
    std::vector<SamplerSummary> per_sampler;
    OracleCounters counters_total;
};

struct ExperimentOutcome {
    std::vector<TrialResult> trials;
    ComparisonSummary summary;
    bool any_divergence = false;
    std::string summary_path;
};

// Executes every (sampler, trial seed) combination, writing one CSV per
// trace and summary.json in the output directory. `seed_offset` shifts all
// trial seeds; `jobs` > 1 runs trials on worker threads.
ExperimentOutcome run_experiment(const ExperimentConfig& config, std::size_t jobs = 1,
                                 std::uint64_t seed_offset = 0);

// One trial, no file output. Divergence is reported in the result, with the
// partial trace attached.
TrialResult run_single_trial(const ExperimentConfig& config, Sampling sampler,
                             std::uint64_t seed);

// Gradient-error fits at the frozen initial state, one per (sampler, trial
// seed); writes fit_errors.json. Requires a problem exposing per-example
// full gradients (quadratic_bilevel, irm).
struct FitOutcome {
    std::map<Sampling, std::vector<GradientErrorFit>> per_sampler;
    std::string json_path;
};
FitOutcome fit_sampler_errors(const ExperimentConfig& config, std::uint64_t seed_offset = 0);

// First logged epoch at or below the target norm; +inf when never reached.
double epochs_to_tolerance(const RunTrace& trace, double target_grad_norm);

// CSV schema: step,epoch,hypergrad_norm,loss,y_err,u_err,gc_f,gc_g,jv_g,
// hv_g,wall_seconds. Metrics an algorithm cannot provide stay empty.
// Written atomically (temp file + rename).
void write_trace_csv(const std::string& path, const RunTrace& trace);

double median(std::vector<double> values);

}  // namespace wior
