#pragma once

// Single-loop solvers with pluggable example-selection strategy. One epoch
// covers lcm(m, n) steps; fresh permutation orders are drawn per epoch
// (random-reshuffling), a single per-dataset permutation is reused
// (shuffle-once), or indices are drawn i.i.d. (independent, the baseline).

#include <cstdint>
#include <optional>
#include <vector>

#include "wior/core.hpp"
#include "wior/oracle.hpp"
#include "wior/sampler.hpp"

namespace wior {

struct RunConfig {
    std::size_t epochs = 1;  // R
    RateConfig rates;
    Sampling strategy = Sampling::RandomReshuffle;
    std::uint64_t seed = 0;
    // Steps between reference-hypergradient evaluations; 0 = once per epoch.
    std::size_t eval_interval = 0;
    std::optional<double> max_wall_seconds;
    // Per-epoch multiplier on all stepsizes; 1.0 keeps them constant.
    double rate_decay_per_epoch = 1.0;
};

struct TraceRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double hypergrad_norm = 0.0;
    std::optional<double> loss;
    std::optional<double> y_err;
    std::optional<double> u_err;
    OracleCounters counters;
    double wall_seconds = 0.0;
};

struct RunTrace {
    std::vector<TraceRecord> records;
    IterateBO final_state;
    std::size_t steps_run = 0;
    bool wall_clock_truncated = false;
    // Every epoch-boundary projection is re-measured; violations would mean
    // a u-iterate left the ball it was just projected onto.
    std::size_t projection_checks = 0;
    std::size_t projection_violations = 0;
};

// Iterates left the finite range; carries everything logged up to the last
// finite state.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, RunTrace trace)
        : Error(what), partial(std::move(trace)) {}
    RunTrace partial;
};

constexpr double kDivergenceNormCap = 1e12;

RunTrace wior_bo(const BilevelOracle& oracle, const IterateBO& init, const RunConfig& config);

RunTrace wior_comp(const CompositionalOracle& oracle, const IterateBO& init,
                   const RunConfig& config);

// Init uses only x and y; there is no u-iterate in the minimax updates.
RunTrace wior_minimax(const MinimaxOracle& oracle, const IterateBO& init,
                      const RunConfig& config);

}  // namespace wior
