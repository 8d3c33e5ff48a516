#pragma once

// Double-loop conditional solvers. Every outer step fixes the outer
// variable and the outer example, then runs S inner epochs over
// permutations of that example's dataset before taking one outer step.

#include <cstdint>
#include <optional>
#include <vector>

#include "wior/core.hpp"
#include "wior/oracle.hpp"
#include "wior/sampler.hpp"
#include "wior/solvers.hpp"

namespace wior {

enum class WarmStart {
    FreshEachOuterStep,  // (y, u) restart from zero for every outer step
    CarryAcrossS,        // carry the previous outer step's final (y, u)
};

struct CondRunConfig {
    std::size_t outer_epochs = 1;  // R
    std::size_t inner_epochs = 1;  // S
    RateConfig rates;              // eta outer; gamma, rho inner
    Sampling strategy = Sampling::RandomReshuffle;
    std::uint64_t seed = 0;
    WarmStart warm_start = WarmStart::FreshEachOuterStep;
    // Outer steps between reference evaluations; 0 = once per outer epoch.
    std::size_t eval_interval = 0;
    std::optional<double> max_wall_seconds;
    double rate_decay_per_epoch = 1.0;
    // Test mode: run all S epochs of y-updates first, then all S epochs of
    // u-updates at the final y (used by the contraction diagnostics only).
    bool two_phase_inner = false;
};

RunTrace wior_cbo(const ConditionalOracle& oracle, const std::vector<double>& x0,
                  const CondRunConfig& config);

RunTrace wior_ccomp(const CondCompositionalOracle& oracle, const std::vector<double>& x0,
                    const CondRunConfig& config);

// Outer objective of the conditional compositional problem (needs value_f).
double ccomp_objective(const CondCompositionalOracle& oracle, std::span<const double> x);

// Inner-loop diagnostic: ||y - y_x^(example)|| after each of S inner epochs
// at fixed x, using the same inner updates (and order seeding) as wior_cbo.
std::vector<double> cond_inner_y_errors(const ConditionalOracle& oracle,
                                        std::span<const double> x, std::size_t example,
                                        std::size_t inner_epochs, const RateConfig& rates,
                                        Sampling strategy, std::uint64_t seed, bool two_phase);

}  // namespace wior
