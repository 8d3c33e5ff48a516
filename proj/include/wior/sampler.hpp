#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "wior/core.hpp"

namespace wior {

enum class Sampling {
    Independent,      // i.i.d. uniform draws each step
    ShuffleOnce,      // one seeded permutation, reused every epoch
    RandomReshuffle,  // fresh permutation per epoch
};

std::string to_string(Sampling s);
Sampling sampling_from_string(const std::string& name);

// A realized example-selection sequence over one dataset.
struct SampleOrder {
    std::vector<std::uint32_t> indices;
    std::size_t n_examples = 0;
    Sampling strategy = Sampling::Independent;
    std::uint64_t seed = 0;
};

// Build an order of `length` indices over [0, n_examples). Permutation
// strategies require length to be a multiple of n_examples; every aligned
// block of n_examples indices is then a permutation (the same one for
// ShuffleOnce). Deterministic in all arguments.
SampleOrder make_order(Sampling strategy, std::size_t n_examples, std::size_t length,
                       std::uint64_t seed);

// Result of fitting the averaged-gradient-error decay: max over window
// starts of ||window mean - full mean||^2 per window length k, and the
// least-squares exponent/constant of sq_err ~ C^2 k^-alpha on a log-log
// scale.
struct GradientErrorFit {
    std::vector<std::size_t> k_values;
    std::vector<double> sq_errors;
    double alpha_hat = 0.0;
    double C_hat = 0.0;
    double A_hat = 0.0;  // max_i ||g_i - mean||
};

// Windows whose squared error is at or below this are treated as exact
// zeros and excluded from the log-log fit.
constexpr double kZeroWindowSq = 1e-24;

// Sentinel when every window is an exact zero (then C_hat = 0).
constexpr double kAlphaExact = std::numeric_limits<double>::infinity();

GradientErrorFit measure_avg_gradient_error(const std::vector<std::vector<double>>& per_example_grads,
                                            const SampleOrder& order,
                                            const std::vector<std::size_t>& k_values);

}  // namespace wior
