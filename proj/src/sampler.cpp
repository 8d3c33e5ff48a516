#include "wior/sampler.hpp"

#include <cmath>
#include <numeric>

#include "wior/rng.hpp"
#include "wior/vecops.hpp"

namespace wior {

std::string to_string(Sampling s) {
    switch (s) {
        case Sampling::Independent: return "independent";
        case Sampling::ShuffleOnce: return "shuffle_once";
        case Sampling::RandomReshuffle: return "random_reshuffle";
    }
    return "?";
}

Sampling sampling_from_string(const std::string& name) {
    if (name == "independent") return Sampling::Independent;
    if (name == "shuffle_once") return Sampling::ShuffleOnce;
    if (name == "random_reshuffle") return Sampling::RandomReshuffle;
    throw Error("unknown sampling strategy: " + name);
}

SampleOrder make_order(Sampling strategy, std::size_t n_examples, std::size_t length,
                       std::uint64_t seed) {
    if (n_examples == 0) throw InvalidDatasetError("make_order: n_examples must be >= 1");
    SampleOrder order;
    order.n_examples = n_examples;
    order.strategy = strategy;
    order.seed = seed;
    order.indices.reserve(length);

    Rng rng(seed);
    if (strategy == Sampling::Independent) {
        for (std::size_t t = 0; t < length; ++t)
            order.indices.push_back(static_cast<std::uint32_t>(rng.next_below(n_examples)));
        return order;
    }

    if (length % n_examples != 0)
        throw AlignmentError("make_order: length " + std::to_string(length) +
                             " is not a multiple of n_examples " + std::to_string(n_examples));

    std::vector<std::uint32_t> perm(n_examples);
    std::iota(perm.begin(), perm.end(), 0u);
    const std::size_t blocks = length / n_examples;
    if (strategy == Sampling::ShuffleOnce) {
        rng.shuffle(perm);
        for (std::size_t b = 0; b < blocks; ++b)
            order.indices.insert(order.indices.end(), perm.begin(), perm.end());
    } else {
        for (std::size_t b = 0; b < blocks; ++b) {
            rng.shuffle(perm);
            order.indices.insert(order.indices.end(), perm.begin(), perm.end());
        }
    }
    return order;
}

GradientErrorFit measure_avg_gradient_error(const std::vector<std::vector<double>>& per_example_grads,
                                            const SampleOrder& order,
                                            const std::vector<std::size_t>& k_values) {
    if (k_values.empty()) throw Error("measure_avg_gradient_error: empty k list");
    if (per_example_grads.empty())
        throw InvalidDatasetError("measure_avg_gradient_error: no per-example gradients");
    const std::size_t n = per_example_grads.size();
    if (order.n_examples != n)
        throw InvalidDatasetError("measure_avg_gradient_error: order covers " +
                                  std::to_string(order.n_examples) + " examples, got " +
                                  std::to_string(n) + " gradients");
    const std::size_t dim = per_example_grads.front().size();
    for (const auto& g : per_example_grads)
        if (g.size() != dim)
            throw InvalidDatasetError("measure_avg_gradient_error: ragged gradient list");
    const std::size_t len = order.indices.size();
    for (std::size_t k : k_values)
        if (k == 0 || k > len)
            throw Error("measure_avg_gradient_error: window length " + std::to_string(k) +
                        " outside [1, " + std::to_string(len) + "]");

    std::vector<double> mean(dim, 0.0);
    for (const auto& g : per_example_grads) vec::axpy(1.0, g, mean);
    vec::scal(1.0 / static_cast<double>(n), mean);

    GradientErrorFit fit;
    fit.k_values = k_values;
    fit.sq_errors.reserve(k_values.size());

    std::vector<double> window(dim);
    std::vector<double> diff(dim);
    for (std::size_t k : k_values) {
        // Uniform bound: worst deviation over all window start positions.
        double worst = 0.0;
        for (std::size_t t = 0; t + k <= len; ++t) {
            std::fill(window.begin(), window.end(), 0.0);
            for (std::size_t tau = t; tau < t + k; ++tau)
                vec::axpy(1.0, per_example_grads[order.indices[tau]], window);
            vec::scal(1.0 / static_cast<double>(k), window);
            vec::sub(window, mean, diff);
            worst = std::max(worst, vec::nrm2sq(diff));
        }
        fit.sq_errors.push_back(worst);
    }

    double a_max = 0.0;
    for (const auto& g : per_example_grads) {
        vec::sub(g, mean, diff);
        a_max = std::max(a_max, vec::nrm2sq(diff));
    }
    fit.A_hat = std::sqrt(a_max);

    // Least squares of log(sq_err) on log(k), exact zeros excluded.
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < k_values.size(); ++i) {
        if (fit.sq_errors[i] <= kZeroWindowSq) continue;
        const double lx = std::log(static_cast<double>(k_values[i]));
        const double ly = std::log(fit.sq_errors[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++used;
    }
    const double un = static_cast<double>(used);
    const double denom = un * sxx - sx * sx;
    if (used < 2 || denom <= 0.0) {
        fit.alpha_hat = kAlphaExact;
        fit.C_hat = 0.0;
        return fit;
    }
    const double slope = (un * sxy - sx * sy) / denom;
    const double intercept = (sy - slope * sx) / un;
    fit.alpha_hat = -slope;
    fit.C_hat = std::exp(0.5 * intercept);
    return fit;
}

}  // namespace wior
