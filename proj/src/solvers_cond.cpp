#include "wior/solvers_cond.hpp"

#include <chrono>
#include <cmath>

#include "wior/rng.hpp"
#include "wior/vecops.hpp"

namespace wior {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_config(const CondRunConfig& config) {
    if (config.outer_epochs < 1 || config.inner_epochs < 1)
        throw Error("CondRunConfig: outer and inner epoch counts must be >= 1");
    if (!(config.rate_decay_per_epoch > 0.0))
        throw Error("CondRunConfig: rate_decay_per_epoch must be positive");
}

// Shuffle-once pins one permutation per inner dataset (keyed by the outer
// example); the other strategies consume a monotone draw counter.
SampleOrder inner_order(Sampling strategy, std::size_t n, std::uint64_t base,
                        std::size_t example, std::uint64_t& counter) {
    if (strategy == Sampling::ShuffleOnce)
        return make_order(strategy, n, n, derive_seed(base, example));
    return make_order(strategy, n, n, derive_seed(base, counter++));
}

SampleOrder outer_order(Sampling strategy, std::size_t m, std::uint64_t base,
                        std::size_t epoch) {
    const std::uint64_t seed = strategy == Sampling::ShuffleOnce ? base : derive_seed(base, epoch);
    return make_order(strategy, m, m, seed);
}

struct InnerState {
    std::vector<double> y;
    std::vector<double> u;
};

// S inner epochs of the conditional updates at fixed (x, example).
// In the alternating mode both updates read the pre-step y; two-phase runs
// every y epoch first, then every u epoch against the final y.
void run_inner_loops(const ConditionalOracle& oracle, std::span<const double> x,
                     std::size_t example, std::size_t S, double gamma, double rho, double iota,
                     Sampling strategy, std::uint64_t inner_base, std::uint64_t& draw_counter,
                     bool two_phase, InnerState& st, RunTrace* audit = nullptr,
                     std::vector<double>* y_err_per_epoch = nullptr,
                     std::span<const double> y_ref = {}) {
    const std::size_t n = oracle.n_i(example);
    const std::size_t d = oracle.d();
    std::vector<double> gy(d), hv(d), fy(d), diff(d);

    auto record_y_err = [&]() {
        if (y_err_per_epoch == nullptr) return;
        vec::sub(st.y, y_ref, diff);
        y_err_per_epoch->push_back(vec::nrm2(diff));
    };

    if (!two_phase) {
        for (std::size_t s = 1; s <= S; ++s) {
            if (s > 1) {
                project_ball_inplace(st.u, iota);
                if (audit != nullptr) {
                    ++audit->projection_checks;
                    if (vec::nrm2(st.u) > iota) ++audit->projection_violations;
                }
            }
            const SampleOrder ord = inner_order(strategy, n, inner_base, example, draw_counter);
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t zeta = ord.indices[j];
                oracle.grad_g_y(x, st.y, example, zeta, gy);
                oracle.hvp_g_yy(x, st.y, example, zeta, st.u, hv);
                oracle.grad_f_y(x, st.y, example, fy);
                vec::axpy(-gamma, gy, st.y);
                vec::axpy(-rho, hv, st.u);
                vec::axpy(rho, fy, st.u);
            }
            if (!all_finite(st.y) || !all_finite(st.u))
                throw NonFiniteError("conditional inner loop produced a non-finite iterate");
            record_y_err();
        }
        return;
    }

    for (std::size_t s = 1; s <= S; ++s) {
        const SampleOrder ord = inner_order(strategy, n, inner_base, example, draw_counter);
        for (std::size_t j = 0; j < n; ++j) {
            oracle.grad_g_y(x, st.y, example, ord.indices[j], gy);
            vec::axpy(-gamma, gy, st.y);
        }
        if (!all_finite(st.y))
            throw NonFiniteError("conditional inner loop produced a non-finite iterate");
        record_y_err();
    }
    for (std::size_t s = 1; s <= S; ++s) {
        if (s > 1) project_ball_inplace(st.u, iota);
        const SampleOrder ord = inner_order(strategy, n, inner_base, example, draw_counter);
        for (std::size_t j = 0; j < n; ++j) {
            oracle.hvp_g_yy(x, st.y, example, ord.indices[j], st.u, hv);
            oracle.grad_f_y(x, st.y, example, fy);
            vec::axpy(-rho, hv, st.u);
            vec::axpy(rho, fy, st.u);
        }
        if (!all_finite(st.u))
            throw NonFiniteError("conditional inner loop produced a non-finite iterate");
    }
}

}  // namespace

RunTrace wior_cbo(const ConditionalOracle& oracle, const std::vector<double>& x0,
                  const CondRunConfig& config) {
    check_config(config);
    if (x0.size() != oracle.p()) throw Error("wior_cbo: x0 dimension does not match the oracle");
    if (!all_finite(x0)) throw NonFiniteError("wior_cbo: non-finite initial state");

    const std::size_t m = oracle.m();
    const std::size_t d = oracle.d();
    const std::size_t interval = config.eval_interval == 0 ? m : config.eval_interval;
    const std::uint64_t outer_base = derive_seed(config.seed, 1);
    const std::uint64_t inner_base = derive_seed(config.seed, 2);
    std::uint64_t draw_counter = 0;

    const auto start = Clock::now();
    std::vector<double> x = x0;
    InnerState st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    RunTrace trace;
    IterateBO last_finite{x, st.y, st.u};

    std::vector<double> fx(oracle.p()), jv(oracle.p());

    auto log_point = [&](std::size_t t) {
        OracleBase::ScopedEvalCounters scope(oracle);
        TraceRecord rec;
        try {
            const std::vector<double> grad =
                exact_hypergradient_conditional(oracle, x, kTraceTol);
            rec.hypergrad_norm = vec::nrm2(grad);
            if (oracle.has_value_f()) rec.loss = cond_objective(oracle, x, kTraceTol);
        } catch (const NoConvergenceError&) {
            trace.final_state = last_finite;
            trace.steps_run = t;
            throw DivergenceError("wior_cbo: reference evaluation failed at outer step " +
                                      std::to_string(t),
                                  std::move(trace));
        }
        rec.step = t;
        rec.epoch = t / m;
        rec.counters = oracle.run_counters();
        rec.wall_seconds = seconds_since(start);
        trace.records.push_back(rec);
    };

    log_point(0);
    std::size_t t = 0;
    bool logged_last = true;
    for (std::size_t r = 1; r <= config.outer_epochs; ++r) {
        const SampleOrder xi = outer_order(config.strategy, m, outer_base, r);
        // Only the outer stepsize follows the schedule: the inner loops
        // restart from scratch each outer step and need full-strength rates
        // to deliver accurate (y, u) estimates regardless of the epoch.
        const double decay =
            std::pow(config.rate_decay_per_epoch, static_cast<double>(r - 1));
        const double eta = config.rates.eta * decay;
        const double gamma = config.rates.gamma;
        const double rho = config.rates.rho;

        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t ex = xi.indices[i];
            last_finite = IterateBO{x, st.y, st.u};

            if (config.warm_start == WarmStart::FreshEachOuterStep) {
                std::fill(st.y.begin(), st.y.end(), 0.0);
                std::fill(st.u.begin(), st.u.end(), 0.0);
            } else {
                project_ball_inplace(st.u, config.rates.iota);
            }
            run_inner_loops(oracle, x, ex, config.inner_epochs, gamma, rho, config.rates.iota,
                            config.strategy, inner_base, draw_counter, config.two_phase_inner,
                            st, &trace);

            oracle.grad_f_x(x, st.y, ex, fx);
            oracle.jvp_g_xy_alli(x, st.y, ex, st.u, jv);
            vec::axpy(-eta, fx, x);
            vec::axpy(eta, jv, x);
            ++t;

            if (!all_finite(x) || vec::nrm2(x) > kDivergenceNormCap) {
                trace.final_state = last_finite;
                trace.steps_run = t;
                throw DivergenceError("wior_cbo diverged at outer step " + std::to_string(t),
                                      std::move(trace));
            }
            logged_last = (t % interval == 0);
            if (logged_last) log_point(t);
            if (config.max_wall_seconds && seconds_since(start) > *config.max_wall_seconds) {
                if (!logged_last) log_point(t);
                trace.final_state = IterateBO{x, st.y, st.u};
                trace.steps_run = t;
                trace.wall_clock_truncated = true;
                return trace;
            }
        }
    }
    if (!logged_last) log_point(t);
    trace.final_state = IterateBO{x, st.y, st.u};
    trace.steps_run = t;
    return trace;
}

std::vector<double> cond_inner_y_errors(const ConditionalOracle& oracle,
                                        std::span<const double> x, std::size_t example,
                                        std::size_t inner_epochs, const RateConfig& rates,
                                        Sampling strategy, std::uint64_t seed, bool two_phase) {
    const HypergradResult ref = cond_inner_reference(oracle, x, example, 1e-12);
    InnerState st{std::vector<double>(oracle.d(), 0.0), std::vector<double>(oracle.d(), 0.0)};
    std::uint64_t draw_counter = 0;
    std::vector<double> errs;
    errs.reserve(inner_epochs);
    run_inner_loops(oracle, x, example, inner_epochs, rates.gamma, rates.rho, rates.iota,
                    strategy, derive_seed(seed, 2), draw_counter, two_phase, st, nullptr, &errs,
                    ref.y);
    return errs;
}

double ccomp_objective(const CondCompositionalOracle& oracle, std::span<const double> x) {
    if (!oracle.has_value_f())
        throw UnsupportedProblemError("ccomp_objective: problem has no value_f");
    std::vector<double> y(oracle.d());
    double acc = 0.0;
    for (std::size_t i = 0; i < oracle.m(); ++i) {
        oracle.r_i_full(x, i, y);
        acc += oracle.value_f(y, i);
    }
    return acc / static_cast<double>(oracle.m());
}

RunTrace wior_ccomp(const CondCompositionalOracle& oracle, const std::vector<double>& x0,
                    const CondRunConfig& config) {
    check_config(config);
    if (x0.size() != oracle.p())
        throw Error("wior_ccomp: x0 dimension does not match the oracle");
    if (!all_finite(x0)) throw NonFiniteError("wior_ccomp: non-finite initial state");

    const std::size_t m = oracle.m();
    const std::size_t d = oracle.d();
    const std::size_t interval = config.eval_interval == 0 ? m : config.eval_interval;
    const std::uint64_t outer_base = derive_seed(config.seed, 1);
    const std::uint64_t inner_base = derive_seed(config.seed, 2);
    std::uint64_t draw_counter = 0;

    const auto start = Clock::now();
    std::vector<double> x = x0;
    InnerState st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    RunTrace trace;
    IterateBO last_finite{x, st.y, st.u};

    std::vector<double> rv(d), fy(d), jv(oracle.p());

    auto log_point = [&](std::size_t t) {
        OracleBase::ScopedEvalCounters scope(oracle);
        const std::vector<double> grad = exact_hypergradient_ccomp(oracle, x);
        TraceRecord rec;
        rec.step = t;
        rec.epoch = t / m;
        rec.hypergrad_norm = vec::nrm2(grad);
        if (oracle.has_value_f()) rec.loss = ccomp_objective(oracle, x);
        rec.counters = oracle.run_counters();
        rec.wall_seconds = seconds_since(start);
        trace.records.push_back(rec);
    };

    log_point(0);
    std::size_t t = 0;
    bool logged_last = true;
    for (std::size_t r = 1; r <= config.outer_epochs; ++r) {
        const SampleOrder xi = outer_order(config.strategy, m, outer_base, r);
        // Only the outer stepsize follows the schedule: the inner loops
        // restart from scratch each outer step and need full-strength rates
        // to deliver accurate (y, u) estimates regardless of the epoch.
        const double decay =
            std::pow(config.rate_decay_per_epoch, static_cast<double>(r - 1));
        const double eta = config.rates.eta * decay;
        const double gamma = config.rates.gamma;
        const double rho = config.rates.rho;

        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t ex = xi.indices[i];
            const std::size_t n = oracle.n_i(ex);
            last_finite = IterateBO{x, st.y, st.u};

            if (config.warm_start == WarmStart::FreshEachOuterStep) {
                std::fill(st.y.begin(), st.y.end(), 0.0);
                std::fill(st.u.begin(), st.u.end(), 0.0);
            } else {
                project_ball_inplace(st.u, config.rates.iota);
            }
            for (std::size_t s = 1; s <= config.inner_epochs; ++s) {
                if (s > 1) {
                    project_ball_inplace(st.u, config.rates.iota);
                    ++trace.projection_checks;
                    if (vec::nrm2(st.u) > config.rates.iota) ++trace.projection_violations;
                }
                const SampleOrder ord =
                    inner_order(config.strategy, n, inner_base, ex, draw_counter);
                for (std::size_t j = 0; j < n; ++j) {
                    oracle.r(x, ex, ord.indices[j], rv);
                    oracle.grad_f_y(st.y, ex, fy);  // pre-step y
                    vec::ema(gamma, st.y, rv);
                    vec::ema(rho, st.u, fy);
                }
                if (!all_finite(st.y) || !all_finite(st.u))
                    throw NonFiniteError("wior_ccomp inner loop produced a non-finite iterate");
            }

            oracle.jvp_r_alli(x, ex, st.u, jv);
            vec::axpy(-eta, jv, x);
            ++t;

            if (!all_finite(x) || vec::nrm2(x) > kDivergenceNormCap) {
                trace.final_state = last_finite;
                trace.steps_run = t;
                throw DivergenceError("wior_ccomp diverged at outer step " + std::to_string(t),
                                      std::move(trace));
            }
            logged_last = (t % interval == 0);
            if (logged_last) log_point(t);
            if (config.max_wall_seconds && seconds_since(start) > *config.max_wall_seconds) {
                if (!logged_last) log_point(t);
                trace.final_state = IterateBO{x, st.y, st.u};
                trace.steps_run = t;
                trace.wall_clock_truncated = true;
                return trace;
            }
        }
    }
    if (!logged_last) log_point(t);
    trace.final_state = IterateBO{x, st.y, st.u};
    trace.steps_run = t;
    return trace;
}

}  // namespace wior
