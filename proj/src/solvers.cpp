#include "wior/solvers.hpp"

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

void check_config(const RunConfig& config) {
    if (config.epochs < 1) throw Error("RunConfig: epochs must be >= 1");
    if (!(config.rate_decay_per_epoch > 0.0))
        throw Error("RunConfig: rate_decay_per_epoch must be positive");
}

// Per-epoch order seeds: shuffle-once pins one permutation per dataset for
// the whole run, the other strategies draw fresh per epoch.
SampleOrder epoch_order(Sampling strategy, std::size_t n_examples, std::size_t length,
                        std::uint64_t dataset_seed, std::size_t epoch) {
    const std::uint64_t seed = strategy == Sampling::ShuffleOnce
                                   ? dataset_seed
                                   : derive_seed(dataset_seed, epoch);
    return make_order(strategy, n_examples, length, seed);
}

struct StepRates {
    double eta, gamma, rho;
};

StepRates rates_for_epoch(const RateConfig& rates, double decay, std::size_t epoch1) {
    const double f = std::pow(decay, static_cast<double>(epoch1 - 1));
    return {rates.eta * f, rates.gamma * f, rates.rho * f};
}

void project_and_audit(std::span<double> u, double iota, RunTrace& trace) {
    project_ball_inplace(u, iota);
    ++trace.projection_checks;
    if (vec::nrm2(u) > iota) ++trace.projection_violations;
}

void ensure_finite_state(const IterateBO& state, RunTrace& trace, const IterateBO& last_finite,
                         std::size_t step) {
    const bool finite =
        all_finite(state.x) && all_finite(state.y) && all_finite(state.u);
    if (finite && vec::nrm2(state.x) <= kDivergenceNormCap) return;
    trace.final_state = last_finite;
    trace.steps_run = step;
    throw DivergenceError("solver diverged at step " + std::to_string(step), std::move(trace));
}

}  // namespace

RunTrace wior_bo(const BilevelOracle& oracle, const IterateBO& init, const RunConfig& config) {
    check_config(config);
    if (init.x.size() != oracle.p() || init.y.size() != oracle.d() ||
        init.u.size() != oracle.d())
        throw Error("wior_bo: init dimensions do not match the oracle");
    if (!all_finite(init.x) || !all_finite(init.y) || !all_finite(init.u))
        throw NonFiniteError("wior_bo: non-finite initial state");

    const EpochPlan plan = plan_epoch(oracle.m(), oracle.n());
    const std::size_t I = plan.epoch_len;
    const std::size_t interval = config.eval_interval == 0 ? I : config.eval_interval;
    const std::uint64_t xi_seed = derive_seed(config.seed, 1);
    const std::uint64_t zeta_seed = derive_seed(config.seed, 2);

    const auto start = Clock::now();
    IterateBO state = init;
    IterateBO last_finite = state;
    RunTrace trace;

    const std::size_t p = oracle.p();
    const std::size_t d = oracle.d();
    std::vector<double> gy(d), hv(d), fy(d), fx(p), jv(p);

    auto log_point = [&](std::size_t t) {
        OracleBase::ScopedEvalCounters scope(oracle);
        TraceRecord rec;
        try {
            const HypergradResult ref = exact_hypergradient_full(oracle, state.x, kTraceTol);
            rec.hypergrad_norm = vec::nrm2(ref.grad);
            if (oracle.has_value_f()) rec.loss = oracle.value_f_full(state.x, ref.y);
            std::vector<double> diff(d);
            vec::sub(state.y, ref.y, diff);
            rec.y_err = vec::nrm2(diff);
            vec::sub(state.u, ref.u, diff);
            rec.u_err = vec::nrm2(diff);
        } catch (const NoConvergenceError&) {
            // A reference solve that cannot meet its tolerance means the
            // state has blown past any usable scale.
            trace.final_state = last_finite;
            trace.steps_run = t;
            throw DivergenceError("wior_bo: reference evaluation failed at step " +
                                      std::to_string(t),
                                  std::move(trace));
        }
        rec.step = t;
        rec.epoch = t / I;
        rec.counters = oracle.run_counters();
        rec.wall_seconds = seconds_since(start);
        trace.records.push_back(rec);
    };

    log_point(0);
    std::size_t t = 0;
    bool logged_last = true;
    for (std::size_t r = 1; r <= config.epochs; ++r) {
        project_and_audit(state.u, config.rates.iota, trace);
        const SampleOrder xi = epoch_order(config.strategy, oracle.m(), I, xi_seed, r);
        const SampleOrder zeta = epoch_order(config.strategy, oracle.n(), I, zeta_seed, r);
        const StepRates sr = rates_for_epoch(config.rates, config.rate_decay_per_epoch, r);

        for (std::size_t i = 0; i < I; ++i) {
            const std::size_t xi_i = xi.indices[i];
            const std::size_t zeta_i = zeta.indices[i];
            last_finite = state;

            // All five products at the pre-step state; then the three updates.
            oracle.grad_g_y(state.x, state.y, zeta_i, gy);
            oracle.hvp_g_yy(state.x, state.y, zeta_i, state.u, hv);
            oracle.grad_f_y(state.x, state.y, xi_i, fy);
            oracle.grad_f_x(state.x, state.y, xi_i, fx);
            oracle.jvp_g_xy(state.x, state.y, zeta_i, state.u, jv);

            vec::axpy(-sr.gamma, gy, state.y);
            vec::axpy(-sr.rho, hv, state.u);
            vec::axpy(sr.rho, fy, state.u);
            vec::axpy(-sr.eta, fx, state.x);
            vec::axpy(sr.eta, jv, state.x);
            ++t;

            ensure_finite_state(state, trace, last_finite, t);
            logged_last = (t % interval == 0);
            if (logged_last) log_point(t);
            if (config.max_wall_seconds && seconds_since(start) > *config.max_wall_seconds) {
                if (!logged_last) log_point(t);
                trace.final_state = state;
                trace.steps_run = t;
                trace.wall_clock_truncated = true;
                return trace;
            }
        }
    }
    if (!logged_last) log_point(t);
    trace.final_state = state;
    trace.steps_run = t;
    return trace;
}

RunTrace wior_comp(const CompositionalOracle& oracle, const IterateBO& init,
                   const RunConfig& config) {
    check_config(config);
    if (init.x.size() != oracle.p() || init.y.size() != oracle.d() ||
        init.u.size() != oracle.d())
        throw Error("wior_comp: init dimensions do not match the oracle");
    if (!all_finite(init.x) || !all_finite(init.y) || !all_finite(init.u))
        throw NonFiniteError("wior_comp: non-finite initial state");

    const EpochPlan plan = plan_epoch(oracle.m(), oracle.n());
    const std::size_t I = plan.epoch_len;
    const std::size_t interval = config.eval_interval == 0 ? I : config.eval_interval;
    const std::uint64_t xi_seed = derive_seed(config.seed, 1);
    const std::uint64_t zeta_seed = derive_seed(config.seed, 2);

    const auto start = Clock::now();
    IterateBO state = init;
    IterateBO last_finite = state;
    RunTrace trace;

    const std::size_t p = oracle.p();
    const std::size_t d = oracle.d();
    std::vector<double> rv(d), fy(d), jv(p);

    auto log_point = [&](std::size_t t) {
        OracleBase::ScopedEvalCounters scope(oracle);
        const HypergradResult ref = exact_hypergradient_comp(oracle, state.x);
        TraceRecord rec;
        rec.step = t;
        rec.epoch = t / I;
        rec.hypergrad_norm = vec::nrm2(ref.grad);
        if (oracle.has_value_f()) rec.loss = oracle.value_f_full(ref.y);
        std::vector<double> diff(d);
        vec::sub(state.y, ref.y, diff);
        rec.y_err = vec::nrm2(diff);
        vec::sub(state.u, ref.u, diff);
        rec.u_err = vec::nrm2(diff);
        rec.counters = oracle.run_counters();
        rec.wall_seconds = seconds_since(start);
        trace.records.push_back(rec);
    };

    log_point(0);
    std::size_t t = 0;
    bool logged_last = true;
    for (std::size_t r = 1; r <= config.epochs; ++r) {
        project_and_audit(state.u, config.rates.iota, trace);
        const SampleOrder xi = epoch_order(config.strategy, oracle.m(), I, xi_seed, r);
        const SampleOrder zeta = epoch_order(config.strategy, oracle.n(), I, zeta_seed, r);
        const StepRates sr = rates_for_epoch(config.rates, config.rate_decay_per_epoch, r);

        for (std::size_t i = 0; i < I; ++i) {
            last_finite = state;
            oracle.r(state.x, zeta.indices[i], rv);
            oracle.grad_f_y(state.y, xi.indices[i], fy);
            oracle.jvp_r(state.x, zeta.indices[i], state.u, jv);

            vec::ema(sr.gamma, state.y, rv);
            vec::ema(sr.rho, state.u, fy);
            vec::axpy(-sr.eta, jv, state.x);
            ++t;

            ensure_finite_state(state, trace, last_finite, t);
            logged_last = (t % interval == 0);
            if (logged_last) log_point(t);
            if (config.max_wall_seconds && seconds_since(start) > *config.max_wall_seconds) {
                if (!logged_last) log_point(t);
                trace.final_state = state;
                trace.steps_run = t;
                trace.wall_clock_truncated = true;
                return trace;
            }
        }
    }
    if (!logged_last) log_point(t);
    trace.final_state = state;
    trace.steps_run = t;
    return trace;
}

RunTrace wior_minimax(const MinimaxOracle& oracle, const IterateBO& init,
                      const RunConfig& config) {
    check_config(config);
    if (init.x.size() != oracle.p() || init.y.size() != oracle.d())
        throw Error("wior_minimax: init dimensions do not match the oracle");
    if (!all_finite(init.x) || !all_finite(init.y))
        throw NonFiniteError("wior_minimax: non-finite initial state");

    const std::size_t I = oracle.m();
    const std::size_t interval = config.eval_interval == 0 ? I : config.eval_interval;
    const std::uint64_t xi_seed = derive_seed(config.seed, 1);

    const auto start = Clock::now();
    IterateBO state = init;
    state.u.clear();
    IterateBO last_finite = state;
    RunTrace trace;

    const std::size_t p = oracle.p();
    const std::size_t d = oracle.d();
    std::vector<double> gy(d), gx(p);

    auto log_point = [&](std::size_t t) {
        OracleBase::ScopedEvalCounters scope(oracle);
        TraceRecord rec;
        try {
            const std::vector<double> y_best =
                minimax_best_response(oracle, state.x, kTraceTol);
            std::vector<double> grad(p);
            oracle.grad_f_x_full(state.x, y_best, grad);
            rec.hypergrad_norm = vec::nrm2(grad);
            std::vector<double> diff(d);
            vec::sub(state.y, y_best, diff);
            rec.y_err = vec::nrm2(diff);
        } catch (const NoConvergenceError&) {
            trace.final_state = last_finite;
            trace.steps_run = t;
            throw DivergenceError("wior_minimax: reference evaluation failed at step " +
                                      std::to_string(t),
                                  std::move(trace));
        }
        rec.step = t;
        rec.epoch = t / I;
        rec.counters = oracle.run_counters();
        rec.wall_seconds = seconds_since(start);
        trace.records.push_back(rec);
    };

    log_point(0);
    std::size_t t = 0;
    bool logged_last = true;
    for (std::size_t r = 1; r <= config.epochs; ++r) {
        const SampleOrder xi = epoch_order(config.strategy, oracle.m(), I, xi_seed, r);
        const StepRates sr = rates_for_epoch(config.rates, config.rate_decay_per_epoch, r);

        for (std::size_t i = 0; i < I; ++i) {
            last_finite = state;
            // Ascent on y, descent on x, both from the pre-step pair.
            oracle.grad_f_y(state.x, state.y, xi.indices[i], gy);
            oracle.grad_f_x(state.x, state.y, xi.indices[i], gx);
            vec::axpy(sr.gamma, gy, state.y);
            vec::axpy(-sr.eta, gx, state.x);
            ++t;

            ensure_finite_state(state, trace, last_finite, t);
            logged_last = (t % interval == 0);
            if (logged_last) log_point(t);
            if (config.max_wall_seconds && seconds_since(start) > *config.max_wall_seconds) {
                if (!logged_last) log_point(t);
                trace.final_state = state;
                trace.steps_run = t;
                trace.wall_clock_truncated = true;
                return trace;
            }
        }
    }
    if (!logged_last) log_point(t);
    trace.final_state = state;
    trace.steps_run = t;
    return trace;
}

}  // namespace wior
