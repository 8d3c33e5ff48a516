#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "oracle_checks.hpp"
#include "wior/problems.hpp"
#include "wior/sampler.hpp"
#include "wior/solvers.hpp"
#include "wior/vecops.hpp"

using namespace wior;
using namespace wior::testing;

namespace {

QuadraticBilevel hand_instance() {
    return QuadraticBilevel::from_data(1, 1, 1, 1, {2.0}, {1.0}, {0.0}, {1.0}, 1.0);
}

LinearComp tiny_comp() {
    // m = n = 1, r(x) = [x; 0.5 x], f(y) = 1/2 ||y - a||^2.
    std::istringstream is(
        "wior-problem 1 linear_comp\np 1\nd 2\nm 1\nn 1\nM 2\n1 0.5\nc 2\n0 0\na 2\n1 2\n");
    return LinearComp::load(is);
}

std::vector<double> metric_sequence(const RunTrace& trace) {
    std::vector<double> v;
    for (const TraceRecord& r : trace.records) {
        v.push_back(r.hypergrad_norm);
        if (r.loss) v.push_back(*r.loss);
        if (r.y_err) v.push_back(*r.y_err);
        if (r.u_err) v.push_back(*r.u_err);
    }
    return v;
}

}  // namespace

TEST_CASE("wior_bo one step matches the hand derivation to 1e-15") {
    const QuadraticBilevel prob = hand_instance();
    RunConfig rc;
    rc.epochs = 1;  // lcm(1,1) = 1 step
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 0;
    rc.rates = RateConfig::from_rates(0.1, 0.1, 0.1, 10.0);
    const RunTrace tr = wior_bo(prob, IterateBO::zeros(1, 1), rc);
    CHECK(std::abs(tr.final_state.x[0] - 0.0) <= 1e-15);
    CHECK(std::abs(tr.final_state.y[0] - 0.0) <= 1e-15);
    CHECK(std::abs(tr.final_state.u[0] - (-0.1)) <= 1e-15);
}

TEST_CASE("wior_minimax one step matches the hand derivation to 1e-15") {
    // f(x, y) = x y - y^2 / 2, start (1, 0), eta = gamma = 0.1.
    const QuadMinimax prob = QuadMinimax::from_data(1, 1, 1, {0.0}, {0.0}, {1.0}, {1.0});
    RunConfig rc;
    rc.epochs = 1;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 0;
    rc.rates = RateConfig::from_rates(0.1, 0.1, 0.1, 1.0);
    IterateBO init = IterateBO::zeros(1, 1);
    init.x[0] = 1.0;
    const RunTrace tr = wior_minimax(prob, init, rc);
    CHECK(std::abs(tr.final_state.x[0] - 1.0) <= 1e-15);
    CHECK(std::abs(tr.final_state.y[0] - 0.1) <= 1e-15);
}

TEST_CASE("zero rates freeze the state for every single-loop solver") {
    const RateConfig zero = RateConfig::from_rates(0.0, 0.0, 0.0, 1.0);
    {
        const QuadraticBilevel prob = gen_quadratic_bilevel(4, 4, 3, 5, 6.0, 2);
        RunConfig rc;
        rc.epochs = 3;
        rc.rates = zero;
        IterateBO init = IterateBO::zeros(4, 4);
        init.x.assign(4, 0.5);
        init.y.assign(4, -0.25);
        const RunTrace tr = wior_bo(prob, init, rc);
        CHECK(tr.final_state.x == init.x);
        CHECK(tr.final_state.y == init.y);
        CHECK(tr.final_state.u == init.u);
    }
    {
        const LinearComp prob = gen_linear_comp(3, 4, 4, 4, 2);
        RunConfig rc;
        rc.epochs = 3;
        rc.rates = zero;
        IterateBO init = IterateBO::zeros(3, 4);
        init.x.assign(3, 1.0);
        const RunTrace tr = wior_comp(prob, init, rc);
        CHECK(tr.final_state.x == init.x);
        CHECK(tr.final_state.y == init.y);
    }
    {
        const QuadMinimax prob = gen_quad_minimax(3, 3, 4, 2);
        RunConfig rc;
        rc.epochs = 3;
        rc.rates = zero;
        IterateBO init = IterateBO::zeros(3, 3);
        init.x.assign(3, 1.0);
        const RunTrace tr = wior_minimax(prob, init, rc);
        CHECK(tr.final_state.x == init.x);
        CHECK(tr.final_state.y == init.y);
    }
}

TEST_CASE("identical configuration reproduces the metric sequence bitwise") {
    const QuadraticBilevel prob_a = gen_quadratic_bilevel(6, 6, 8, 8, 8.0, 3);
    const QuadraticBilevel prob_b = gen_quadratic_bilevel(6, 6, 8, 8, 8.0, 3);
    RunConfig rc;
    rc.epochs = 5;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 77;
    rc.rates = RateConfig::from_rates(0.02, 0.05, 0.05, prob_a.meta().default_iota());
    rc.eval_interval = 3;
    const RunTrace a = wior_bo(prob_a, IterateBO::zeros(6, 6), rc);
    const RunTrace b = wior_bo(prob_b, IterateBO::zeros(6, 6), rc);
    CHECK(metric_sequence(a) == metric_sequence(b));
    CHECK(a.final_state.x == b.final_state.x);
}

TEST_CASE("wior_bo books exactly (2,1,1,1) per step") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(5, 5, 6, 4, 5.0, 1);
    RunConfig rc;
    rc.epochs = 3;
    rc.strategy = Sampling::ShuffleOnce;
    rc.seed = 9;
    rc.rates = RateConfig::from_rates(0.01, 0.02, 0.02, prob.meta().default_iota());
    const RunTrace tr = wior_bo(prob, IterateBO::zeros(5, 5), rc);
    const std::size_t I = plan_epoch(6, 4).epoch_len;
    REQUIRE(tr.steps_run == 3 * I);
    for (std::size_t k = 1; k < tr.records.size(); ++k) {
        const OracleCounters d = tr.records[k].counters - tr.records[k - 1].counters;
        const std::uint64_t steps = tr.records[k].step - tr.records[k - 1].step;
        CHECK(d.gc_f == 2 * steps);
        CHECK(d.gc_g == steps);
        CHECK(d.jv_g == steps);
        CHECK(d.hv_g == steps);
    }
    // Reference evaluations landed on the separate ledger.
    CHECK(prob.eval_counters().gc_g > 0);
    CHECK(prob.run_counters().gc_f == 2 * tr.steps_run);
}

TEST_CASE("u stays inside the projection ball at every epoch boundary") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(6, 6, 8, 8, 8.0, 5);
    RunConfig rc;
    rc.epochs = 20;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 3;
    // Deliberately small radius so the projection actually rescales.
    rc.rates = RateConfig::from_rates(0.02, 0.05, 0.05, 0.05);
    const RunTrace tr = wior_bo(prob, IterateBO::zeros(6, 6), rc);
    CHECK(tr.projection_checks == 20);
    CHECK(tr.projection_violations == 0);
}

TEST_CASE("independent orders pass uniformity and pairwise chi-square tests") {
    // Frozen 0.999-quantile chi-square critical values: df=31 -> 61.0983,
    // df=63 -> 103.4424.
    {
        const SampleOrder order = make_order(Sampling::Independent, 32, 100000, 2024);
        std::vector<double> counts(32, 0.0);
        for (std::uint32_t ix : order.indices) counts[ix] += 1.0;
        const double expect = 100000.0 / 32.0;
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
        CHECK(chi2 < 61.0983);
    }
    {
        const SampleOrder order = make_order(Sampling::Independent, 8, 200000, 551);
        std::vector<double> counts(64, 0.0);
        for (std::size_t t = 0; t + 1 < order.indices.size(); t += 2)
            counts[order.indices[t] * 8 + order.indices[t + 1]] += 1.0;
        const double expect = 100000.0 / 64.0;
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
        CHECK(chi2 < 103.4424);
    }
}

TEST_CASE("quadratic bilevel run reaches the 1e-3 gradient target (quick)") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(10, 10, 32, 32, 10.0, 0);
    for (Sampling s :
         {Sampling::Independent, Sampling::ShuffleOnce, Sampling::RandomReshuffle}) {
        RunConfig rc;
        rc.epochs = 200;
        rc.strategy = s;
        rc.seed = 7;
        rc.rates = RateConfig::from_rates(0.05, 0.08, 0.08, prob.meta().default_iota());
        rc.rate_decay_per_epoch = 0.96;
        const RunTrace tr = wior_bo(prob, IterateBO::zeros(10, 10), rc);
        double best = 1e9;
        for (const TraceRecord& r : tr.records) best = std::min(best, r.hypergrad_norm);
        CHECK(best <= 1e-3);
    }
}

TEST_CASE("tracking errors contract in epoch-block medians under strong convexity") {
    auto block_median = [](const RunTrace& tr, std::size_t e0, std::size_t e1, bool u_side) {
        std::vector<double> v;
        for (const TraceRecord& r : tr.records)
            if (r.epoch >= e0 && r.epoch <= e1) v.push_back(u_side ? *r.u_err : *r.y_err);
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const QuadraticBilevel prob = gen_quadratic_bilevel(10, 10, 32, 32, 10.0, seed);
        RunConfig rc;
        rc.epochs = 30;
        rc.strategy = Sampling::RandomReshuffle;
        rc.seed = 5 + seed;
        // Inner rates well above the outer one: the iterates track their
        // moving targets and the residual decays with the outer progress.
        rc.rates = RateConfig::from_rates(0.001, 0.02, 0.02, prob.meta().default_iota());
        rc.eval_interval = 8;
        const RunTrace tr = wior_bo(prob, IterateBO::zeros(10, 10), rc);
        for (bool u_side : {false, true}) {
            double prev = block_median(tr, 11, 15, u_side);
            for (std::size_t b = 1; b < 4; ++b) {
                const double cur = block_median(tr, 11 + 5 * b, 15 + 5 * b, u_side);
                CHECK(cur < prev);
                prev = cur;
            }
        }
    }
}

TEST_CASE("divergence raises an error carrying the finite part of the trace") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(4, 4, 4, 4, 8.0, 0);
    RunConfig rc;
    rc.epochs = 50;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 1;
    rc.rates = RateConfig::from_rates(50.0, 50.0, 50.0, 1e9);  // far beyond stability
    try {
        (void)wior_bo(prob, IterateBO::zeros(4, 4), rc);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(!e.partial.records.empty());
        CHECK(all_finite(e.partial.final_state.x));
        CHECK(all_finite(e.partial.final_state.y));
        CHECK(all_finite(e.partial.final_state.u));
    }
}

TEST_CASE("wall-clock budget truncates the run and flags the trace") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(4, 4, 8, 8, 5.0, 3);
    RunConfig rc;
    rc.epochs = 1000;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 4;
    rc.rates = RateConfig::from_rates(0.001, 0.002, 0.002, prob.meta().default_iota());
    rc.max_wall_seconds = 1e-9;
    const RunTrace tr = wior_bo(prob, IterateBO::zeros(4, 4), rc);
    CHECK(tr.wall_clock_truncated);
    CHECK(tr.steps_run < 1000 * 8);
    CHECK(!tr.records.empty());
}

TEST_CASE("wior_comp with unit gamma assigns the sampled map value") {
    const LinearComp prob = tiny_comp();
    RunConfig rc;
    rc.epochs = 1;  // single step
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 0;
    rc.rates = RateConfig::from_rates(0.0, 1.0, 0.5, 10.0);
    IterateBO init = IterateBO::zeros(1, 2);
    init.x[0] = 2.0;
    const RunTrace tr = wior_comp(prob, init, rc);
    // y_1 = r(x_0) = (2, 1) exactly; x untouched (eta = 0).
    CHECK(tr.final_state.y == std::vector<double>{2.0, 1.0});
    CHECK(tr.final_state.x == std::vector<double>{2.0});
}

TEST_CASE("wior_comp converges to the normal-equations solution") {
    const LinearComp prob = gen_linear_comp(4, 6, 8, 8, 0);
    RunConfig rc;
    rc.epochs = 3000;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 11;
    rc.rates = RateConfig::from_rates(0.1, 0.4, 0.4, 20.0);
    rc.rate_decay_per_epoch = 0.997;
    const RunTrace tr = wior_comp(prob, IterateBO::zeros(4, 6), rc);
    std::vector<double> diff(4);
    vec::sub(tr.final_state.x, prob.x_star(), diff);
    CHECK(vec::nrm2(diff) <= 1e-3);
}

TEST_CASE("wior_minimax converges to the closed-form saddle") {
    const QuadMinimax prob = gen_quad_minimax(5, 5, 16, 0);
    RunConfig rc;
    rc.epochs = 3000;
    rc.strategy = Sampling::RandomReshuffle;
    rc.seed = 2;
    rc.rates = RateConfig::from_rates(0.05, 0.1, 0.1, 1.0);
    rc.rate_decay_per_epoch = 0.997;
    const RunTrace tr = wior_minimax(prob, IterateBO::zeros(5, 5), rc);
    std::vector<double> dx(5), dy(5);
    vec::sub(tr.final_state.x, prob.saddle_x(), dx);
    vec::sub(tr.final_state.y, prob.saddle_y(), dy);
    CHECK(std::sqrt(vec::nrm2sq(dx) + vec::nrm2sq(dy)) <= 1e-6);
}

TEST_CASE("config validation") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(3, 3, 2, 2, 4.0, 0);
    RunConfig rc;
    rc.epochs = 0;
    rc.rates = RateConfig::from_rates(0.1, 0.1, 0.1, 1.0);
    CHECK_THROWS_AS(wior_bo(prob, IterateBO::zeros(3, 3), rc), Error);
    rc.epochs = 1;
    CHECK_THROWS_AS(wior_bo(prob, IterateBO::zeros(2, 3), rc), Error);  // wrong dims
    IterateBO bad = IterateBO::zeros(3, 3);
    bad.y[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(wior_bo(prob, bad, rc), NonFiniteError);
}
