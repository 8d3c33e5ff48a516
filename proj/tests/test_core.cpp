#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "wior/core.hpp"
#include "wior/rng.hpp"
#include "wior/vecops.hpp"

using namespace wior;

TEST_CASE("project_ball: zero vector is a fixed point") {
    const std::vector<double> out = project_ball({0.0, 0.0}, 1.0);
    CHECK(out == std::vector<double>{0.0, 0.0});
}

TEST_CASE("project_ball: inside the ball is the identity") {
    const std::vector<double> out = project_ball({3.0, 4.0}, 5.0);
    CHECK(out == std::vector<double>{3.0, 4.0});
}

TEST_CASE("project_ball: outside scales to the radius") {
    const std::vector<double> out = project_ball({3.0, 4.0}, 1.0);
    CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(vec::nrm2(out) <= 1.0);
}

TEST_CASE("project_ball: idempotent bit-for-bit and never norm-increasing") {
    Rng rng(99);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 1 + rng.next_below(16);
        std::vector<double> u(n);
        for (double& v : u) v = 10.0 * rng.next_normal();
        const double iota = 0.01 + 3.0 * rng.next_double();

        const double before = vec::nrm2(u);
        const std::vector<double> once = project_ball(u, iota);
        CHECK(vec::nrm2(once) <= iota);
        CHECK(vec::nrm2(once) <= before);
        const std::vector<double> twice = project_ball(once, iota);
        CHECK(once == twice);  // exact fixed point
    }
}

TEST_CASE("project_ball: non-finite input raises") {
    CHECK_THROWS_AS(project_ball({1.0, std::numeric_limits<double>::quiet_NaN()}, 1.0),
                    NonFiniteError);
    CHECK_THROWS_AS(project_ball({std::numeric_limits<double>::infinity()}, 1.0),
                    NonFiniteError);
}

TEST_CASE("plan_epoch worked examples") {
    EpochPlan p = plan_epoch(2, 3);
    CHECK(p.epoch_len == 6);
    CHECK(p.outer_reps == 3);
    CHECK(p.inner_reps == 2);

    p = plan_epoch(4, 6);
    CHECK(p.epoch_len == 12);
    CHECK(p.outer_reps == 3);
    CHECK(p.inner_reps == 2);

    p = plan_epoch(5, 5);
    CHECK(p.epoch_len == 5);
    CHECK(p.outer_reps == 1);
    CHECK(p.inner_reps == 1);
}

TEST_CASE("plan_epoch divisibility holds for all sizes up to 64") {
    for (std::size_t m = 1; m <= 64; ++m) {
        for (std::size_t n = 1; n <= 64; ++n) {
            const EpochPlan p = plan_epoch(m, n);
            CHECK(p.epoch_len % m == 0);
            CHECK(p.epoch_len % n == 0);
            CHECK(p.outer_reps * m == p.epoch_len);
            CHECK(p.inner_reps * n == p.epoch_len);
        }
    }
}

TEST_CASE("plan_epoch rejects empty datasets and over-cap epochs") {
    CHECK_THROWS_AS(plan_epoch(0, 3), InvalidDatasetError);
    CHECK_THROWS_AS(plan_epoch(3, 0), InvalidDatasetError);
    // 999983 and 999979 are coprime; the lcm blows past the cap.
    CHECK_THROWS_AS(plan_epoch(999983, 999979), EpochTooLongError);
    CHECK_NOTHROW(plan_epoch(1000, 1000));
}

TEST_CASE("RateConfig ratio mode keeps gamma and rho exact multiples") {
    const RateConfig r = RateConfig::from_ratios(0.1, 3.0, 7.0, 2.0);
    CHECK(r.gamma == 3.0 * 0.1);
    CHECK(r.rho == 7.0 * 0.1);
    CHECK(r.ratio_mode);

    const RateConfig e = RateConfig::from_rates(0.1, 0.2, 0.3, 1.0);
    CHECK_FALSE(e.ratio_mode);
    CHECK(e.eta == 0.1);

    CHECK_THROWS_AS(RateConfig::from_rates(-0.1, 0.2, 0.3, 1.0), Error);
    CHECK_THROWS_AS(RateConfig::from_rates(0.1, 0.2, 0.3, 0.0), Error);
    CHECK_NOTHROW(RateConfig::from_rates(0.0, 0.0, 0.0, 1.0));  // zero-rate fixed-point configs
}

TEST_CASE("ProblemMeta validates and derives kappa") {
    const ProblemMeta meta = ProblemMeta::make(0.5, 5.0, 2.0);
    CHECK(meta.kappa == 10.0);
    CHECK(meta.default_iota() == 4.0);
    CHECK_THROWS_AS(ProblemMeta::make(2.0, 1.0, 1.0), Error);
    CHECK_THROWS_AS(ProblemMeta::make(0.0, 1.0, 1.0), Error);
}

TEST_CASE("CounterLedger snapshots are monotone") {
    CounterLedger ledger;
    ledger.add_gc_f(3);
    ledger.add_gc_g();
    ledger.add_hv_g(2);
    const OracleCounters a = ledger.snapshot();
    CHECK(a.gc_f == 3);
    CHECK(a.gc_g == 1);
    CHECK(a.hv_g == 2);
    CHECK(a.jv_g == 0);
    ledger.add_jv_g(5);
    const OracleCounters b = ledger.snapshot();
    CHECK(b.jv_g == 5);
    CHECK(b.gc_f == a.gc_f);
}
