#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracle_checks.hpp"
#include "wior/oracle.hpp"
#include "wior/problems.hpp"
#include "wior/vecops.hpp"

using namespace wior;
using namespace wior::testing;

namespace {

// g = 1/2 * 2 y^2 + x y, f = 1/2 (y-1)^2 + 1/2 x^2; grad h(x) = (5/4) x + 1/2.
QuadraticBilevel hand_instance() {
    return QuadraticBilevel::from_data(1, 1, 1, 1, {2.0}, {1.0}, {0.0}, {1.0}, 1.0);
}

// f(x, y; i) = <c, x> with the inner solution ignored by f: the
// hypergradient is exactly c and finite differences are exact for it.
class LinearF final : public BilevelOracle {
  public:
    explicit LinearF(std::vector<double> c) : c_(std::move(c)), meta_(ProblemMeta::make(1, 1, 1)) {}
    std::size_t p() const override { return c_.size(); }
    std::size_t d() const override { return 2; }
    std::size_t m() const override { return 1; }
    std::size_t n() const override { return 1; }
    const ProblemMeta& meta() const override { return meta_; }
    bool has_value_f() const override { return true; }
    double value_f(std::span<const double> x, std::span<const double>,
                   std::size_t) const override {
        return vec::dot(c_, x);
    }

  protected:
    void do_grad_f_x(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<double> out) const override {
        std::copy(c_.begin(), c_.end(), out.begin());
    }
    void do_grad_f_y(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<double> out) const override {
        std::fill(out.begin(), out.end(), 0.0);
    }
    void do_grad_g_y(std::span<const double>, std::span<const double> y, std::size_t,
                     std::span<double> out) const override {
        std::copy(y.begin(), y.end(), out.begin());
    }
    void do_hvp_g_yy(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<const double> v, std::span<double> out) const override {
        std::copy(v.begin(), v.end(), out.begin());
    }
    void do_jvp_g_xy(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<const double>, std::span<double> out) const override {
        std::fill(out.begin(), out.end(), 0.0);
    }

  private:
    std::vector<double> c_;
    ProblemMeta meta_;
};

// Singular inner Hessian: the u-system has no usable curvature.
class SingularHessian final : public BilevelOracle {
  public:
    SingularHessian() : meta_(ProblemMeta::make(1, 1, 1)) {}
    std::size_t p() const override { return 1; }
    std::size_t d() const override { return 1; }
    std::size_t m() const override { return 1; }
    std::size_t n() const override { return 1; }
    const ProblemMeta& meta() const override { return meta_; }

  protected:
    void do_grad_f_x(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<double> out) const override {
        out[0] = 0.0;
    }
    void do_grad_f_y(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<double> out) const override {
        out[0] = 1.0;
    }
    void do_grad_g_y(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<double> out) const override {
        out[0] = 0.0;  // every y is stationary
    }
    void do_hvp_g_yy(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<const double>, std::span<double> out) const override {
        out[0] = 0.0;  // zero curvature
    }
    void do_jvp_g_xy(std::span<const double>, std::span<const double>, std::size_t,
                     std::span<const double>, std::span<double> out) const override {
        out[0] = 0.0;
    }

  private:
    ProblemMeta meta_;
};

}  // namespace

TEST_CASE("hand-derived 1-D hypergradient: grad h(0) = 1/2") {
    const QuadraticBilevel prob = hand_instance();
    const std::vector<double> g0 = exact_hypergradient(prob, std::vector<double>{0.0}, 1e-12);
    CHECK(std::abs(g0[0] - 0.5) <= 1e-10);
    const std::vector<double> g3 = exact_hypergradient(prob, std::vector<double>{0.3}, 1e-12);
    CHECK(std::abs(g3[0] - (1.25 * 0.3 + 0.5)) <= 1e-10);
}

TEST_CASE("exact_inner_solve reaches the closed-form inner solution") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(4, 6, 3, 5, 8.0, 21);
    Rng rng(5);
    const std::vector<double> x = randn(rng, 4);
    const std::vector<double> y = exact_inner_solve(prob, x, 1e-11);
    check_close(y, prob.y_star(x), 1e-9);
}

TEST_CASE("already-stationary inner problem returns zero with one residual check") {
    // b = 0 and x = 0 make y = 0 stationary.
    const QuadraticBilevel prob =
        QuadraticBilevel::from_data(1, 1, 1, 1, {2.0}, {1.0}, {0.0}, {1.0}, 1.0);
    const OracleCounters before = prob.run_counters();
    const std::vector<double> y = exact_inner_solve(prob, std::vector<double>{0.0}, 1e-12);
    CHECK(y == std::vector<double>{0.0});
    const OracleCounters delta = prob.run_counters() - before;
    CHECK(delta.gc_g == prob.n());  // single full-batch residual check, no steps
}

TEST_CASE("identity inner Hessian makes u the outer y-gradient") {
    // A_j = I (d = 3): u_x = grad_y f(x, y_x).
    const std::size_t d = 3, p = 2;
    std::vector<double> A = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::vector<double> B = {0.5, -0.25, 1.0, 0.75, -0.5, 0.25};
    std::vector<double> b = {0.1, -0.2, 0.3};
    std::vector<double> t = {1.0, -1.0, 0.5};
    const QuadraticBilevel prob =
        QuadraticBilevel::from_data(p, d, 1, 1, A, B, b, t, 1.0);
    const std::vector<double> x = {0.4, -0.7};
    const HypergradResult ref = exact_hypergradient_full(prob, x, 1e-12);
    std::vector<double> fy(d);
    prob.grad_f_y_full(x, ref.y, fy);
    check_close(ref.u, fy, 1e-10);
}

TEST_CASE("finite differences confirm the 1-D reference hypergradient") {
    const QuadraticBilevel prob = hand_instance();
    CHECK(fd_check_hypergradient(prob, std::vector<double>{0.3}, 1e-5, 1e-12) <= 1e-6);
}

TEST_CASE("finite differences are exact for a linear outer objective") {
    const LinearF prob({0.3, -1.7, 2.5});
    CHECK(fd_check_hypergradient(prob, std::vector<double>{0.1, 0.2, -0.4}, 1e-5, 1e-12) <=
          1e-9);
}

TEST_CASE("finite differences on the 10-dimensional quadratic instance") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(10, 10, 8, 8, 10.0, 1);
    Rng rng(17);
    const std::vector<double> x = randn(rng, 10);
    CHECK(fd_check_hypergradient(prob, x, 1e-5, 1e-10) <= 1e-4);
}

TEST_CASE("mean consistency and hvp symmetry on a generated quadratic") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(5, 7, 6, 9, 12.0, 3);
    check_mean_consistency(prob, 101, 100);
    check_hvp_symmetry(prob, 102);
}

TEST_CASE("reference hypergradient is deterministic") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(6, 6, 4, 4, 5.0, 9);
    Rng rng(1);
    const std::vector<double> x = randn(rng, 6);
    const std::vector<double> a = exact_hypergradient(prob, x, 1e-10);
    const std::vector<double> b = exact_hypergradient(prob, x, 1e-10);
    CHECK(a == b);
}

TEST_CASE("full-batch counter accounting: n per inner step, n per cg apply") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(3, 4, 5, 6, 4.0, 7);
    Rng rng(2);
    const std::vector<double> x = randn(rng, 3);

    const OracleCounters c0 = prob.run_counters();
    (void)exact_inner_solve(prob, x, 1e-10);
    const OracleCounters c1 = prob.run_counters();
    const OracleCounters inner = c1 - c0;
    CHECK(inner.gc_g % prob.n() == 0);  // one full batch per residual check
    CHECK(inner.gc_g >= prob.n());
    CHECK(inner.gc_f == 0);
    CHECK(inner.hv_g == 0);
    CHECK(inner.jv_g == 0);

    (void)exact_hypergradient(prob, x, 1e-10);
    const OracleCounters whole = prob.run_counters() - c1;
    CHECK(whole.hv_g % prob.n() == 0);
    CHECK(whole.hv_g >= prob.n());
    CHECK(whole.jv_g == prob.n());                 // one product in the assembly
    CHECK(whole.gc_f == 2 * prob.m());             // rhs + outer gradient
}

TEST_CASE("cg reports ill-conditioning on a singular inner Hessian") {
    const SingularHessian prob;
    CHECK_THROWS_AS(exact_hypergradient(prob, std::vector<double>{0.0}, 1e-10),
                    IllConditioningError);
}

TEST_CASE("inner solve reports no-convergence with the last residual") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(3, 3, 2, 2, 50.0, 4);
    Rng rng(8);
    const std::vector<double> x = randn(rng, 3);
    try {
        (void)exact_inner_solve(prob, x, 1e-14, 1);
        FAIL("expected NoConvergenceError");
    } catch (const NoConvergenceError& e) {
        CHECK(e.residual > 0.0);
    }
}

TEST_CASE("conditional reference with one outer example matches the plain one") {
    const QuadraticBilevel base = gen_quadratic_bilevel(4, 5, 1, 6, 6.0, 11);
    const ConditionalFromBilevel cond(base);
    Rng rng(3);
    const std::vector<double> x = randn(rng, 4);
    const std::vector<double> plain = exact_hypergradient(base, x, 1e-11);
    const std::vector<double> conditional = exact_hypergradient_conditional(cond, x, 1e-11);
    check_close(conditional, plain, 1e-9);
}

TEST_CASE("noiseless IRM reduces to the regularized logistic gradient") {
    const SyntheticIRM prob = gen_irm(12, 4, 5, 0.0, 0.1, 2);
    Rng rng(6);
    const std::vector<double> x = randn(rng, 5);
    // sigma = 0: the inner solution is exactly <c_i, x>.
    for (std::size_t i = 0; i < prob.m(); ++i)
        CHECK(prob.y_star_i(x, i) ==
              doctest::Approx(vec::dot(prob.input(i), x)).epsilon(1e-14));
    const std::vector<double> got = exact_hypergradient_conditional(prob, x, 1e-11);
    check_close(got, prob.hypergrad_closed(x), 1e-9);
}

TEST_CASE("IRM reference hypergradient passes the finite-difference check") {
    const SyntheticIRM prob = gen_irm(20, 5, 4, 0.1, 0.1, 0);
    Rng rng(9);
    const std::vector<double> x = randn(rng, 4);
    CHECK(fd_check_hypergradient_conditional(prob, x, 1e-5, 1e-10) <= 1e-4);
}

TEST_CASE("eval scope keeps reference work off the run ledger") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(3, 3, 2, 2, 4.0, 12);
    const OracleCounters before = prob.run_counters();
    {
        OracleBase::ScopedEvalCounters scope(prob);
        (void)exact_hypergradient(prob, std::vector<double>(3, 0.5), 1e-10);
    }
    CHECK(prob.run_counters() == before);
    CHECK(prob.eval_counters().gc_g > 0);
}
