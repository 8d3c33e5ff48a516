#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "oracle_checks.hpp"
#include "wior/problems.hpp"
#include "wior/vecops.hpp"

using namespace wior;
using namespace wior::testing;

namespace {

// Largest eigenvalue of (shift I - A) by power iteration gives a certified
// estimate of lambda_min(A), independent of the eigensolver used inside the
// problem classes.
double lambda_min_power(std::span<const double> a, std::size_t d, double shift,
                        int iters = 2000) {
    Rng rng(123);
    std::vector<double> v = randn(rng, d);
    std::vector<double> av(d);
    double eig = 0.0;
    for (int it = 0; it < iters; ++it) {
        vec::gemv(a, d, d, v, av);
        for (std::size_t k = 0; k < d; ++k) av[k] = shift * v[k] - av[k];
        const double norm = vec::nrm2(av);
        REQUIRE(norm > 0.0);
        vec::scal(1.0 / norm, av);
        std::swap(v, av);
    }
    vec::gemv(a, d, d, v, av);
    for (std::size_t k = 0; k < d; ++k) av[k] = shift * v[k] - av[k];
    eig = vec::dot(v, av);
    return shift - eig;
}

template <typename P>
std::string save_to_string(const P& prob) {
    std::ostringstream os;
    prob.save(os);
    return os.str();
}

}  // namespace

TEST_CASE("1-D quadratic bilevel closed forms match hand algebra") {
    const QuadraticBilevel prob =
        QuadraticBilevel::from_data(1, 1, 1, 1, {2.0}, {1.0}, {0.0}, {1.0}, 1.0);
    CHECK(prob.x_star()[0] == doctest::Approx(-0.4).epsilon(1e-14));
    CHECK(prob.y_star(prob.x_star())[0] == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(prob.h_value(prob.x_star()) == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("decoupled levels: zero B makes the hypergradient the outer x-gradient") {
    const std::size_t d = 3, p = 2, n = 4, m = 3;
    Rng rng(10);
    std::vector<double> A;
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> Aj = {2, 0, 0, 0, 3, 0, 0, 0, 4};
        A.insert(A.end(), Aj.begin(), Aj.end());
    }
    const std::vector<double> B(n * d * p, 0.0);
    const std::vector<double> b = randn(rng, n * d);
    const std::vector<double> t = randn(rng, m * d);
    const QuadraticBilevel prob = QuadraticBilevel::from_data(p, d, m, n, A, B, b, t, 1.0);

    const std::vector<double> x1 = randn(rng, p);
    const std::vector<double> x2 = randn(rng, p);
    CHECK(prob.y_star(x1) == prob.y_star(x2));  // inner solution constant in x
    std::vector<double> fx(p);
    prob.grad_f_x_full(x1, prob.y_star(x1), fx);
    check_close(prob.hypergrad_closed(x1), fx, 1e-14);
}

TEST_CASE("closed form and cg path agree on the acceptance-size instance") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(10, 10, 32, 32, 10.0, 0);
    Rng rng(77);
    const std::vector<double> x = randn(rng, 10);
    const std::vector<double> closed = prob.hypergrad_closed(x);
    const std::vector<double> iterative = exact_hypergradient(prob, x, 1e-10);
    std::vector<double> diff(10);
    vec::sub(iterative, closed, diff);
    CHECK(vec::nrm2(diff) <= 1e-8 * vec::nrm2(closed));
}

TEST_CASE("reported strong convexity is certified by power iteration") {
    for (std::uint64_t seed : {0, 1, 2}) {
        const QuadraticBilevel prob = gen_quadratic_bilevel(6, 8, 10, 12, 10.0, seed);
        const double lmin = lambda_min_power(prob.A_mean(), 8, prob.meta().L + 1.0);
        CHECK(prob.meta().mu <= lmin + 1e-8);
        CHECK(prob.meta().mu >= 1.0 - 1e-9);  // per-example spectra start at 1
        CHECK(prob.meta().kappa <= 10.0 + 1e-9);
    }
}

TEST_CASE("default projection radius covers the u-path with margin") {
    const QuadraticBilevel prob = gen_quadratic_bilevel(7, 5, 6, 6, 8.0, 13);
    const double iota = prob.meta().default_iota();
    const std::vector<double> x0(7, 0.0);
    CHECK(2.0 * vec::nrm2(prob.u_star(x0)) <= iota);
    CHECK(2.0 * vec::nrm2(prob.u_star(prob.x_star())) <= iota);
}

TEST_CASE("generators are deterministic by seed") {
    CHECK(save_to_string(gen_quadratic_bilevel(4, 5, 6, 7, 9.0, 42)) ==
          save_to_string(gen_quadratic_bilevel(4, 5, 6, 7, 9.0, 42)));
    CHECK(save_to_string(gen_irm(8, 3, 4, 0.1, 0.1, 7)) ==
          save_to_string(gen_irm(8, 3, 4, 0.1, 0.1, 7)));
    CHECK(save_to_string(gen_quad_minimax(3, 4, 5, 11)) ==
          save_to_string(gen_quad_minimax(3, 4, 5, 11)));
    CHECK(save_to_string(gen_linear_comp(3, 5, 4, 6, 19)) ==
          save_to_string(gen_linear_comp(3, 5, 4, 6, 19)));
    CHECK(save_to_string(gen_data_cleaning_small(40, 10, 0.3, 5)) ==
          save_to_string(gen_data_cleaning_small(40, 10, 0.3, 5)));
    // Different seeds change the data.
    CHECK(save_to_string(gen_quadratic_bilevel(4, 5, 6, 7, 9.0, 42)) !=
          save_to_string(gen_quadratic_bilevel(4, 5, 6, 7, 9.0, 43)));
}

TEST_CASE("serialization round-trips byte-exactly") {
    {
        const QuadraticBilevel a = gen_quadratic_bilevel(3, 4, 5, 6, 7.0, 1);
        std::istringstream is(save_to_string(a));
        const QuadraticBilevel b = QuadraticBilevel::load(is);
        CHECK(save_to_string(a) == save_to_string(b));
        CHECK(a.x_star() == b.x_star());
    }
    {
        const SyntheticIRM a = gen_irm(6, 4, 3, 0.2, 0.05, 3);
        std::istringstream is(save_to_string(a));
        const SyntheticIRM b = SyntheticIRM::load(is);
        CHECK(save_to_string(a) == save_to_string(b));
    }
    {
        const QuadMinimax a = gen_quad_minimax(3, 3, 4, 9);
        std::istringstream is(save_to_string(a));
        const QuadMinimax b = QuadMinimax::load(is);
        CHECK(save_to_string(a) == save_to_string(b));
        CHECK(a.saddle_x() == b.saddle_x());
    }
    {
        const LinearComp a = gen_linear_comp(3, 4, 5, 6, 15);
        std::istringstream is(save_to_string(a));
        const LinearComp b = LinearComp::load(is);
        CHECK(save_to_string(a) == save_to_string(b));
    }
    {
        const CondLinearComp a = gen_linear_comp_cond(2, 3, 4, 5, 15);
        std::istringstream is(save_to_string(a));
        const CondLinearComp b = CondLinearComp::load(is);
        CHECK(save_to_string(a) == save_to_string(b));
    }
    {
        const DataCleaningSmall a = gen_data_cleaning_small(30, 8, 0.5, 2);
        std::istringstream is(save_to_string(a));
        const DataCleaningSmall b = DataCleaningSmall::load(is);
        CHECK(save_to_string(a) == save_to_string(b));
    }
    // Kind mismatch is rejected.
    std::istringstream is(save_to_string(gen_linear_comp(3, 4, 5, 6, 15)));
    CHECK_THROWS_AS(QuadraticBilevel::load(is), Error);
}

TEST_CASE("IRM labels are consistent with the ground truth") {
    const SyntheticIRM prob = gen_irm(50, 5, 6, 0.1, 0.1, 4);
    for (std::size_t i = 0; i < prob.m(); ++i)
        CHECK(prob.label(i) * vec::dot(prob.input(i), prob.ground_truth()) > 0.0);
}

TEST_CASE("IRM paper defaults") {
    const SyntheticIRM prob = gen_irm(1000, 100, 3);
    CHECK(prob.m() == 1000);
    CHECK(prob.n_i(0) == 100);
    CHECK(prob.sigma() == 0.1);
    CHECK(prob.lambda_out() == 0.1);
}

TEST_CASE("IRM inner gradient of f is bounded by C_f = 1 everywhere") {
    const SyntheticIRM prob = gen_irm(10, 3, 4, 0.1, 0.1, 8);
    Rng rng(14);
    std::vector<double> g(1);
    for (int rep = 0; rep < 200; ++rep) {
        const std::vector<double> x = randn(rng, 4, 5.0);
        const std::vector<double> y = randn(rng, 1, 5.0);
        prob.grad_f_y(x, y, rng.next_below(10), g);
        CHECK(std::abs(g[0]) <= prob.meta().C_f);
    }
}

TEST_CASE("IRM mean consistency per inner dataset") {
    const SyntheticIRM prob = gen_irm(9, 6, 5, 0.3, 0.1, 21);
    check_mean_consistency_cond(prob, 31);
}

TEST_CASE("data cleaning: corruption bookkeeping and regularization") {
    const DataCleaningSmall prob = gen_data_cleaning_small(200, 50, 0.6, 0);
    CHECK(prob.n_corrupted() == 120);
    CHECK(prob.meta().mu == 1e-3);  // the L2 coefficient supplies strong convexity
    CHECK(prob.p() == 200);
    CHECK(prob.n() == 200);
    CHECK(prob.m() == 50);

    const DataCleaningSmall clean = gen_data_cleaning_small(60, 20, 0.0, 0);
    CHECK(clean.n_corrupted() == 0);
}

TEST_CASE("data cleaning mean consistency and hvp symmetry") {
    const DataCleaningSmall prob = gen_data_cleaning_small(24, 10, 0.25, 3);
    check_mean_consistency(prob, 41, 40);
    check_hvp_symmetry(prob, 42);
}

TEST_CASE("clean data: zeroing any single example never helps materially") {
    const DataCleaningSmall prob = gen_data_cleaning_small(60, 20, 0.0, 1);
    const std::vector<double> uniform = prob.uniform_weights();
    auto val_loss = [&](const std::vector<double>& w) {
        const std::vector<double> y = exact_inner_solve(prob, w, 1e-11);
        return prob.value_f_full(w, y);
    };
    const double base = val_loss(uniform);
    // Finite-sample wiggle: a deleted clean example can shift the loss at
    // the 1e-6 level, so the sanity bound carries a small relative slack.
    for (std::size_t j = 0; j < prob.n(); ++j) {
        std::vector<double> w = uniform;
        w[j] = 0.0;
        CHECK(base <= val_loss(w) + 1e-3 * (1.0 + base));
    }
}

TEST_CASE("corrupted data: zeroing the corrupted examples helps a lot") {
    const DataCleaningSmall prob = gen_data_cleaning_small(80, 30, 0.3, 1);
    auto val_loss = [&](const std::vector<double>& w) {
        const std::vector<double> y = exact_inner_solve(prob, w, 1e-11);
        return prob.value_f_full(w, y);
    };
    const std::vector<double> uniform = prob.uniform_weights();
    std::vector<double> cleaned = uniform;
    for (std::size_t j = 0; j < prob.n(); ++j)
        if (prob.is_corrupted(j)) cleaned[j] = 0.0;
    CHECK(val_loss(cleaned) < 0.8 * val_loss(uniform));
}

TEST_CASE("detection F1 is 1 when weights separate corrupt from clean") {
    const DataCleaningSmall prob = gen_data_cleaning_small(30, 10, 0.4, 6);
    std::vector<double> w(prob.n());
    for (std::size_t j = 0; j < prob.n(); ++j) w[j] = prob.is_corrupted(j) ? -1.0 : 1.0;
    CHECK(prob.detection_f1(w) == doctest::Approx(1.0));
}

TEST_CASE("minimax hand instance: f = xy - y^2/2 has its saddle at the origin") {
    const QuadMinimax prob =
        QuadMinimax::from_data(1, 1, 1, {0.0}, {0.0}, {1.0}, {1.0});
    CHECK(prob.saddle_x()[0] == doctest::Approx(0.0));
    CHECK(prob.saddle_y()[0] == doctest::Approx(0.0));
    CHECK(prob.y_star(std::vector<double>{2.0})[0] == doctest::Approx(2.0));  // y* = x
}

TEST_CASE("minimax with zero coupling keeps the best response at zero") {
    // C_i = 0, D_i = I: y* = 0 for every x.
    const std::size_t p = 2, d = 3, m = 2;
    std::vector<double> P, q, C, D;
    Rng rng(33);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> Pi = {1, 0, 0, 1};
        P.insert(P.end(), Pi.begin(), Pi.end());
        const auto qi = randn(rng, p);
        q.insert(q.end(), qi.begin(), qi.end());
        C.insert(C.end(), d * p, 0.0);
        std::vector<double> Di = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        D.insert(D.end(), Di.begin(), Di.end());
    }
    const QuadMinimax prob = QuadMinimax::from_data(p, d, m, P, q, C, D);
    const std::vector<double> ys = prob.y_star(std::vector<double>{1.0, -2.0});
    CHECK(vec::nrm2(ys) <= 1e-14);
}

TEST_CASE("generated minimax: closed-form saddle zeroes the hypergradient") {
    const QuadMinimax prob = gen_quad_minimax(5, 5, 16, 0);
    CHECK(vec::nrm2(prob.hypergrad_closed(prob.saddle_x())) <= 1e-10);
    // and the reference path agrees
    const std::vector<double> ref =
        exact_hypergradient_minimax(prob, prob.saddle_x(), 1e-11);
    CHECK(vec::nrm2(ref) <= 1e-8);
}

TEST_CASE("linear comp: identity map with zero targets has x* = 0") {
    std::ostringstream os;
    os << "wior-problem 1 linear_comp\np 2\nd 2\nm 1\nn 1\n";
    os << "M 4\n1 0 0 1\nc 2\n0 0\na 2\n0 0\n";
    std::istringstream is(os.str());
    const LinearComp prob = LinearComp::load(is);
    CHECK(vec::nrm2(prob.x_star()) == 0.0);
}

TEST_CASE("generated linear comp: normal-equation solution zeroes the gradient") {
    const LinearComp prob = gen_linear_comp(4, 6, 8, 8, 0);
    CHECK(vec::nrm2(prob.hypergrad_closed(prob.x_star())) <= 1e-10);
    const HypergradResult ref = exact_hypergradient_comp(prob, prob.x_star());
    CHECK(vec::nrm2(ref.grad) <= 1e-10);
}

TEST_CASE("conditional comp with one outer example matches the unconditional problem") {
    const LinearComp flat = gen_linear_comp(3, 4, 1, 5, 23);
    // Rebuild the same data as a conditional instance with m = 1: the data
    // blocks coincide, only the header kind differs.
    std::ostringstream os_flat;
    flat.save(os_flat);
    std::string tokens = os_flat.str();
    const std::string flat_header = "wior-problem 1 linear_comp";
    const std::string cond_header = "wior-problem 1 cond_linear_comp";
    tokens.replace(tokens.find(flat_header), flat_header.size(), cond_header);
    std::istringstream is2(tokens);
    const CondLinearComp cond = CondLinearComp::load(is2);

    CHECK(cond.x_star() == flat.x_star());
    Rng rng(3);
    const std::vector<double> x = randn(rng, 3);
    check_close(cond.hypergrad_closed(x), flat.hypergrad_closed(x), 1e-13);
    check_close(exact_hypergradient_ccomp(cond, x), exact_hypergradient_comp(flat, x).grad,
                1e-12);
}
