#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wior {

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A vector handed to the library contains NaN or Inf.
struct NonFiniteError : Error {
    using Error::Error;
};

struct InvalidDatasetError : Error {
    using Error::Error;
};

// lcm(m, n) exceeds the configured cap; coprime sizes must be chosen
// deliberately.
struct EpochTooLongError : Error {
    using Error::Error;
};

// Permutation order requested with a length that is not a multiple of the
// dataset size.
struct AlignmentError : Error {
    using Error::Error;
};

struct NoConvergenceError : Error {
    NoConvergenceError(const std::string& what, double last_residual)
        : Error(what), residual(last_residual) {}
    double residual;
};

struct IllConditioningError : Error {
    using Error::Error;
};

struct UnsupportedProblemError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Domain types

// Solver state for the bilevel updates: outer variable x, inner variable y,
// and the running estimate u of the inverse-Hessian-vector term.
struct IterateBO {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> u;

    static IterateBO zeros(std::size_t p, std::size_t d) {
        return IterateBO{std::vector<double>(p, 0.0), std::vector<double>(d, 0.0),
                         std::vector<double>(d, 0.0)};
    }
};

// Stepsizes for one run. `from_ratios` keeps gamma = c1*eta and
// rho = c2*eta exact by construction.
struct RateConfig {
    double eta = 0.0;
    double gamma = 0.0;
    double rho = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double iota = 0.0;
    bool ratio_mode = false;

    static RateConfig from_rates(double eta, double gamma, double rho, double iota);
    static RateConfig from_ratios(double eta, double c1, double c2, double iota);
};

struct EpochPlan {
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t epoch_len = 0;   // lcm(m, n)
    std::size_t outer_reps = 0;  // epoch_len / m
    std::size_t inner_reps = 0;  // epoch_len / n
};

// Tallies of per-example oracle evaluations, one field per column of the
// complexity accounting: gradients of f, gradients of g, Jacobian-vector
// and Hessian-vector products of g.
struct OracleCounters {
    std::uint64_t gc_f = 0;
    std::uint64_t gc_g = 0;
    std::uint64_t jv_g = 0;
    std::uint64_t hv_g = 0;

    friend bool operator==(const OracleCounters&, const OracleCounters&) = default;
    OracleCounters operator-(const OracleCounters& o) const {
        return {gc_f - o.gc_f, gc_g - o.gc_g, jv_g - o.jv_g, hv_g - o.hv_g};
    }
};

// Monotone accumulator behind OracleCounters; increments are relaxed
// atomics so concurrent oracle evaluation stays safe.
class CounterLedger {
  public:
    CounterLedger() = default;
    CounterLedger(const CounterLedger& o) { *this = o; }
    CounterLedger& operator=(const CounterLedger& o) {
        const OracleCounters c = o.snapshot();
        gc_f_.store(c.gc_f, std::memory_order_relaxed);
        gc_g_.store(c.gc_g, std::memory_order_relaxed);
        jv_g_.store(c.jv_g, std::memory_order_relaxed);
        hv_g_.store(c.hv_g, std::memory_order_relaxed);
        return *this;
    }

    void add_gc_f(std::uint64_t k = 1) { gc_f_.fetch_add(k, std::memory_order_relaxed); }
    void add_gc_g(std::uint64_t k = 1) { gc_g_.fetch_add(k, std::memory_order_relaxed); }
    void add_jv_g(std::uint64_t k = 1) { jv_g_.fetch_add(k, std::memory_order_relaxed); }
    void add_hv_g(std::uint64_t k = 1) { hv_g_.fetch_add(k, std::memory_order_relaxed); }

    OracleCounters snapshot() const {
        return {gc_f_.load(std::memory_order_relaxed), gc_g_.load(std::memory_order_relaxed),
                jv_g_.load(std::memory_order_relaxed), hv_g_.load(std::memory_order_relaxed)};
    }

  private:
    std::atomic<std::uint64_t> gc_f_{0};
    std::atomic<std::uint64_t> gc_g_{0};
    std::atomic<std::uint64_t> jv_g_{0};
    std::atomic<std::uint64_t> hv_g_{0};
};

// Constants of a shipped problem instance: strong-convexity modulus and
// smoothness of the inner problem, bound on the inner gradient of f.
struct ProblemMeta {
    double mu = 0.0;
    double L = 0.0;
    double C_f = 0.0;
    double kappa = 0.0;

    static ProblemMeta make(double mu, double L, double C_f);

    // Radius that provably contains the target of the u-iterate:
    // ||inv(Hessian) * grad_y f|| <= C_f / mu.
    double default_iota() const { return C_f / mu; }
};

// ---------------------------------------------------------------------------
// Operations

bool all_finite(std::span<const double> v);

// Euclidean projection onto the ball of radius iota, in place. Guarantees
// the output norm is <= iota and that re-projecting is an exact no-op.
void project_ball_inplace(std::span<double> u, double iota);
std::vector<double> project_ball(std::vector<double> u, double iota);

constexpr std::size_t kDefaultEpochCap = 1'000'000;

EpochPlan plan_epoch(std::size_t m, std::size_t n, std::size_t cap = kDefaultEpochCap);

}  // namespace wior
