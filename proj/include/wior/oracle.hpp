#pragma once

// Problem contracts. A problem exposes per-example first/second-order
// products plus full-batch variants (mean over examples). Every public
// call books per-example evaluation counts into the active ledger:
// grad_f_* -> gc_f, grad_g_y -> gc_g, hvp_g_yy -> hv_g, jvp_g_xy -> jv_g;
// a full-batch call books the dataset size. Conditional problems
// additionally expose the dataset-level mixed product of one inner
// problem (jvp_g_xy_alli), booked as a single product: that is the unit
// the outer update of the double-loop algorithms consumes.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "wior/core.hpp"

namespace wior {

class OracleBase {
  public:
    OracleBase() = default;
    OracleBase(const OracleBase& o) : run_(o.run_), eval_(o.eval_) {}
    OracleBase& operator=(const OracleBase& o) {
        run_ = o.run_;
        eval_ = o.eval_;
        active_ = &run_;
        return *this;
    }
    virtual ~OracleBase() = default;

    OracleCounters run_counters() const { return run_.snapshot(); }
    OracleCounters eval_counters() const { return eval_.snapshot(); }
    bool eval_scope_active() const { return active_ == &eval_; }

    // Redirects counting to the evaluation ledger while alive. Reference
    // hypergradients computed for traces are tallied there, never against
    // the run.
    class ScopedEvalCounters {
      public:
        explicit ScopedEvalCounters(const OracleBase& oracle) : oracle_(oracle) {
            oracle_.active_ = &oracle_.eval_;
        }
        ~ScopedEvalCounters() { oracle_.active_ = &oracle_.run_; }
        ScopedEvalCounters(const ScopedEvalCounters&) = delete;
        ScopedEvalCounters& operator=(const ScopedEvalCounters&) = delete;

      private:
        const OracleBase& oracle_;
    };

  protected:
    CounterLedger& ledger() const { return *active_; }

  private:
    mutable CounterLedger run_;
    mutable CounterLedger eval_;
    mutable CounterLedger* active_ = &run_;
};

// ---------------------------------------------------------------------------
// Standard finite-sum bilevel problem: outer f over m examples, inner g
// over n examples.

class BilevelOracle : public OracleBase {
  public:
    virtual std::size_t p() const = 0;
    virtual std::size_t d() const = 0;
    virtual std::size_t m() const = 0;
    virtual std::size_t n() const = 0;
    virtual const ProblemMeta& meta() const = 0;

    void grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_x(x, y, i, out);
    }
    void grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_y(x, y, i, out);
    }
    void grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t j,
                  std::span<double> out) const {
        ledger().add_gc_g();
        do_grad_g_y(x, y, j, out);
    }
    void hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t j,
                  std::span<const double> v, std::span<double> out) const {
        ledger().add_hv_g();
        do_hvp_g_yy(x, y, j, v, out);
    }
    void jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t j,
                  std::span<const double> v, std::span<double> out) const {
        ledger().add_jv_g();
        do_jvp_g_xy(x, y, j, v, out);
    }

    void grad_f_x_full(std::span<const double> x, std::span<const double> y,
                       std::span<double> out) const {
        ledger().add_gc_f(m());
        do_grad_f_x_full(x, y, out);
    }
    void grad_f_y_full(std::span<const double> x, std::span<const double> y,
                       std::span<double> out) const {
        ledger().add_gc_f(m());
        do_grad_f_y_full(x, y, out);
    }
    void grad_g_y_full(std::span<const double> x, std::span<const double> y,
                       std::span<double> out) const {
        ledger().add_gc_g(n());
        do_grad_g_y_full(x, y, out);
    }
    void hvp_g_yy_full(std::span<const double> x, std::span<const double> y,
                       std::span<const double> v, std::span<double> out) const {
        ledger().add_hv_g(n());
        do_hvp_g_yy_full(x, y, v, out);
    }
    void jvp_g_xy_full(std::span<const double> x, std::span<const double> y,
                       std::span<const double> v, std::span<double> out) const {
        ledger().add_jv_g(n());
        do_jvp_g_xy_full(x, y, v, out);
    }

    virtual bool has_value_f() const { return false; }
    virtual double value_f(std::span<const double> x, std::span<const double> y,
                           std::size_t i) const;
    double value_f_full(std::span<const double> x, std::span<const double> y) const;

  protected:
    virtual void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t j,
                             std::span<double> out) const = 0;
    virtual void do_hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t j,
                             std::span<const double> v, std::span<double> out) const = 0;
    virtual void do_jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t j,
                             std::span<const double> v, std::span<double> out) const = 0;

    // Defaults average the per-example products; problems with cheaper
    // aggregate forms override.
    virtual void do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                                  std::span<double> out) const;
    virtual void do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                                  std::span<double> out) const;
    virtual void do_grad_g_y_full(std::span<const double> x, std::span<const double> y,
                                  std::span<double> out) const;
    virtual void do_hvp_g_yy_full(std::span<const double> x, std::span<const double> y,
                                  std::span<const double> v, std::span<double> out) const;
    virtual void do_jvp_g_xy_full(std::span<const double> x, std::span<const double> y,
                                  std::span<const double> v, std::span<double> out) const;
};

// ---------------------------------------------------------------------------
// Conditional bilevel problem: each outer example i owns an inner dataset
// of size n_i.

class ConditionalOracle : public OracleBase {
  public:
    virtual std::size_t p() const = 0;
    virtual std::size_t d() const = 0;
    virtual std::size_t m() const = 0;
    virtual std::size_t n_i(std::size_t i) const = 0;
    virtual const ProblemMeta& meta() const = 0;

    void grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_x(x, y, i, out);
    }
    void grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_y(x, y, i, out);
    }
    void grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::size_t j, std::span<double> out) const {
        ledger().add_gc_g();
        do_grad_g_y(x, y, i, j, out);
    }
    void hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::size_t j, std::span<const double> v, std::span<double> out) const {
        ledger().add_hv_g();
        do_hvp_g_yy(x, y, i, j, v, out);
    }
    void jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::size_t j, std::span<const double> v, std::span<double> out) const {
        ledger().add_jv_g();
        do_jvp_g_xy(x, y, i, j, v, out);
    }

    // Mixed product of the whole inner problem of example i; one product.
    void jvp_g_xy_alli(std::span<const double> x, std::span<const double> y, std::size_t i,
                       std::span<const double> v, std::span<double> out) const {
        ledger().add_jv_g();
        do_jvp_g_xy_alli(x, y, i, v, out);
    }

    void grad_g_y_i_full(std::span<const double> x, std::span<const double> y, std::size_t i,
                         std::span<double> out) const {
        ledger().add_gc_g(n_i(i));
        do_grad_g_y_i_full(x, y, i, out);
    }
    void hvp_g_yy_i_full(std::span<const double> x, std::span<const double> y, std::size_t i,
                         std::span<const double> v, std::span<double> out) const {
        ledger().add_hv_g(n_i(i));
        do_hvp_g_yy_i_full(x, y, i, v, out);
    }

    virtual bool has_value_f() const { return false; }
    virtual double value_f(std::span<const double> x, std::span<const double> y,
                           std::size_t i) const;

  protected:
    virtual void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::size_t j, std::span<double> out) const = 0;
    virtual void do_hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::size_t j, std::span<const double> v,
                             std::span<double> out) const = 0;
    virtual void do_jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::size_t j, std::span<const double> v,
                             std::span<double> out) const = 0;

    virtual void do_jvp_g_xy_alli(std::span<const double> x, std::span<const double> y,
                                  std::size_t i, std::span<const double> v,
                                  std::span<double> out) const;
    virtual void do_grad_g_y_i_full(std::span<const double> x, std::span<const double> y,
                                    std::size_t i, std::span<double> out) const;
    virtual void do_hvp_g_yy_i_full(std::span<const double> x, std::span<const double> y,
                                    std::size_t i, std::span<const double> v,
                                    std::span<double> out) const;
};

// ---------------------------------------------------------------------------
// Compositional problem: h(x) = mean_i f(mean_j r(x; zeta_j); xi_i). The
// inner map r plays the role of the inner problem (gc_g), its transposed
// Jacobian products are the jv_g column; no Hessian products arise.

class CompositionalOracle : public OracleBase {
  public:
    virtual std::size_t p() const = 0;
    virtual std::size_t d() const = 0;
    virtual std::size_t m() const = 0;
    virtual std::size_t n() const = 0;

    void r(std::span<const double> x, std::size_t j, std::span<double> out) const {
        ledger().add_gc_g();
        do_r(x, j, out);
    }
    void jvp_r(std::span<const double> x, std::size_t j, std::span<const double> v,
               std::span<double> out) const {
        ledger().add_jv_g();
        do_jvp_r(x, j, v, out);
    }
    void grad_f_y(std::span<const double> y, std::size_t i, std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_y(y, i, out);
    }

    void r_full(std::span<const double> x, std::span<double> out) const {
        ledger().add_gc_g(n());
        do_r_full(x, out);
    }
    void jvp_r_full(std::span<const double> x, std::span<const double> v,
                    std::span<double> out) const {
        ledger().add_jv_g(n());
        do_jvp_r_full(x, v, out);
    }
    void grad_f_y_full(std::span<const double> y, std::span<double> out) const {
        ledger().add_gc_f(m());
        do_grad_f_y_full(y, out);
    }

    virtual bool has_value_f() const { return false; }
    virtual double value_f(std::span<const double> y, std::size_t i) const;
    double value_f_full(std::span<const double> y) const;

  protected:
    virtual void do_r(std::span<const double> x, std::size_t j, std::span<double> out) const = 0;
    virtual void do_jvp_r(std::span<const double> x, std::size_t j, std::span<const double> v,
                          std::span<double> out) const = 0;
    virtual void do_grad_f_y(std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;

    virtual void do_r_full(std::span<const double> x, std::span<double> out) const;
    virtual void do_jvp_r_full(std::span<const double> x, std::span<const double> v,
                               std::span<double> out) const;
    virtual void do_grad_f_y_full(std::span<const double> y, std::span<double> out) const;
};

// Conditional compositional problem: per-outer-example inner map sets.
class CondCompositionalOracle : public OracleBase {
  public:
    virtual std::size_t p() const = 0;
    virtual std::size_t d() const = 0;
    virtual std::size_t m() const = 0;
    virtual std::size_t n_i(std::size_t i) const = 0;

    void r(std::span<const double> x, std::size_t i, std::size_t j, std::span<double> out) const {
        ledger().add_gc_g();
        do_r(x, i, j, out);
    }
    void grad_f_y(std::span<const double> y, std::size_t i, std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_y(y, i, out);
    }
    // Transposed Jacobian product of the example-i mean map; one product.
    void jvp_r_alli(std::span<const double> x, std::size_t i, std::span<const double> v,
                    std::span<double> out) const {
        ledger().add_jv_g();
        do_jvp_r_alli(x, i, v, out);
    }
    void r_i_full(std::span<const double> x, std::size_t i, std::span<double> out) const {
        ledger().add_gc_g(n_i(i));
        do_r_i_full(x, i, out);
    }

    virtual bool has_value_f() const { return false; }
    virtual double value_f(std::span<const double> y, std::size_t i) const;

  protected:
    virtual void do_r(std::span<const double> x, std::size_t i, std::size_t j,
                      std::span<double> out) const = 0;
    virtual void do_grad_f_y(std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_jvp_r_alli(std::span<const double> x, std::size_t i,
                               std::span<const double> v, std::span<double> out) const = 0;
    virtual void do_r_i_full(std::span<const double> x, std::size_t i,
                             std::span<double> out) const;
};

// ---------------------------------------------------------------------------
// Minimax problem: h(x) = mean_i max_y f(x, y; xi_i); -f strongly concave
// in y for shipped problems.

class MinimaxOracle : public OracleBase {
  public:
    virtual std::size_t p() const = 0;
    virtual std::size_t d() const = 0;
    virtual std::size_t m() const = 0;
    virtual const ProblemMeta& meta() const = 0;

    void grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_x(x, y, i, out);
    }
    void grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                  std::span<double> out) const {
        ledger().add_gc_f();
        do_grad_f_y(x, y, i, out);
    }
    void grad_f_x_full(std::span<const double> x, std::span<const double> y,
                       std::span<double> out) const {
        ledger().add_gc_f(m());
        do_grad_f_x_full(x, y, out);
    }
    void grad_f_y_full(std::span<const double> x, std::span<const double> y,
                       std::span<double> out) const {
        ledger().add_gc_f(m());
        do_grad_f_y_full(x, y, out);
    }

  protected:
    virtual void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                             std::span<double> out) const = 0;
    virtual void do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                                  std::span<double> out) const;
    virtual void do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                                  std::span<double> out) const;
};

// ---------------------------------------------------------------------------
// Reference operations

constexpr double kReferenceTol = 1e-10;  // acceptance-grade reference solves
constexpr double kTraceTol = 1e-8;       // per-trace reference solves
constexpr std::size_t kDefaultMaxInnerIters = 200'000;

// Full-batch gradient descent on the inner problem with stepsize 1/L until
// ||grad_y g|| <= tol.
std::vector<double> exact_inner_solve(const BilevelOracle& oracle, std::span<const double> x,
                                      double tol, std::size_t max_iters = kDefaultMaxInnerIters);

struct HypergradResult {
    std::vector<double> grad;  // reference hypergradient, length p
    std::vector<double> y;     // inner solution y_x
    std::vector<double> u;     // linear-system solution u_x
};

// Reference hypergradient: inner solve, then conjugate gradient on
// Hessian-vector products for u_x, then the two-term assembly.
HypergradResult exact_hypergradient_full(const BilevelOracle& oracle, std::span<const double> x,
                                         double tol);
std::vector<double> exact_hypergradient(const BilevelOracle& oracle, std::span<const double> x,
                                        double tol);

// Max over coordinates of the relative gap between central differences of
// h and the reference hypergradient.
double fd_check_hypergradient(const BilevelOracle& oracle, std::span<const double> x,
                              double h_step, double inner_tol);

// Conditional counterparts: loop over outer examples and average.
std::vector<double> exact_hypergradient_conditional(const ConditionalOracle& oracle,
                                                    std::span<const double> x, double tol);
double fd_check_hypergradient_conditional(const ConditionalOracle& oracle,
                                          std::span<const double> x, double h_step,
                                          double inner_tol);
// Outer objective value h(x) (requires value_f).
double cond_objective(const ConditionalOracle& oracle, std::span<const double> x, double tol);

// Per-example inner references (y_x^(i), u_x^(i)) for diagnostics.
HypergradResult cond_inner_reference(const ConditionalOracle& oracle, std::span<const double> x,
                                     std::size_t i, double tol);

// Minimax: best response by full-batch ascent, then grad_x at it.
std::vector<double> minimax_best_response(const MinimaxOracle& oracle, std::span<const double> x,
                                          double tol,
                                          std::size_t max_iters = kDefaultMaxInnerIters);
std::vector<double> exact_hypergradient_minimax(const MinimaxOracle& oracle,
                                                std::span<const double> x, double tol);

// Compositional: the inner solution is the mean map itself, no tolerance.
HypergradResult exact_hypergradient_comp(const CompositionalOracle& oracle,
                                         std::span<const double> x);
std::vector<double> exact_hypergradient_ccomp(const CondCompositionalOracle& oracle,
                                              std::span<const double> x);

// Solve H u = b by conjugate gradient where H v is produced by `hvp`.
// Stops at ||residual|| <= tol; reports ill-conditioning when the
// curvature is non-positive or the residual stalls for `dim` iterations.
std::vector<double> cg_solve_hvp(
    const std::function<void(std::span<const double>, std::span<double>)>& hvp,
    std::span<const double> b, double tol, std::size_t dim);

}  // namespace wior
