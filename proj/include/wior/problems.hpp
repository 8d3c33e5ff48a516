#pragma once

// Shipped problem instances. Each problem implements one of the oracle
// contracts with analytic per-example derivatives, and carries closed-form
// references (inner solution map, hypergradient, stationary point) computed
// by direct dense linear algebra, independent of the iterative paths they
// cross-check.
//
// All instances serialize to a plain text format: a header with kind and
// dimensions, then named row-major matrices as decimal text (17 significant
// digits, lossless for doubles).

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "wior/oracle.hpp"

namespace wior {

// ---------------------------------------------------------------------------
// Quadratic bilevel: g_j(x,y) = 1/2 y'A_j y + y'(B_j x + b_j),
// f_i(x,y) = 1/2 ||y - t_i||^2 + lambda_reg/2 ||x||^2.

class QuadraticBilevel final : public BilevelOracle {
  public:
    static QuadraticBilevel from_data(std::size_t p, std::size_t d, std::size_t m, std::size_t n,
                                      std::vector<double> A, std::vector<double> B,
                                      std::vector<double> b, std::vector<double> t,
                                      double lambda_reg);

    std::size_t p() const override { return p_; }
    std::size_t d() const override { return d_; }
    std::size_t m() const override { return m_; }
    std::size_t n() const override { return n_; }
    const ProblemMeta& meta() const override { return meta_; }

    bool has_value_f() const override { return true; }
    double value_f(std::span<const double> x, std::span<const double> y,
                   std::size_t i) const override;

    // Closed forms (dense solves on the mean matrices).
    std::vector<double> y_star(std::span<const double> x) const;
    std::vector<double> u_star(std::span<const double> x) const;
    std::vector<double> hypergrad_closed(std::span<const double> x) const;
    const std::vector<double>& x_star() const { return x_star_; }
    double h_value(std::span<const double> x) const;

    std::span<const double> A_mean() const { return Abar_; }

    void save(std::ostream& os) const;
    static QuadraticBilevel load(std::istream& is);

  protected:
    void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t j,
                     std::span<double> out) const override;
    void do_hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t j,
                     std::span<const double> v, std::span<double> out) const override;
    void do_jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t j,
                     std::span<const double> v, std::span<double> out) const override;
    void do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                          std::span<double> out) const override;
    void do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                          std::span<double> out) const override;
    void do_grad_g_y_full(std::span<const double> x, std::span<const double> y,
                          std::span<double> out) const override;
    void do_hvp_g_yy_full(std::span<const double> x, std::span<const double> y,
                          std::span<const double> v, std::span<double> out) const override;
    void do_jvp_g_xy_full(std::span<const double> x, std::span<const double> y,
                          std::span<const double> v, std::span<double> out) const override;

  private:
    QuadraticBilevel() = default;
    void finalize();

    std::size_t p_ = 0, d_ = 0, m_ = 0, n_ = 0;
    std::vector<double> A_;  // n blocks of d*d, row-major
    std::vector<double> B_;  // n blocks of d*p
    std::vector<double> b_;  // n blocks of d
    std::vector<double> t_;  // m blocks of d
    double lambda_reg_ = 1.0;

    std::vector<double> Abar_, Bbar_, bbar_, tbar_;
    std::vector<double> x_star_;
    ProblemMeta meta_;
};

QuadraticBilevel gen_quadratic_bilevel(std::size_t p, std::size_t d, std::size_t m,
                                       std::size_t n, double kappa_target, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic invariant-risk-minimization task (conditional). Scalar inner
// variable: y is the predicted logit, the inner problem averages
// 1/2 (y - <c_noisy, x>)^2 over the noisy observations of one input.

class SyntheticIRM final : public ConditionalOracle {
  public:
    std::size_t p() const override { return p_; }
    std::size_t d() const override { return 1; }
    std::size_t m() const override { return m_; }
    std::size_t n_i(std::size_t) const override { return n_; }
    const ProblemMeta& meta() const override { return meta_; }

    bool has_value_f() const override { return true; }
    double value_f(std::span<const double> x, std::span<const double> y,
                   std::size_t i) const override;

    double y_star_i(std::span<const double> x, std::size_t i) const;
    std::vector<double> hypergrad_closed(std::span<const double> x) const;
    double h_value(std::span<const double> x) const;

    std::span<const double> ground_truth() const { return x_star_truth_; }
    std::span<const double> input(std::size_t i) const;
    double label(std::size_t i) const { return b_[i]; }
    double sigma() const { return sigma_; }
    double lambda_out() const { return lambda_out_; }

    void save(std::ostream& os) const;
    static SyntheticIRM load(std::istream& is);

  protected:
    void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::size_t j, std::span<double> out) const override;
    void do_hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::size_t j, std::span<const double> v,
                     std::span<double> out) const override;
    void do_jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::size_t j, std::span<const double> v,
                     std::span<double> out) const override;
    void do_jvp_g_xy_alli(std::span<const double> x, std::span<const double> y, std::size_t i,
                          std::span<const double> v, std::span<double> out) const override;
    void do_grad_g_y_i_full(std::span<const double> x, std::span<const double> y, std::size_t i,
                            std::span<double> out) const override;
    void do_hvp_g_yy_i_full(std::span<const double> x, std::span<const double> y, std::size_t i,
                            std::span<const double> v, std::span<double> out) const override;

  private:
    friend SyntheticIRM gen_irm(std::size_t, std::size_t, std::size_t, double, double,
                                std::uint64_t);
    SyntheticIRM() = default;

    std::size_t p_ = 0, m_ = 0, n_ = 0;
    double sigma_ = 0.1, lambda_out_ = 0.1;
    std::vector<double> x_star_truth_;  // p
    std::vector<double> c_;             // m x p inputs
    std::vector<double> b_;             // m labels in {-1,+1}
    std::vector<double> c_noisy_;       // m x n x p observations
    std::vector<double> c_mean_;        // m x p per-input observation means
    ProblemMeta meta_;
};

// Paper-reference defaults: sigma = 0.1, lambda_out = 0.1 (and a learning
// rate of 0.001 was used there; see README).
SyntheticIRM gen_irm(std::size_t m, std::size_t n, std::size_t p, double sigma = 0.1,
                     double lambda_out = 0.1, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Small synthetic data-cleaning task: logistic regression on 2-D Gaussian
// blobs, train labels partly flipped, per-train-example weights as the
// outer variable. Inner loss of example j carries weight x_j
// multiplicatively; L2 strength 1e-3 supplies strong convexity while
// weights stay nonnegative.

class DataCleaningSmall final : public BilevelOracle {
  public:
    std::size_t p() const override { return n_train_; }
    std::size_t d() const override { return kDim; }
    std::size_t m() const override { return n_val_; }
    std::size_t n() const override { return n_train_; }
    const ProblemMeta& meta() const override { return meta_; }

    bool has_value_f() const override { return true; }
    double value_f(std::span<const double> x, std::span<const double> y,
                   std::size_t i) const override;

    // 2 features + bias
    static constexpr std::size_t kDim = 3;

    bool is_corrupted(std::size_t j) const { return corrupted_[j] != 0; }
    std::size_t n_corrupted() const;
    // F1 of "weight below the centered threshold" as corruption detector.
    double detection_f1(std::span<const double> weights) const;

    std::vector<double> uniform_weights() const {
        return std::vector<double>(n_train_, 1.0 / static_cast<double>(n_train_));
    }

    void save(std::ostream& os) const;
    static DataCleaningSmall load(std::istream& is);

  protected:
    void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_g_y(std::span<const double> x, std::span<const double> y, std::size_t j,
                     std::span<double> out) const override;
    void do_hvp_g_yy(std::span<const double> x, std::span<const double> y, std::size_t j,
                     std::span<const double> v, std::span<double> out) const override;
    void do_jvp_g_xy(std::span<const double> x, std::span<const double> y, std::size_t j,
                     std::span<const double> v, std::span<double> out) const override;

  private:
    friend DataCleaningSmall gen_data_cleaning_small(std::size_t, std::size_t, double,
                                                     std::uint64_t);
    DataCleaningSmall() = default;
    void finalize();

    std::size_t n_train_ = 0, n_val_ = 0;
    std::vector<double> train_feat_;  // n_train x kDim (bias column = 1)
    std::vector<double> train_lab_;   // +-1, corrupted
    std::vector<double> val_feat_;    // n_val x kDim
    std::vector<double> val_lab_;
    std::vector<std::uint8_t> corrupted_;
    double lambda_reg_ = 1e-3;
    ProblemMeta meta_;
};

DataCleaningSmall gen_data_cleaning_small(std::size_t n_train = 200, std::size_t n_val = 50,
                                          double corrupt_frac = 0.6, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Quadratic minimax: f_i(x,y) = 1/2 x'P_i x + p_i'x + y'C_i x - 1/2 y'D_i y.
// Shipped instances are convex-strongly-concave with a closed-form saddle.

class QuadMinimax final : public MinimaxOracle {
  public:
    static QuadMinimax from_data(std::size_t p, std::size_t d, std::size_t m,
                                 std::vector<double> P, std::vector<double> q,
                                 std::vector<double> C, std::vector<double> D);

    std::size_t p() const override { return p_; }
    std::size_t d() const override { return d_; }
    std::size_t m() const override { return m_; }
    const ProblemMeta& meta() const override { return meta_; }

    const std::vector<double>& saddle_x() const { return saddle_x_; }
    const std::vector<double>& saddle_y() const { return saddle_y_; }
    std::vector<double> y_star(std::span<const double> x) const;
    std::vector<double> hypergrad_closed(std::span<const double> x) const;

    void save(std::ostream& os) const;
    static QuadMinimax load(std::istream& is);

  protected:
    void do_grad_f_x(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_f_y(std::span<const double> x, std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                          std::span<double> out) const override;
    void do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                          std::span<double> out) const override;

  private:
    QuadMinimax() = default;
    void finalize();

    std::size_t p_ = 0, d_ = 0, m_ = 0;
    std::vector<double> P_;  // m blocks of p*p
    std::vector<double> q_;  // m blocks of p
    std::vector<double> C_;  // m blocks of d*p
    std::vector<double> D_;  // m blocks of d*d
    std::vector<double> Pbar_, qbar_, Cbar_, Dbar_;
    std::vector<double> saddle_x_, saddle_y_;
    ProblemMeta meta_;
};

QuadMinimax gen_quad_minimax(std::size_t p, std::size_t d, std::size_t m, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Linear compositional: r(x; zeta_j) = M_j x + c_j, f(y; xi_i) = 1/2||y-a_i||^2.

class LinearComp final : public CompositionalOracle {
  public:
    std::size_t p() const override { return p_; }
    std::size_t d() const override { return d_; }
    std::size_t m() const override { return m_; }
    std::size_t n() const override { return n_; }

    bool has_value_f() const override { return true; }
    double value_f(std::span<const double> y, std::size_t i) const override;

    const std::vector<double>& x_star() const { return x_star_; }
    std::vector<double> hypergrad_closed(std::span<const double> x) const;

    void save(std::ostream& os) const;
    static LinearComp load(std::istream& is);

  protected:
    void do_r(std::span<const double> x, std::size_t j, std::span<double> out) const override;
    void do_jvp_r(std::span<const double> x, std::size_t j, std::span<const double> v,
                  std::span<double> out) const override;
    void do_grad_f_y(std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_r_full(std::span<const double> x, std::span<double> out) const override;
    void do_jvp_r_full(std::span<const double> x, std::span<const double> v,
                       std::span<double> out) const override;
    void do_grad_f_y_full(std::span<const double> y, std::span<double> out) const override;

  private:
    friend LinearComp gen_linear_comp(std::size_t, std::size_t, std::size_t, std::size_t,
                                      std::uint64_t);
    LinearComp() = default;
    void finalize();

    std::size_t p_ = 0, d_ = 0, m_ = 0, n_ = 0;
    std::vector<double> M_;  // n blocks of d*p
    std::vector<double> c_;  // n blocks of d
    std::vector<double> a_;  // m blocks of d
    std::vector<double> Mbar_, cbar_, abar_;
    std::vector<double> x_star_;
};

LinearComp gen_linear_comp(std::size_t p, std::size_t d, std::size_t m, std::size_t n,
                           std::uint64_t seed);

// Conditional variant: outer example i owns n_i maps M_{i,j} x + c_{i,j}.
class CondLinearComp final : public CondCompositionalOracle {
  public:
    std::size_t p() const override { return p_; }
    std::size_t d() const override { return d_; }
    std::size_t m() const override { return m_; }
    std::size_t n_i(std::size_t) const override { return n_; }

    bool has_value_f() const override { return true; }
    double value_f(std::span<const double> y, std::size_t i) const override;

    const std::vector<double>& x_star() const { return x_star_; }
    std::vector<double> hypergrad_closed(std::span<const double> x) const;

    void save(std::ostream& os) const;
    static CondLinearComp load(std::istream& is);

  protected:
    void do_r(std::span<const double> x, std::size_t i, std::size_t j,
              std::span<double> out) const override;
    void do_grad_f_y(std::span<const double> y, std::size_t i,
                     std::span<double> out) const override;
    void do_jvp_r_alli(std::span<const double> x, std::size_t i, std::span<const double> v,
                       std::span<double> out) const override;
    void do_r_i_full(std::span<const double> x, std::size_t i,
                     std::span<double> out) const override;

  private:
    friend CondLinearComp gen_linear_comp_cond(std::size_t, std::size_t, std::size_t,
                                               std::size_t, std::uint64_t);
    CondLinearComp() = default;
    void finalize();

    std::size_t p_ = 0, d_ = 0, m_ = 0, n_ = 0;
    std::vector<double> M_;  // m x n blocks of d*p
    std::vector<double> c_;  // m x n blocks of d
    std::vector<double> a_;  // m blocks of d
    std::vector<double> Mbar_i_, cbar_i_;  // per-i means
    std::vector<double> x_star_;
};

CondLinearComp gen_linear_comp_cond(std::size_t p, std::size_t d, std::size_t m, std::size_t n,
                                    std::uint64_t seed);

}  // namespace wior
