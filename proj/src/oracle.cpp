#include "wior/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "wior/vecops.hpp"

namespace wior {

namespace {

// mean_{k < count} op(k) accumulated into out.
template <typename PerExample>
void mean_over(std::size_t count, std::span<double> out, PerExample&& op) {
    std::vector<double> tmp(out.size());
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < count; ++k) {
        op(k, std::span<double>(tmp));
        vec::axpy(1.0, tmp, out);
    }
    vec::scal(1.0 / static_cast<double>(count), out);
}

}  // namespace

// --- BilevelOracle defaults -------------------------------------------------

double BilevelOracle::value_f(std::span<const double>, std::span<const double>,
                              std::size_t) const {
    throw UnsupportedProblemError("value_f not available for this problem");
}

double BilevelOracle::value_f_full(std::span<const double> x, std::span<const double> y) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < m(); ++i) acc += value_f(x, y, i);
    return acc / static_cast<double>(m());
}

void BilevelOracle::do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                                     std::span<double> out) const {
    mean_over(m(), out, [&](std::size_t i, std::span<double> t) { do_grad_f_x(x, y, i, t); });
}
void BilevelOracle::do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                                     std::span<double> out) const {
    mean_over(m(), out, [&](std::size_t i, std::span<double> t) { do_grad_f_y(x, y, i, t); });
}
void BilevelOracle::do_grad_g_y_full(std::span<const double> x, std::span<const double> y,
                                     std::span<double> out) const {
    mean_over(n(), out, [&](std::size_t j, std::span<double> t) { do_grad_g_y(x, y, j, t); });
}
void BilevelOracle::do_hvp_g_yy_full(std::span<const double> x, std::span<const double> y,
                                     std::span<const double> v, std::span<double> out) const {
    mean_over(n(), out, [&](std::size_t j, std::span<double> t) { do_hvp_g_yy(x, y, j, v, t); });
}
void BilevelOracle::do_jvp_g_xy_full(std::span<const double> x, std::span<const double> y,
                                     std::span<const double> v, std::span<double> out) const {
    mean_over(n(), out, [&](std::size_t j, std::span<double> t) { do_jvp_g_xy(x, y, j, v, t); });
}

// --- ConditionalOracle defaults ----------------------------------------------

double ConditionalOracle::value_f(std::span<const double>, std::span<const double>,
                                  std::size_t) const {
    throw UnsupportedProblemError("value_f not available for this problem");
}

void ConditionalOracle::do_jvp_g_xy_alli(std::span<const double> x, std::span<const double> y,
                                         std::size_t i, std::span<const double> v,
                                         std::span<double> out) const {
    mean_over(n_i(i), out,
              [&](std::size_t j, std::span<double> t) { do_jvp_g_xy(x, y, i, j, v, t); });
}
void ConditionalOracle::do_grad_g_y_i_full(std::span<const double> x, std::span<const double> y,
                                           std::size_t i, std::span<double> out) const {
    mean_over(n_i(i), out,
              [&](std::size_t j, std::span<double> t) { do_grad_g_y(x, y, i, j, t); });
}
void ConditionalOracle::do_hvp_g_yy_i_full(std::span<const double> x, std::span<const double> y,
                                           std::size_t i, std::span<const double> v,
                                           std::span<double> out) const {
    mean_over(n_i(i), out,
              [&](std::size_t j, std::span<double> t) { do_hvp_g_yy(x, y, i, j, v, t); });
}

// --- CompositionalOracle defaults --------------------------------------------

double CompositionalOracle::value_f(std::span<const double>, std::size_t) const {
    throw UnsupportedProblemError("value_f not available for this problem");
}
double CompositionalOracle::value_f_full(std::span<const double> y) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < m(); ++i) acc += value_f(y, i);
    return acc / static_cast<double>(m());
}
void CompositionalOracle::do_r_full(std::span<const double> x, std::span<double> out) const {
    mean_over(n(), out, [&](std::size_t j, std::span<double> t) { do_r(x, j, t); });
}
void CompositionalOracle::do_jvp_r_full(std::span<const double> x, std::span<const double> v,
                                        std::span<double> out) const {
    mean_over(n(), out, [&](std::size_t j, std::span<double> t) { do_jvp_r(x, j, v, t); });
}
void CompositionalOracle::do_grad_f_y_full(std::span<const double> y,
                                           std::span<double> out) const {
    mean_over(m(), out, [&](std::size_t i, std::span<double> t) { do_grad_f_y(y, i, t); });
}

double CondCompositionalOracle::value_f(std::span<const double>, std::size_t) const {
    throw UnsupportedProblemError("value_f not available for this problem");
}
void CondCompositionalOracle::do_r_i_full(std::span<const double> x, std::size_t i,
                                          std::span<double> out) const {
    mean_over(n_i(i), out, [&](std::size_t j, std::span<double> t) { do_r(x, i, j, t); });
}

// --- MinimaxOracle defaults ---------------------------------------------------

void MinimaxOracle::do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                                     std::span<double> out) const {
    mean_over(m(), out, [&](std::size_t i, std::span<double> t) { do_grad_f_x(x, y, i, t); });
}
void MinimaxOracle::do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                                     std::span<double> out) const {
    mean_over(m(), out, [&](std::size_t i, std::span<double> t) { do_grad_f_y(x, y, i, t); });
}

// --- Reference operations ------------------------------------------------------

std::vector<double> cg_solve_hvp(
    const std::function<void(std::span<const double>, std::span<double>)>& hvp,
    std::span<const double> b, double tol, std::size_t dim) {
    std::vector<double> u(dim, 0.0);
    std::vector<double> r(b.begin(), b.end());  // residual b - H*0
    std::vector<double> dir(r);
    std::vector<double> hd(dim);

    double rr = vec::nrm2sq(r);
    double best = std::sqrt(rr);
    if (best <= tol) return u;

    std::size_t since_improve = 0;
    const std::size_t max_iters = std::max<std::size_t>(10 * dim, 100);
    for (std::size_t it = 0; it < max_iters; ++it) {
        hvp(dir, hd);
        const double curv = vec::dot(dir, hd);
        if (!(curv > 0.0))
            throw IllConditioningError("cg_solve_hvp: non-positive curvature (inner Hessian "
                                       "not positive definite)");
        const double alpha = rr / curv;
        vec::axpy(alpha, dir, u);
        vec::axpy(-alpha, hd, r);
        const double rr_next = vec::nrm2sq(r);
        const double res = std::sqrt(rr_next);
        if (res <= tol) return u;
        if (res < best) {
            best = res;
            since_improve = 0;
        } else if (++since_improve >= dim) {
            throw IllConditioningError("cg_solve_hvp: residual stalled at " +
                                       std::to_string(best));
        }
        const double beta = rr_next / rr;
        rr = rr_next;
        for (std::size_t k = 0; k < dim; ++k) dir[k] = r[k] + beta * dir[k];
    }
    throw IllConditioningError("cg_solve_hvp: iteration limit without reaching tolerance");
}

std::vector<double> exact_inner_solve(const BilevelOracle& oracle, std::span<const double> x,
                                      double tol, std::size_t max_iters) {
    const std::size_t d = oracle.d();
    std::vector<double> y(d, 0.0);
    std::vector<double> g(d);
    const double step = 1.0 / oracle.meta().L;
    double res = 0.0;
    for (std::size_t it = 0; it <= max_iters; ++it) {
        oracle.grad_g_y_full(x, y, g);
        res = vec::nrm2(g);
        if (res <= tol) return y;
        if (it == max_iters) break;
        vec::axpy(-step, g, y);
    }
    throw NoConvergenceError("exact_inner_solve: residual " + std::to_string(res) +
                                 " above tol after " + std::to_string(max_iters) + " iterations",
                             res);
}

HypergradResult exact_hypergradient_full(const BilevelOracle& oracle, std::span<const double> x,
                                         double tol) {
    HypergradResult out;
    out.y = exact_inner_solve(oracle, x, tol);

    std::vector<double> rhs(oracle.d());
    oracle.grad_f_y_full(x, out.y, rhs);
    out.u = cg_solve_hvp(
        [&](std::span<const double> v, std::span<double> hv) {
            oracle.hvp_g_yy_full(x, out.y, v, hv);
        },
        rhs, tol, oracle.d());

    out.grad.resize(oracle.p());
    std::vector<double> cross(oracle.p());
    oracle.grad_f_x_full(x, out.y, out.grad);
    oracle.jvp_g_xy_full(x, out.y, out.u, cross);
    vec::axpy(-1.0, cross, out.grad);
    return out;
}

std::vector<double> exact_hypergradient(const BilevelOracle& oracle, std::span<const double> x,
                                        double tol) {
    return exact_hypergradient_full(oracle, x, tol).grad;
}

double fd_check_hypergradient(const BilevelOracle& oracle, std::span<const double> x,
                              double h_step, double inner_tol) {
    if (!oracle.has_value_f())
        throw UnsupportedProblemError("fd_check_hypergradient: problem has no value_f");
    const std::vector<double> grad = exact_hypergradient(oracle, x, inner_tol);

    std::vector<double> xp(x.begin(), x.end());
    auto h_at = [&](std::span<const double> pt) {
        const std::vector<double> y = exact_inner_solve(oracle, pt, inner_tol);
        return oracle.value_f_full(pt, y);
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = xp[k];
        xp[k] = saved + h_step;
        const double hp = h_at(xp);
        xp[k] = saved - h_step;
        const double hm = h_at(xp);
        xp[k] = saved;
        const double fd = (hp - hm) / (2.0 * h_step);
        worst = std::max(worst, std::abs(fd - grad[k]) / (1.0 + std::abs(grad[k])));
    }
    return worst;
}

namespace {

// Inner solve for one conditional example: gradient descent with 1/L.
std::vector<double> cond_inner_solve(const ConditionalOracle& oracle, std::span<const double> x,
                                     std::size_t i, double tol, std::size_t max_iters) {
    const std::size_t d = oracle.d();
    std::vector<double> y(d, 0.0);
    std::vector<double> g(d);
    const double step = 1.0 / oracle.meta().L;
    double res = 0.0;
    for (std::size_t it = 0; it <= max_iters; ++it) {
        oracle.grad_g_y_i_full(x, y, i, g);
        res = vec::nrm2(g);
        if (res <= tol) return y;
        if (it == max_iters) break;
        vec::axpy(-step, g, y);
    }
    throw NoConvergenceError("cond inner solve: residual " + std::to_string(res) +
                                 " above tol for outer example " + std::to_string(i),
                             res);
}

}  // namespace

HypergradResult cond_inner_reference(const ConditionalOracle& oracle, std::span<const double> x,
                                     std::size_t i, double tol) {
    HypergradResult out;
    out.y = cond_inner_solve(oracle, x, i, tol, kDefaultMaxInnerIters);
    std::vector<double> rhs(oracle.d());
    oracle.grad_f_y(x, out.y, i, rhs);
    out.u = cg_solve_hvp(
        [&](std::span<const double> v, std::span<double> hv) {
            oracle.hvp_g_yy_i_full(x, out.y, i, v, hv);
        },
        rhs, tol, oracle.d());
    out.grad.resize(oracle.p());
    std::vector<double> cross(oracle.p());
    oracle.grad_f_x(x, out.y, i, out.grad);
    oracle.jvp_g_xy_alli(x, out.y, i, out.u, cross);
    vec::axpy(-1.0, cross, out.grad);
    return out;
}

std::vector<double> exact_hypergradient_conditional(const ConditionalOracle& oracle,
                                                    std::span<const double> x, double tol) {
    std::vector<double> grad(oracle.p(), 0.0);
    for (std::size_t i = 0; i < oracle.m(); ++i) {
        const HypergradResult per = cond_inner_reference(oracle, x, i, tol);
        vec::axpy(1.0, per.grad, grad);
    }
    vec::scal(1.0 / static_cast<double>(oracle.m()), grad);
    return grad;
}

double cond_objective(const ConditionalOracle& oracle, std::span<const double> x, double tol) {
    if (!oracle.has_value_f())
        throw UnsupportedProblemError("cond_objective: problem has no value_f");
    double acc = 0.0;
    for (std::size_t i = 0; i < oracle.m(); ++i) {
        const std::vector<double> y = cond_inner_solve(oracle, x, i, tol, kDefaultMaxInnerIters);
        acc += oracle.value_f(x, y, i);
    }
    return acc / static_cast<double>(oracle.m());
}

double fd_check_hypergradient_conditional(const ConditionalOracle& oracle,
                                          std::span<const double> x, double h_step,
                                          double inner_tol) {
    if (!oracle.has_value_f())
        throw UnsupportedProblemError("fd_check_hypergradient_conditional: no value_f");
    const std::vector<double> grad = exact_hypergradient_conditional(oracle, x, inner_tol);
    std::vector<double> xp(x.begin(), x.end());
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = xp[k];
        xp[k] = saved + h_step;
        const double hp = cond_objective(oracle, xp, inner_tol);
        xp[k] = saved - h_step;
        const double hm = cond_objective(oracle, xp, inner_tol);
        xp[k] = saved;
        const double fd = (hp - hm) / (2.0 * h_step);
        worst = std::max(worst, std::abs(fd - grad[k]) / (1.0 + std::abs(grad[k])));
    }
    return worst;
}

std::vector<double> minimax_best_response(const MinimaxOracle& oracle, std::span<const double> x,
                                          double tol, std::size_t max_iters) {
    const std::size_t d = oracle.d();
    std::vector<double> y(d, 0.0);
    std::vector<double> g(d);
    const double step = 1.0 / oracle.meta().L;
    double res = 0.0;
    for (std::size_t it = 0; it <= max_iters; ++it) {
        oracle.grad_f_y_full(x, y, g);
        res = vec::nrm2(g);
        if (res <= tol) return y;
        if (it == max_iters) break;
        vec::axpy(step, g, y);  // ascent
    }
    throw NoConvergenceError("minimax_best_response: residual " + std::to_string(res), res);
}

std::vector<double> exact_hypergradient_minimax(const MinimaxOracle& oracle,
                                                std::span<const double> x, double tol) {
    const std::vector<double> y = minimax_best_response(oracle, x, tol);
    std::vector<double> grad(oracle.p());
    oracle.grad_f_x_full(x, y, grad);
    return grad;
}

HypergradResult exact_hypergradient_comp(const CompositionalOracle& oracle,
                                         std::span<const double> x) {
    HypergradResult out;
    out.y.resize(oracle.d());
    oracle.r_full(x, out.y);
    out.u.resize(oracle.d());
    oracle.grad_f_y_full(out.y, out.u);
    out.grad.resize(oracle.p());
    oracle.jvp_r_full(x, out.u, out.grad);
    return out;
}

std::vector<double> exact_hypergradient_ccomp(const CondCompositionalOracle& oracle,
                                              std::span<const double> x) {
    std::vector<double> grad(oracle.p(), 0.0);
    std::vector<double> y(oracle.d());
    std::vector<double> u(oracle.d());
    std::vector<double> gi(oracle.p());
    for (std::size_t i = 0; i < oracle.m(); ++i) {
        oracle.r_i_full(x, i, y);
        oracle.grad_f_y(y, i, u);
        oracle.jvp_r_alli(x, i, u, gi);
        vec::axpy(1.0, gi, grad);
    }
    vec::scal(1.0 / static_cast<double>(oracle.m()), grad);
    return grad;
}

}  // namespace wior
