#include "wior/problems.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "wior/rng.hpp"
#include "wior/vecops.hpp"

namespace wior {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<const Eigen::VectorXd>;

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

std::vector<double> gaussian(Rng& rng, std::size_t count, double scale = 1.0) {
    std::vector<double> v(count);
    for (double& x : v) x = scale * rng.next_normal();
    return v;
}

RowMat random_orthogonal(Rng& rng, std::size_t d) {
    RowMat g(d, d);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) g(r, c) = rng.next_normal();
    Eigen::HouseholderQR<RowMat> qr(g);
    RowMat q = qr.householderQ() * RowMat::Identity(d, d);
    const Eigen::VectorXd diag = qr.matrixQR().diagonal();
    for (std::size_t k = 0; k < d; ++k)
        if (diag(static_cast<Eigen::Index>(k)) < 0.0) q.col(static_cast<Eigen::Index>(k)) *= -1.0;
    return q;
}

// Symmetric matrix with eigenvalues spanning [lo, hi] exactly.
std::vector<double> spd_with_spectrum(Rng& rng, std::size_t d, double lo, double hi) {
    RowMat q = random_orthogonal(rng, d);
    Eigen::VectorXd evals(d);
    if (d == 1) {
        evals(0) = lo + (hi - lo) * rng.next_double();
    } else {
        evals(0) = lo;
        evals(static_cast<Eigen::Index>(d - 1)) = hi;
        for (std::size_t k = 1; k + 1 < d; ++k)
            evals(static_cast<Eigen::Index>(k)) = lo + (hi - lo) * rng.next_double();
    }
    RowMat a = q * evals.asDiagonal() * q.transpose();
    RowMat sym = 0.5 * (a + RowMat(a.transpose()));
    return std::vector<double>(sym.data(), sym.data() + d * d);
}

void accumulate_mean(std::vector<double>& mean, const std::vector<double>& blocks,
                     std::size_t count, std::size_t block) {
    mean.assign(block, 0.0);
    for (std::size_t k = 0; k < count; ++k)
        vec::axpy(1.0, std::span<const double>(blocks.data() + k * block, block), mean);
    vec::scal(1.0 / static_cast<double>(count), mean);
}

// --- text serialization helpers ---------------------------------------------

void write_header(std::ostream& os, const std::string& kind) {
    os << "wior-problem 1 " << kind << "\n";
    os << std::setprecision(17);
}

void write_size(std::ostream& os, const char* name, std::size_t v) {
    os << name << " " << v << "\n";
}

void write_field(std::ostream& os, const char* name, std::span<const double> v) {
    os << name << " " << v.size() << "\n";
    for (std::size_t k = 0; k < v.size(); ++k) os << v[k] << (k + 1 == v.size() ? "\n" : " ");
    if (v.empty()) os << "\n";
}

struct Reader {
    std::istream& is;

    void expect_header(const std::string& kind) {
        std::string magic, version, got;
        if (!(is >> magic >> version >> got) || magic != "wior-problem" || version != "1")
            throw Error("problem load: bad header");
        if (got != kind) throw Error("problem load: expected kind " + kind + ", got " + got);
    }
    std::size_t read_size(const std::string& name) {
        std::string got;
        std::size_t v = 0;
        if (!(is >> got >> v) || got != name)
            throw Error("problem load: expected size field " + name);
        return v;
    }
    std::vector<double> read_field(const std::string& name) {
        std::string got;
        std::size_t count = 0;
        if (!(is >> got >> count) || got != name)
            throw Error("problem load: expected field " + name);
        std::vector<double> v(count);
        for (double& x : v)
            if (!(is >> x)) throw Error("problem load: truncated field " + name);
        return v;
    }
};

}  // namespace

// ===========================================================================
// QuadraticBilevel

QuadraticBilevel QuadraticBilevel::from_data(std::size_t p, std::size_t d, std::size_t m,
                                             std::size_t n, std::vector<double> A,
                                             std::vector<double> B, std::vector<double> b,
                                             std::vector<double> t, double lambda_reg) {
    if (p == 0 || d == 0 || m == 0 || n == 0)
        throw InvalidDatasetError("QuadraticBilevel: dimensions must be >= 1");
    if (A.size() != n * d * d || B.size() != n * d * p || b.size() != n * d || t.size() != m * d)
        throw InvalidDatasetError("QuadraticBilevel: data sizes do not match dimensions");
    QuadraticBilevel q;
    q.p_ = p;
    q.d_ = d;
    q.m_ = m;
    q.n_ = n;
    q.A_ = std::move(A);
    q.B_ = std::move(B);
    q.b_ = std::move(b);
    q.t_ = std::move(t);
    q.lambda_reg_ = lambda_reg;
    q.finalize();
    return q;
}

void QuadraticBilevel::finalize() {
    accumulate_mean(Abar_, A_, n_, d_ * d_);
    accumulate_mean(Bbar_, B_, n_, d_ * p_);
    accumulate_mean(bbar_, b_, n_, d_);
    accumulate_mean(tbar_, t_, m_, d_);

    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const Eigen::Index p = static_cast<Eigen::Index>(p_);
    MapRM Abar(Abar_.data(), d, d);
    MapRM Bbar(Bbar_.data(), d, p);
    MapVec bbar(bbar_.data(), d);
    MapVec tbar(tbar_.data(), d);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Abar);
    const double mu = es.eigenvalues().minCoeff();
    if (!(mu > 0.0))
        throw IllConditioningError("QuadraticBilevel: mean inner Hessian not positive definite");
    double L = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
        MapRM Aj(A_.data() + j * d_ * d_, d, d);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ej(Aj);
        L = std::max(L, ej.eigenvalues().maxCoeff());
    }

    // Stationary point: (lambda I + B' A^-2 B) x = -B' (A^-2 b + A^-1 t).
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Abar);
    const Eigen::MatrixXd W = ldlt.solve(Bbar);         // A^-1 B
    const Eigen::MatrixXd W2 = ldlt.solve(W);           // A^-2 B
    const Eigen::VectorXd invb = ldlt.solve(bbar);      // A^-1 b
    const Eigen::VectorXd inv2b = ldlt.solve(invb);     // A^-2 b
    const Eigen::VectorXd invt = ldlt.solve(tbar);      // A^-1 t
    Eigen::MatrixXd K = Bbar.transpose() * W2;
    K.diagonal().array() += lambda_reg_;
    const Eigen::VectorXd rhs = -(Bbar.transpose() * (inv2b + invt));
    const Eigen::VectorXd xs = K.llt().solve(rhs);
    x_star_.assign(xs.data(), xs.data() + p_);

    // C_f sized so the default projection radius C_f / mu covers the u_x
    // path with margin across the operating region.
    const Eigen::VectorXd y0 = -invb;
    const Eigen::VectorXd ys = -(W * xs + invb);
    double tmax = 0.0;
    for (std::size_t i = 0; i < m_; ++i)
        tmax = std::max(tmax, MapVec(t_.data() + i * d_, d).norm());
    const double cf =
        tmax + std::max({4.0 * y0.norm(), 4.0 * ys.norm(), 2.0 * tmax, 1.0});
    meta_ = ProblemMeta::make(mu, L, cf);
}

double QuadraticBilevel::value_f(std::span<const double> x, std::span<const double> y,
                                 std::size_t i) const {
    std::vector<double> diff(d_);
    vec::sub(y, std::span<const double>(t_.data() + i * d_, d_), diff);
    return 0.5 * vec::nrm2sq(diff) + 0.5 * lambda_reg_ * vec::nrm2sq(x);
}

void QuadraticBilevel::do_grad_f_x(std::span<const double> x, std::span<const double>,
                                   std::size_t, std::span<double> out) const {
    for (std::size_t k = 0; k < p_; ++k) out[k] = lambda_reg_ * x[k];
}
void QuadraticBilevel::do_grad_f_y(std::span<const double>, std::span<const double> y,
                                   std::size_t i, std::span<double> out) const {
    vec::sub(y, std::span<const double>(t_.data() + i * d_, d_), out);
}
void QuadraticBilevel::do_grad_g_y(std::span<const double> x, std::span<const double> y,
                                   std::size_t j, std::span<double> out) const {
    vec::gemv(std::span<const double>(A_.data() + j * d_ * d_, d_ * d_), d_, d_, y, out);
    std::vector<double> tmp(d_);
    vec::gemv(std::span<const double>(B_.data() + j * d_ * p_, d_ * p_), d_, p_, x, tmp);
    vec::axpy(1.0, tmp, out);
    vec::axpy(1.0, std::span<const double>(b_.data() + j * d_, d_), out);
}
void QuadraticBilevel::do_hvp_g_yy(std::span<const double>, std::span<const double>,
                                   std::size_t j, std::span<const double> v,
                                   std::span<double> out) const {
    vec::gemv(std::span<const double>(A_.data() + j * d_ * d_, d_ * d_), d_, d_, v, out);
}
void QuadraticBilevel::do_jvp_g_xy(std::span<const double>, std::span<const double>,
                                   std::size_t j, std::span<const double> v,
                                   std::span<double> out) const {
    vec::gemv_t(std::span<const double>(B_.data() + j * d_ * p_, d_ * p_), d_, p_, v, out);
}

void QuadraticBilevel::do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                                        std::span<double> out) const {
    do_grad_f_x(x, y, 0, out);  // independent of the example
}
void QuadraticBilevel::do_grad_f_y_full(std::span<const double>, std::span<const double> y,
                                        std::span<double> out) const {
    vec::sub(y, tbar_, out);
}
void QuadraticBilevel::do_grad_g_y_full(std::span<const double> x, std::span<const double> y,
                                        std::span<double> out) const {
    vec::gemv(Abar_, d_, d_, y, out);
    std::vector<double> tmp(d_);
    vec::gemv(Bbar_, d_, p_, x, tmp);
    vec::axpy(1.0, tmp, out);
    vec::axpy(1.0, bbar_, out);
}
void QuadraticBilevel::do_hvp_g_yy_full(std::span<const double>, std::span<const double>,
                                        std::span<const double> v, std::span<double> out) const {
    vec::gemv(Abar_, d_, d_, v, out);
}
void QuadraticBilevel::do_jvp_g_xy_full(std::span<const double>, std::span<const double>,
                                        std::span<const double> v, std::span<double> out) const {
    vec::gemv_t(Bbar_, d_, p_, v, out);
}

std::vector<double> QuadraticBilevel::y_star(std::span<const double> x) const {
    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    MapRM Abar(Abar_.data(), d, d);
    MapRM Bbar(Bbar_.data(), d, static_cast<Eigen::Index>(p_));
    MapVec bbar(bbar_.data(), d);
    MapVec xv(x.data(), static_cast<Eigen::Index>(p_));
    const Eigen::VectorXd ys = -Abar.ldlt().solve(Bbar * xv + bbar);
    return std::vector<double>(ys.data(), ys.data() + d_);
}

std::vector<double> QuadraticBilevel::u_star(std::span<const double> x) const {
    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const std::vector<double> ys = y_star(x);
    MapRM Abar(Abar_.data(), d, d);
    MapVec tbar(tbar_.data(), d);
    MapVec yv(ys.data(), d);
    const Eigen::VectorXd us = Abar.ldlt().solve(yv - tbar);
    return std::vector<double>(us.data(), us.data() + d_);
}

std::vector<double> QuadraticBilevel::hypergrad_closed(std::span<const double> x) const {
    const std::vector<double> us = u_star(x);
    std::vector<double> grad(p_);
    vec::gemv_t(Bbar_, d_, p_, us, grad);
    vec::scal(-1.0, grad);
    vec::axpy(lambda_reg_, x, grad);
    return grad;
}

double QuadraticBilevel::h_value(std::span<const double> x) const {
    const std::vector<double> ys = y_star(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < m_; ++i) acc += value_f(x, ys, i);
    return acc / static_cast<double>(m_);
}

void QuadraticBilevel::save(std::ostream& os) const {
    write_header(os, "quadratic_bilevel");
    write_size(os, "p", p_);
    write_size(os, "d", d_);
    write_size(os, "m", m_);
    write_size(os, "n", n_);
    write_field(os, "lambda_reg", std::span<const double>(&lambda_reg_, 1));
    write_field(os, "A", A_);
    write_field(os, "B", B_);
    write_field(os, "b", b_);
    write_field(os, "t", t_);
}

QuadraticBilevel QuadraticBilevel::load(std::istream& is) {
    Reader r{is};
    r.expect_header("quadratic_bilevel");
    const std::size_t p = r.read_size("p");
    const std::size_t d = r.read_size("d");
    const std::size_t m = r.read_size("m");
    const std::size_t n = r.read_size("n");
    const double lambda = r.read_field("lambda_reg").at(0);
    auto A = r.read_field("A");
    auto B = r.read_field("B");
    auto b = r.read_field("b");
    auto t = r.read_field("t");
    return from_data(p, d, m, n, std::move(A), std::move(B), std::move(b), std::move(t), lambda);
}

QuadraticBilevel gen_quadratic_bilevel(std::size_t p, std::size_t d, std::size_t m,
                                       std::size_t n, double kappa_target, std::uint64_t seed) {
    if (kappa_target < 1.0) throw Error("gen_quadratic_bilevel: kappa_target must be >= 1");
    if (p == 0 || d == 0 || m == 0 || n == 0)
        throw InvalidDatasetError("gen_quadratic_bilevel: dimensions must be >= 1");
    Rng rng(derive_seed(seed, 0x71));
    // Shared structure plus a small per-example spread. The spread is sized
    // so the independent-sampling baseline still converges to tight
    // tolerances within a few hundred desk-scale epochs; the sampling
    // strategies differ in how fast block averages of this spread vanish,
    // which is scale-free.
    const double dev = 0.01;
    const double sn = 1.0 / std::sqrt(static_cast<double>(d));
    const double lo = 1.0 + 2.0 * dev;
    const double hi = std::max(lo, kappa_target - 4.0 * dev);
    const std::vector<double> A0 = spd_with_spectrum(rng, d, lo, hi);
    std::vector<double> A;
    A.reserve(n * d * d);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> Aj = A0;
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = r; c < d; ++c) {
                const double v = dev * sn * rng.next_normal();
                Aj[r * d + c] += v;
                if (c != r) Aj[c * d + r] += v;
            }
        A.insert(A.end(), Aj.begin(), Aj.end());
    }
    const std::vector<double> B0 = gaussian(rng, d * p, 0.8 * sn);
    const std::vector<double> b0 = gaussian(rng, d, 0.6);
    const std::vector<double> t0 = gaussian(rng, d, 0.6);
    std::vector<double> B(n * d * p);
    std::vector<double> b(n * d);
    std::vector<double> t(m * d);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t e = 0; e < d * p; ++e)
            B[j * d * p + e] = B0[e] + dev * sn * rng.next_normal();
        for (std::size_t e = 0; e < d; ++e) b[j * d + e] = b0[e] + dev * rng.next_normal();
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t e = 0; e < d; ++e) t[i * d + e] = t0[e] + dev * rng.next_normal();
    return QuadraticBilevel::from_data(p, d, m, n, std::move(A), std::move(B), std::move(b),
                                       std::move(t), 1.0);
}

// ===========================================================================
// SyntheticIRM

std::span<const double> SyntheticIRM::input(std::size_t i) const {
    return std::span<const double>(c_.data() + i * p_, p_);
}

double SyntheticIRM::value_f(std::span<const double> x, std::span<const double> y,
                             std::size_t i) const {
    return softplus(-b_[i] * y[0]) + 0.5 * lambda_out_ * vec::nrm2sq(x);
}

void SyntheticIRM::do_grad_f_x(std::span<const double> x, std::span<const double>, std::size_t,
                               std::span<double> out) const {
    for (std::size_t k = 0; k < p_; ++k) out[k] = lambda_out_ * x[k];
}
void SyntheticIRM::do_grad_f_y(std::span<const double>, std::span<const double> y, std::size_t i,
                               std::span<double> out) const {
    out[0] = -b_[i] * sigmoid(-b_[i] * y[0]);
}
void SyntheticIRM::do_grad_g_y(std::span<const double> x, std::span<const double> y,
                               std::size_t i, std::size_t j, std::span<double> out) const {
    const std::span<const double> c(c_noisy_.data() + (i * n_ + j) * p_, p_);
    out[0] = y[0] - vec::dot(c, x);
}
void SyntheticIRM::do_hvp_g_yy(std::span<const double>, std::span<const double>, std::size_t,
                               std::size_t, std::span<const double> v,
                               std::span<double> out) const {
    out[0] = v[0];
}
void SyntheticIRM::do_jvp_g_xy(std::span<const double>, std::span<const double>, std::size_t i,
                               std::size_t j, std::span<const double> v,
                               std::span<double> out) const {
    const double* c = c_noisy_.data() + (i * n_ + j) * p_;
    for (std::size_t k = 0; k < p_; ++k) out[k] = -v[0] * c[k];
}
void SyntheticIRM::do_jvp_g_xy_alli(std::span<const double>, std::span<const double>,
                                    std::size_t i, std::span<const double> v,
                                    std::span<double> out) const {
    const double* c = c_mean_.data() + i * p_;
    for (std::size_t k = 0; k < p_; ++k) out[k] = -v[0] * c[k];
}
void SyntheticIRM::do_grad_g_y_i_full(std::span<const double> x, std::span<const double> y,
                                      std::size_t i, std::span<double> out) const {
    out[0] = y[0] - vec::dot(std::span<const double>(c_mean_.data() + i * p_, p_), x);
}
void SyntheticIRM::do_hvp_g_yy_i_full(std::span<const double>, std::span<const double>,
                                      std::size_t, std::span<const double> v,
                                      std::span<double> out) const {
    out[0] = v[0];
}

double SyntheticIRM::y_star_i(std::span<const double> x, std::size_t i) const {
    return vec::dot(std::span<const double>(c_mean_.data() + i * p_, p_), x);
}

std::vector<double> SyntheticIRM::hypergrad_closed(std::span<const double> x) const {
    std::vector<double> grad(p_);
    for (std::size_t k = 0; k < p_; ++k) grad[k] = lambda_out_ * x[k];
    for (std::size_t i = 0; i < m_; ++i) {
        const double yi = y_star_i(x, i);
        const double ui = -b_[i] * sigmoid(-b_[i] * yi);
        vec::axpy(ui / static_cast<double>(m_),
                  std::span<const double>(c_mean_.data() + i * p_, p_), grad);
    }
    return grad;
}

double SyntheticIRM::h_value(std::span<const double> x) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < m_; ++i) acc += softplus(-b_[i] * y_star_i(x, i));
    return acc / static_cast<double>(m_) + 0.5 * lambda_out_ * vec::nrm2sq(x);
}

void SyntheticIRM::save(std::ostream& os) const {
    write_header(os, "synthetic_irm");
    write_size(os, "p", p_);
    write_size(os, "m", m_);
    write_size(os, "n", n_);
    const double params[2] = {sigma_, lambda_out_};
    write_field(os, "params", params);
    write_field(os, "x_truth", x_star_truth_);
    write_field(os, "c", c_);
    write_field(os, "b", b_);
    write_field(os, "c_noisy", c_noisy_);
}

SyntheticIRM SyntheticIRM::load(std::istream& is) {
    Reader r{is};
    r.expect_header("synthetic_irm");
    SyntheticIRM q;
    q.p_ = r.read_size("p");
    q.m_ = r.read_size("m");
    q.n_ = r.read_size("n");
    const auto params = r.read_field("params");
    q.sigma_ = params.at(0);
    q.lambda_out_ = params.at(1);
    q.x_star_truth_ = r.read_field("x_truth");
    q.c_ = r.read_field("c");
    q.b_ = r.read_field("b");
    q.c_noisy_ = r.read_field("c_noisy");
    q.c_mean_.assign(q.m_ * q.p_, 0.0);
    for (std::size_t i = 0; i < q.m_; ++i) {
        std::span<double> mean(q.c_mean_.data() + i * q.p_, q.p_);
        for (std::size_t j = 0; j < q.n_; ++j)
            vec::axpy(1.0, std::span<const double>(q.c_noisy_.data() + (i * q.n_ + j) * q.p_, q.p_),
                      mean);
        vec::scal(1.0 / static_cast<double>(q.n_), mean);
    }
    q.meta_ = ProblemMeta::make(1.0, 1.0, 1.0);
    return q;
}

SyntheticIRM gen_irm(std::size_t m, std::size_t n, std::size_t p, double sigma,
                     double lambda_out, std::uint64_t seed) {
    if (m == 0 || n == 0 || p == 0) throw InvalidDatasetError("gen_irm: sizes must be >= 1");
    if (sigma < 0.0) throw Error("gen_irm: sigma must be >= 0");
    SyntheticIRM q;
    q.p_ = p;
    q.m_ = m;
    q.n_ = n;
    q.sigma_ = sigma;
    q.lambda_out_ = lambda_out;
    Rng rng(derive_seed(seed, 0x17));
    q.x_star_truth_ = gaussian(rng, p);
    q.c_ = gaussian(rng, m * p);
    q.b_.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        double margin = vec::dot(q.input(i), q.x_star_truth_);
        while (margin == 0.0) {  // re-draw a degenerate input
            for (std::size_t k = 0; k < p; ++k) q.c_[i * p + k] = rng.next_normal();
            margin = vec::dot(q.input(i), q.x_star_truth_);
        }
        q.b_[i] = margin > 0.0 ? 1.0 : -1.0;
    }
    q.c_noisy_.resize(m * n * p);
    q.c_mean_.assign(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        std::span<double> mean(q.c_mean_.data() + i * p, p);
        for (std::size_t j = 0; j < n; ++j) {
            double* cn = q.c_noisy_.data() + (i * n + j) * p;
            for (std::size_t k = 0; k < p; ++k) cn[k] = q.c_[i * p + k] + sigma * rng.next_normal();
            vec::axpy(1.0, std::span<const double>(cn, p), mean);
        }
        vec::scal(1.0 / static_cast<double>(n), mean);
    }
    // Inner problem is an exact quadratic with unit Hessian; the outer
    // gradient in y is a logistic derivative, bounded by 1.
    q.meta_ = ProblemMeta::make(1.0, 1.0, 1.0);
    return q;
}

// ===========================================================================
// DataCleaningSmall

namespace {
struct LogisticParts {
    double s;       // sigmoid(-label * z)
    double z;       // <a, y>
};
LogisticParts logistic_parts(std::span<const double> a, double label,
                             std::span<const double> y) {
    const double z = vec::dot(a, y);
    return {sigmoid(-label * z), z};
}
}  // namespace

double DataCleaningSmall::value_f(std::span<const double>, std::span<const double> y,
                                  std::size_t i) const {
    const std::span<const double> a(val_feat_.data() + i * kDim, kDim);
    return softplus(-val_lab_[i] * vec::dot(a, y));
}

void DataCleaningSmall::do_grad_f_x(std::span<const double>, std::span<const double>,
                                    std::size_t, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
}
void DataCleaningSmall::do_grad_f_y(std::span<const double>, std::span<const double> y,
                                    std::size_t i, std::span<double> out) const {
    const std::span<const double> a(val_feat_.data() + i * kDim, kDim);
    const auto parts = logistic_parts(a, val_lab_[i], y);
    const double coef = -val_lab_[i] * parts.s;
    for (std::size_t k = 0; k < kDim; ++k) out[k] = coef * a[k];
}
void DataCleaningSmall::do_grad_g_y(std::span<const double> x, std::span<const double> y,
                                    std::size_t j, std::span<double> out) const {
    const std::span<const double> a(train_feat_.data() + j * kDim, kDim);
    const auto parts = logistic_parts(a, train_lab_[j], y);
    const double coef = static_cast<double>(n_train_) * x[j] * (-train_lab_[j] * parts.s);
    for (std::size_t k = 0; k < kDim; ++k) out[k] = coef * a[k] + lambda_reg_ * y[k];
}
void DataCleaningSmall::do_hvp_g_yy(std::span<const double> x, std::span<const double> y,
                                    std::size_t j, std::span<const double> v,
                                    std::span<double> out) const {
    const std::span<const double> a(train_feat_.data() + j * kDim, kDim);
    const auto parts = logistic_parts(a, train_lab_[j], y);
    const double coef =
        static_cast<double>(n_train_) * x[j] * parts.s * (1.0 - parts.s) * vec::dot(a, v);
    for (std::size_t k = 0; k < kDim; ++k) out[k] = coef * a[k] + lambda_reg_ * v[k];
}
void DataCleaningSmall::do_jvp_g_xy(std::span<const double>, std::span<const double> y,
                                    std::size_t j, std::span<const double> v,
                                    std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const std::span<const double> a(train_feat_.data() + j * kDim, kDim);
    const auto parts = logistic_parts(a, train_lab_[j], y);
    const double coef = -train_lab_[j] * parts.s;
    double acc = 0.0;
    for (std::size_t k = 0; k < kDim; ++k) acc += coef * a[k] * v[k];
    out[j] = static_cast<double>(n_train_) * acc;
}

std::size_t DataCleaningSmall::n_corrupted() const {
    std::size_t c = 0;
    for (auto f : corrupted_) c += f;
    return c;
}

double DataCleaningSmall::detection_f1(std::span<const double> weights) const {
    double mean = 0.0;
    for (double w : weights) mean += w;
    mean /= static_cast<double>(weights.size());
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t j = 0; j < n_train_; ++j) {
        const bool flagged = weights[j] - mean < 0.0;
        if (flagged && corrupted_[j]) ++tp;
        if (flagged && !corrupted_[j]) ++fp;
        if (!flagged && corrupted_[j]) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

void DataCleaningSmall::finalize() {
    double amax2 = 0.0;
    for (std::size_t j = 0; j < n_train_; ++j)
        amax2 = std::max(amax2,
                         vec::nrm2sq(std::span<const double>(train_feat_.data() + j * kDim, kDim)));
    double cmax = 0.0;
    for (std::size_t i = 0; i < n_val_; ++i)
        cmax = std::max(cmax,
                        vec::nrm2(std::span<const double>(val_feat_.data() + i * kDim, kDim)));
    // Smoothness valid while every weight stays within [0, 2/n_train]; the
    // shipped configs start at uniform 1/n and move slowly. The logistic
    // curvature factor s(1-s) <= 1/4 gives 2/n * n * 1/4 = 1/2 per example.
    meta_ = ProblemMeta::make(lambda_reg_, lambda_reg_ + 0.5 * amax2, cmax);
}

void DataCleaningSmall::save(std::ostream& os) const {
    write_header(os, "data_cleaning_small");
    write_size(os, "n_train", n_train_);
    write_size(os, "n_val", n_val_);
    write_field(os, "lambda_reg", std::span<const double>(&lambda_reg_, 1));
    write_field(os, "train_feat", train_feat_);
    write_field(os, "train_lab", train_lab_);
    write_field(os, "val_feat", val_feat_);
    write_field(os, "val_lab", val_lab_);
    std::vector<double> mask(corrupted_.begin(), corrupted_.end());
    write_field(os, "corrupted", mask);
}

DataCleaningSmall DataCleaningSmall::load(std::istream& is) {
    Reader r{is};
    r.expect_header("data_cleaning_small");
    DataCleaningSmall q;
    q.n_train_ = r.read_size("n_train");
    q.n_val_ = r.read_size("n_val");
    q.lambda_reg_ = r.read_field("lambda_reg").at(0);
    q.train_feat_ = r.read_field("train_feat");
    q.train_lab_ = r.read_field("train_lab");
    q.val_feat_ = r.read_field("val_feat");
    q.val_lab_ = r.read_field("val_lab");
    const auto mask = r.read_field("corrupted");
    q.corrupted_.assign(mask.begin(), mask.end());
    q.finalize();
    return q;
}

DataCleaningSmall gen_data_cleaning_small(std::size_t n_train, std::size_t n_val,
                                          double corrupt_frac, std::uint64_t seed) {
    if (n_train == 0 || n_val == 0)
        throw InvalidDatasetError("gen_data_cleaning_small: sizes must be >= 1");
    if (corrupt_frac < 0.0 || corrupt_frac > 1.0)
        throw Error("gen_data_cleaning_small: corrupt_frac must be in [0, 1]");

    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(derive_seed(seed, 0x2d + attempt));
        DataCleaningSmall q;
        q.n_train_ = n_train;
        q.n_val_ = n_val;
        q.train_feat_.resize(n_train * DataCleaningSmall::kDim);
        q.train_lab_.resize(n_train);
        q.val_feat_.resize(n_val * DataCleaningSmall::kDim);
        q.val_lab_.resize(n_val);
        q.corrupted_.assign(n_train, 0);

        // Blob points normalized to the unit circle keep the logistic
        // curvature (and with it the inner condition number at lambda=1e-3)
        // small enough for the plain 1/L reference solver.
        auto fill_blob = [&](double* feat, double* lab, std::size_t count) {
            bool saw_pos = false, saw_neg = false;
            for (std::size_t k = 0; k < count; ++k) {
                const double cls = rng.next_double() < 0.5 ? -1.0 : 1.0;
                const double f0 = 2.0 * cls + 0.7 * rng.next_normal();
                const double f1 = 2.0 * cls + 0.7 * rng.next_normal();
                const double norm = std::sqrt(f0 * f0 + f1 * f1);
                feat[k * 3 + 0] = f0 / norm;
                feat[k * 3 + 1] = f1 / norm;
                feat[k * 3 + 2] = 0.5;  // bias
                lab[k] = cls;
                (cls > 0 ? saw_pos : saw_neg) = true;
            }
            return saw_pos && saw_neg;
        };
        const bool tr_ok = fill_blob(q.train_feat_.data(), q.train_lab_.data(), n_train);
        const bool va_ok = fill_blob(q.val_feat_.data(), q.val_lab_.data(), n_val);
        if (!tr_ok || !va_ok) continue;  // degenerate single-class draw

        std::vector<std::uint32_t> idx(n_train);
        for (std::size_t k = 0; k < n_train; ++k) idx[k] = static_cast<std::uint32_t>(k);
        rng.shuffle(idx);
        const std::size_t n_corrupt = static_cast<std::size_t>(
            corrupt_frac * static_cast<double>(n_train));
        for (std::size_t k = 0; k < n_corrupt; ++k) {
            q.train_lab_[idx[k]] = -q.train_lab_[idx[k]];
            q.corrupted_[idx[k]] = 1;
        }
        q.finalize();
        return q;
    }
}

// ===========================================================================
// QuadMinimax

QuadMinimax QuadMinimax::from_data(std::size_t p, std::size_t d, std::size_t m,
                                   std::vector<double> P, std::vector<double> q,
                                   std::vector<double> C, std::vector<double> D) {
    if (p == 0 || d == 0 || m == 0)
        throw InvalidDatasetError("QuadMinimax: dimensions must be >= 1");
    if (P.size() != m * p * p || q.size() != m * p || C.size() != m * d * p ||
        D.size() != m * d * d)
        throw InvalidDatasetError("QuadMinimax: data sizes do not match dimensions");
    QuadMinimax mm;
    mm.p_ = p;
    mm.d_ = d;
    mm.m_ = m;
    mm.P_ = std::move(P);
    mm.q_ = std::move(q);
    mm.C_ = std::move(C);
    mm.D_ = std::move(D);
    mm.finalize();
    return mm;
}

void QuadMinimax::finalize() {
    accumulate_mean(Pbar_, P_, m_, p_ * p_);
    accumulate_mean(qbar_, q_, m_, p_);
    accumulate_mean(Cbar_, C_, m_, d_ * p_);
    accumulate_mean(Dbar_, D_, m_, d_ * d_);

    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const Eigen::Index p = static_cast<Eigen::Index>(p_);
    MapRM Dbar(Dbar_.data(), d, d);
    MapRM Cbar(Cbar_.data(), d, p);
    MapRM Pbar(Pbar_.data(), p, p);
    MapVec qbar(qbar_.data(), p);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Dbar);
    const double mu = es.eigenvalues().minCoeff();
    if (!(mu > 0.0))
        throw IllConditioningError("QuadMinimax: mean D not positive definite");
    double L = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
        MapRM Di(D_.data() + i * d_ * d_, d, d);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(Di);
        L = std::max(L, ei.eigenvalues().maxCoeff());
    }
    meta_ = ProblemMeta::make(mu, L, 1.0);  // C_f unused: no u-iterate here

    // Saddle: y = D^-1 C x, (P + C' D^-1 C) x = -q.
    Eigen::LDLT<Eigen::MatrixXd> dldlt(Dbar);
    const Eigen::MatrixXd DinvC = dldlt.solve(Cbar);
    Eigen::MatrixXd K = Pbar + Cbar.transpose() * DinvC;
    const Eigen::VectorXd xs = K.ldlt().solve(-qbar);
    const Eigen::VectorXd ys = DinvC * xs;
    saddle_x_.assign(xs.data(), xs.data() + p_);
    saddle_y_.assign(ys.data(), ys.data() + d_);
}

void QuadMinimax::do_grad_f_x(std::span<const double> x, std::span<const double> y,
                              std::size_t i, std::span<double> out) const {
    vec::gemv(std::span<const double>(P_.data() + i * p_ * p_, p_ * p_), p_, p_, x, out);
    vec::axpy(1.0, std::span<const double>(q_.data() + i * p_, p_), out);
    std::vector<double> tmp(p_);
    vec::gemv_t(std::span<const double>(C_.data() + i * d_ * p_, d_ * p_), d_, p_, y, tmp);
    vec::axpy(1.0, tmp, out);
}
void QuadMinimax::do_grad_f_y(std::span<const double> x, std::span<const double> y,
                              std::size_t i, std::span<double> out) const {
    vec::gemv(std::span<const double>(C_.data() + i * d_ * p_, d_ * p_), d_, p_, x, out);
    std::vector<double> tmp(d_);
    vec::gemv(std::span<const double>(D_.data() + i * d_ * d_, d_ * d_), d_, d_, y, tmp);
    vec::axpy(-1.0, tmp, out);
}
void QuadMinimax::do_grad_f_x_full(std::span<const double> x, std::span<const double> y,
                                   std::span<double> out) const {
    vec::gemv(Pbar_, p_, p_, x, out);
    vec::axpy(1.0, qbar_, out);
    std::vector<double> tmp(p_);
    vec::gemv_t(Cbar_, d_, p_, y, tmp);
    vec::axpy(1.0, tmp, out);
}
void QuadMinimax::do_grad_f_y_full(std::span<const double> x, std::span<const double> y,
                                   std::span<double> out) const {
    vec::gemv(Cbar_, d_, p_, x, out);
    std::vector<double> tmp(d_);
    vec::gemv(Dbar_, d_, d_, y, tmp);
    vec::axpy(-1.0, tmp, out);
}

std::vector<double> QuadMinimax::y_star(std::span<const double> x) const {
    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    MapRM Dbar(Dbar_.data(), d, d);
    MapRM Cbar(Cbar_.data(), d, static_cast<Eigen::Index>(p_));
    MapVec xv(x.data(), static_cast<Eigen::Index>(p_));
    const Eigen::VectorXd ys = Dbar.ldlt().solve(Cbar * xv);
    return std::vector<double>(ys.data(), ys.data() + d_);
}

std::vector<double> QuadMinimax::hypergrad_closed(std::span<const double> x) const {
    const std::vector<double> ys = y_star(x);
    std::vector<double> grad(p_);
    do_grad_f_x_full(x, ys, grad);
    return grad;
}

void QuadMinimax::save(std::ostream& os) const {
    write_header(os, "quad_minimax");
    write_size(os, "p", p_);
    write_size(os, "d", d_);
    write_size(os, "m", m_);
    write_field(os, "P", P_);
    write_field(os, "q", q_);
    write_field(os, "C", C_);
    write_field(os, "D", D_);
}

QuadMinimax QuadMinimax::load(std::istream& is) {
    Reader r{is};
    r.expect_header("quad_minimax");
    const std::size_t p = r.read_size("p");
    const std::size_t d = r.read_size("d");
    const std::size_t m = r.read_size("m");
    auto P = r.read_field("P");
    auto q = r.read_field("q");
    auto C = r.read_field("C");
    auto D = r.read_field("D");
    return from_data(p, d, m, std::move(P), std::move(q), std::move(C), std::move(D));
}

QuadMinimax gen_quad_minimax(std::size_t p, std::size_t d, std::size_t m, std::uint64_t seed) {
    if (p == 0 || d == 0 || m == 0)
        throw InvalidDatasetError("gen_quad_minimax: dimensions must be >= 1");
    Rng rng(derive_seed(seed, 0x3b));
    // Shared structure, small per-example spread (see gen_quadratic_bilevel).
    const double dev = 0.01;
    const double sn = 1.0 / std::sqrt(static_cast<double>(std::max(p, d)));
    const std::vector<double> P0 = spd_with_spectrum(rng, p, 0.5 + 2.0 * dev, 2.0 - 2.0 * dev);
    const std::vector<double> D0 = spd_with_spectrum(rng, d, 1.0 + 2.0 * dev, 2.0 - 2.0 * dev);
    const std::vector<double> q0 = gaussian(rng, p);
    const std::vector<double> C0 = gaussian(rng, d * p, 0.8 * sn);

    auto sym_perturb = [&](std::vector<double> base, std::size_t dim) {
        for (std::size_t r = 0; r < dim; ++r)
            for (std::size_t c = r; c < dim; ++c) {
                const double v = dev * sn * rng.next_normal();
                base[r * dim + c] += v;
                if (c != r) base[c * dim + r] += v;
            }
        return base;
    };

    std::vector<double> P, D, q, C;
    for (std::size_t i = 0; i < m; ++i) {
        const auto Pi = sym_perturb(P0, p);
        P.insert(P.end(), Pi.begin(), Pi.end());
        const auto Di = sym_perturb(D0, d);
        D.insert(D.end(), Di.begin(), Di.end());
        for (double v : q0) q.push_back(v + dev * rng.next_normal());
        for (double v : C0) C.push_back(v + dev * sn * rng.next_normal());
    }
    return QuadMinimax::from_data(p, d, m, std::move(P), std::move(q), std::move(C),
                                  std::move(D));
}

// ===========================================================================
// LinearComp

double LinearComp::value_f(std::span<const double> y, std::size_t i) const {
    std::vector<double> diff(d_);
    vec::sub(y, std::span<const double>(a_.data() + i * d_, d_), diff);
    return 0.5 * vec::nrm2sq(diff);
}

void LinearComp::do_r(std::span<const double> x, std::size_t j, std::span<double> out) const {
    vec::gemv(std::span<const double>(M_.data() + j * d_ * p_, d_ * p_), d_, p_, x, out);
    vec::axpy(1.0, std::span<const double>(c_.data() + j * d_, d_), out);
}
void LinearComp::do_jvp_r(std::span<const double>, std::size_t j, std::span<const double> v,
                          std::span<double> out) const {
    vec::gemv_t(std::span<const double>(M_.data() + j * d_ * p_, d_ * p_), d_, p_, v, out);
}
void LinearComp::do_grad_f_y(std::span<const double> y, std::size_t i,
                             std::span<double> out) const {
    vec::sub(y, std::span<const double>(a_.data() + i * d_, d_), out);
}
void LinearComp::do_r_full(std::span<const double> x, std::span<double> out) const {
    vec::gemv(Mbar_, d_, p_, x, out);
    vec::axpy(1.0, cbar_, out);
}
void LinearComp::do_jvp_r_full(std::span<const double>, std::span<const double> v,
                               std::span<double> out) const {
    vec::gemv_t(Mbar_, d_, p_, v, out);
}
void LinearComp::do_grad_f_y_full(std::span<const double> y, std::span<double> out) const {
    vec::sub(y, abar_, out);
}

std::vector<double> LinearComp::hypergrad_closed(std::span<const double> x) const {
    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const Eigen::Index p = static_cast<Eigen::Index>(p_);
    MapRM Mbar(Mbar_.data(), d, p);
    MapVec cbar(cbar_.data(), d);
    MapVec abar(abar_.data(), d);
    MapVec xv(x.data(), p);
    const Eigen::VectorXd g = Mbar.transpose() * (Mbar * xv + cbar - abar);
    return std::vector<double>(g.data(), g.data() + p_);
}

void LinearComp::finalize() {
    accumulate_mean(Mbar_, M_, n_, d_ * p_);
    accumulate_mean(cbar_, c_, n_, d_);
    accumulate_mean(abar_, a_, m_, d_);
    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const Eigen::Index p = static_cast<Eigen::Index>(p_);
    MapRM Mbar(Mbar_.data(), d, p);
    const Eigen::MatrixXd gram = Mbar.transpose() * Mbar;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (!(es.eigenvalues().minCoeff() > 1e-9))
        throw IllConditioningError("LinearComp: mean map is column-rank deficient");
    MapVec cbar(cbar_.data(), d);
    MapVec abar(abar_.data(), d);
    const Eigen::VectorXd xs = gram.llt().solve(Mbar.transpose() * (abar - cbar));
    x_star_.assign(xs.data(), xs.data() + p_);
}

void LinearComp::save(std::ostream& os) const {
    write_header(os, "linear_comp");
    write_size(os, "p", p_);
    write_size(os, "d", d_);
    write_size(os, "m", m_);
    write_size(os, "n", n_);
    write_field(os, "M", M_);
    write_field(os, "c", c_);
    write_field(os, "a", a_);
}

LinearComp LinearComp::load(std::istream& is) {
    Reader r{is};
    r.expect_header("linear_comp");
    LinearComp q;
    q.p_ = r.read_size("p");
    q.d_ = r.read_size("d");
    q.m_ = r.read_size("m");
    q.n_ = r.read_size("n");
    q.M_ = r.read_field("M");
    q.c_ = r.read_field("c");
    q.a_ = r.read_field("a");
    q.finalize();
    return q;
}

LinearComp gen_linear_comp(std::size_t p, std::size_t d, std::size_t m, std::size_t n,
                           std::uint64_t seed) {
    if (p == 0 || d == 0 || m == 0 || n == 0)
        throw InvalidDatasetError("gen_linear_comp: sizes must be >= 1");
    if (d < p) throw Error("gen_linear_comp: need d >= p for a full-rank mean map");
    Rng rng(derive_seed(seed, 0x4c));
    LinearComp q;
    q.p_ = p;
    q.d_ = d;
    q.m_ = m;
    q.n_ = n;
    // Shared well-conditioned base plus per-example perturbations keeps the
    // mean map full rank and the outer problem strongly convex.
    // Shared well-conditioned base with a small per-example spread keeps the
    // mean map full rank and lets constant-rate runs settle tightly.
    const double dev = 0.02;
    std::vector<double> M0(d * p, 0.0);
    for (std::size_t k = 0; k < p; ++k) M0[k * p + k] = 1.0;
    for (double& v : M0) v += 0.3 * rng.next_normal();
    const std::vector<double> c0 = gaussian(rng, d, 0.3);
    q.M_.assign(n * d * p, 0.0);
    q.c_.assign(n * d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t e = 0; e < d * p; ++e)
            q.M_[j * d * p + e] = M0[e] + dev * rng.next_normal();
        for (std::size_t e = 0; e < d; ++e) q.c_[j * d + e] = c0[e] + dev * rng.next_normal();
    }
    const std::vector<double> a0 = gaussian(rng, d);
    q.a_.assign(m * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t e = 0; e < d; ++e) q.a_[i * d + e] = a0[e] + dev * rng.next_normal();
    q.finalize();
    return q;
}

// ===========================================================================
// CondLinearComp

double CondLinearComp::value_f(std::span<const double> y, std::size_t i) const {
    std::vector<double> diff(d_);
    vec::sub(y, std::span<const double>(a_.data() + i * d_, d_), diff);
    return 0.5 * vec::nrm2sq(diff);
}

void CondLinearComp::do_r(std::span<const double> x, std::size_t i, std::size_t j,
                          std::span<double> out) const {
    const std::size_t blk = d_ * p_;
    vec::gemv(std::span<const double>(M_.data() + (i * n_ + j) * blk, blk), d_, p_, x, out);
    vec::axpy(1.0, std::span<const double>(c_.data() + (i * n_ + j) * d_, d_), out);
}
void CondLinearComp::do_grad_f_y(std::span<const double> y, std::size_t i,
                                 std::span<double> out) const {
    vec::sub(y, std::span<const double>(a_.data() + i * d_, d_), out);
}
void CondLinearComp::do_jvp_r_alli(std::span<const double>, std::size_t i,
                                   std::span<const double> v, std::span<double> out) const {
    const std::size_t blk = d_ * p_;
    vec::gemv_t(std::span<const double>(Mbar_i_.data() + i * blk, blk), d_, p_, v, out);
}
void CondLinearComp::do_r_i_full(std::span<const double> x, std::size_t i,
                                 std::span<double> out) const {
    const std::size_t blk = d_ * p_;
    vec::gemv(std::span<const double>(Mbar_i_.data() + i * blk, blk), d_, p_, x, out);
    vec::axpy(1.0, std::span<const double>(cbar_i_.data() + i * d_, d_), out);
}

std::vector<double> CondLinearComp::hypergrad_closed(std::span<const double> x) const {
    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const Eigen::Index p = static_cast<Eigen::Index>(p_);
    MapVec xv(x.data(), p);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    for (std::size_t i = 0; i < m_; ++i) {
        MapRM Mi(Mbar_i_.data() + i * d_ * p_, d, p);
        MapVec ci(cbar_i_.data() + i * d_, d);
        MapVec ai(a_.data() + i * d_, d);
        g += Mi.transpose() * (Mi * xv + ci - ai);
    }
    g /= static_cast<double>(m_);
    return std::vector<double>(g.data(), g.data() + p_);
}

void CondLinearComp::finalize() {
    const std::size_t blk = d_ * p_;
    Mbar_i_.assign(m_ * blk, 0.0);
    cbar_i_.assign(m_ * d_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
        std::span<double> Mi(Mbar_i_.data() + i * blk, blk);
        std::span<double> ci(cbar_i_.data() + i * d_, d_);
        for (std::size_t j = 0; j < n_; ++j) {
            vec::axpy(1.0, std::span<const double>(M_.data() + (i * n_ + j) * blk, blk), Mi);
            vec::axpy(1.0, std::span<const double>(c_.data() + (i * n_ + j) * d_, d_), ci);
        }
        vec::scal(1.0 / static_cast<double>(n_), Mi);
        vec::scal(1.0 / static_cast<double>(n_), ci);
    }

    const Eigen::Index d = static_cast<Eigen::Index>(d_);
    const Eigen::Index p = static_cast<Eigen::Index>(p_);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (std::size_t i = 0; i < m_; ++i) {
        MapRM Mi(Mbar_i_.data() + i * blk, d, p);
        MapVec ci(cbar_i_.data() + i * d_, d);
        MapVec ai(a_.data() + i * d_, d);
        gram += Mi.transpose() * Mi;
        rhs += Mi.transpose() * (ai - ci);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (!(es.eigenvalues().minCoeff() > 1e-9))
        throw IllConditioningError("CondLinearComp: aggregate map rank deficient");
    const Eigen::VectorXd xs = gram.llt().solve(rhs);
    x_star_.assign(xs.data(), xs.data() + p_);
}

void CondLinearComp::save(std::ostream& os) const {
    write_header(os, "cond_linear_comp");
    write_size(os, "p", p_);
    write_size(os, "d", d_);
    write_size(os, "m", m_);
    write_size(os, "n", n_);
    write_field(os, "M", M_);
    write_field(os, "c", c_);
    write_field(os, "a", a_);
}

CondLinearComp CondLinearComp::load(std::istream& is) {
    Reader r{is};
    r.expect_header("cond_linear_comp");
    CondLinearComp q;
    q.p_ = r.read_size("p");
    q.d_ = r.read_size("d");
    q.m_ = r.read_size("m");
    q.n_ = r.read_size("n");
    q.M_ = r.read_field("M");
    q.c_ = r.read_field("c");
    q.a_ = r.read_field("a");
    q.finalize();
    return q;
}

CondLinearComp gen_linear_comp_cond(std::size_t p, std::size_t d, std::size_t m, std::size_t n,
                                    std::uint64_t seed) {
    if (p == 0 || d == 0 || m == 0 || n == 0)
        throw InvalidDatasetError("gen_linear_comp_cond: sizes must be >= 1");
    if (d < p) throw Error("gen_linear_comp_cond: need d >= p for full-rank maps");
    Rng rng(derive_seed(seed, 0x5d));
    CondLinearComp q;
    q.p_ = p;
    q.d_ = d;
    q.m_ = m;
    q.n_ = n;
    const double dev = 0.02;
    std::vector<double> M0(d * p, 0.0);
    for (std::size_t k = 0; k < p; ++k) M0[k * p + k] = 1.0;
    for (double& v : M0) v += 0.3 * rng.next_normal();
    const std::vector<double> c0 = gaussian(rng, d, 0.3);
    const std::vector<double> a0 = gaussian(rng, d);
    q.M_.assign(m * n * d * p, 0.0);
    q.c_.assign(m * n * d, 0.0);
    q.a_.assign(m * d, 0.0);
    for (std::size_t ij = 0; ij < m * n; ++ij) {
        for (std::size_t e = 0; e < d * p; ++e)
            q.M_[ij * d * p + e] = M0[e] + dev * rng.next_normal();
        for (std::size_t e = 0; e < d; ++e) q.c_[ij * d + e] = c0[e] + dev * rng.next_normal();
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t e = 0; e < d; ++e) q.a_[i * d + e] = a0[e] + dev * rng.next_normal();
    q.finalize();
    return q;
}

}  // namespace wior
