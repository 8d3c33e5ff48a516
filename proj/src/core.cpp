#include "wior/core.hpp"

#include <cmath>
#include <numeric>

#include "wior/vecops.hpp"

namespace wior {

namespace {

void require_positive(double v, const char* name) {
    if (!(v > 0.0)) throw Error(std::string(name) + " must be strictly positive");
}

// Zero is legal for stepsizes so the zero-rate fixed-point checks can be
// expressed; negative or non-finite rates are not.
void require_rate(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
        throw Error(std::string(name) + " must be finite and >= 0");
}

}  // namespace

RateConfig RateConfig::from_rates(double eta, double gamma, double rho, double iota) {
    require_rate(eta, "eta");
    require_rate(gamma, "gamma");
    require_rate(rho, "rho");
    require_positive(iota, "iota");
    RateConfig r;
    r.eta = eta;
    r.gamma = gamma;
    r.rho = rho;
    r.c1 = eta > 0.0 ? gamma / eta : 0.0;
    r.c2 = eta > 0.0 ? rho / eta : 0.0;
    r.iota = iota;
    r.ratio_mode = false;
    return r;
}

RateConfig RateConfig::from_ratios(double eta, double c1, double c2, double iota) {
    require_rate(eta, "eta");
    require_rate(c1, "c1");
    require_rate(c2, "c2");
    require_positive(iota, "iota");
    RateConfig r;
    r.eta = eta;
    r.c1 = c1;
    r.c2 = c2;
    r.gamma = c1 * eta;
    r.rho = c2 * eta;
    r.iota = iota;
    r.ratio_mode = true;
    return r;
}

ProblemMeta ProblemMeta::make(double mu, double L, double C_f) {
    require_positive(mu, "mu");
    require_positive(L, "L");
    require_positive(C_f, "C_f");
    if (mu > L) throw Error("ProblemMeta: mu must not exceed L");
    return ProblemMeta{mu, L, C_f, L / mu};
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void project_ball_inplace(std::span<double> u, double iota) {
    if (!(iota > 0.0)) throw Error("project_ball: iota must be strictly positive");
    if (!all_finite(u)) throw NonFiniteError("project_ball: non-finite input");
    // Rescale until the norm is at or below the radius. Rounding can leave
    // the first rescale a hair above iota; the loop makes the result a true
    // fixed point of the projection, so a second projection changes no bits.
    double norm = vec::nrm2(u);
    while (norm > iota) {
        double s = iota / norm;
        if (s >= 1.0) s = std::nextafter(1.0, 0.0);
        vec::scal(s, u);
        norm = vec::nrm2(u);
    }
}

std::vector<double> project_ball(std::vector<double> u, double iota) {
    project_ball_inplace(u, iota);
    return u;
}

EpochPlan plan_epoch(std::size_t m, std::size_t n, std::size_t cap) {
    if (m == 0 || n == 0) throw InvalidDatasetError("plan_epoch: dataset sizes must be >= 1");
    const std::size_t g = std::gcd(m, n);
    const std::size_t m_over_g = m / g;
    if (m_over_g > cap / n)
        throw EpochTooLongError("plan_epoch: lcm(" + std::to_string(m) + ", " +
                                std::to_string(n) + ") exceeds cap " + std::to_string(cap));
    const std::size_t lcm = m_over_g * n;
    if (lcm > cap)
        throw EpochTooLongError("plan_epoch: lcm(" + std::to_string(m) + ", " +
                                std::to_string(n) + ") exceeds cap " + std::to_string(cap));
    return EpochPlan{m, n, lcm, lcm / m, lcm / n};
}

}  // namespace wior
