#include "wior/vecops.hpp"

// Reference kernels. Plain sequential loops; the accumulation order here
// defines the semantics SIMD variants are tested against.

namespace wior::vec {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double nrm2sq_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void ema_scalar(double gamma, double* y, const double* r, std::size_t n) {
    const double keep = 1.0 - gamma;
    for (std::size_t i = 0; i < n; ++i) y[i] = keep * y[i] + gamma * r[i];
}

void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void gemv_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 double* y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(a + r * cols, x, cols);
}

void gemv_t_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) axpy_scalar(x[r], a + r * cols, y, cols);
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend b{"scalar",      dot_scalar, nrm2sq_scalar, axpy_scalar,
                           scal_scalar,   ema_scalar, sub_scalar,    gemv_scalar,
                           gemv_t_scalar};
    return b;
}

}  // namespace wior::vec
