#pragma once

// Dense double-precision kernels used by the solver inner loops.
//
// Every kernel has a scalar reference implementation and may have SIMD
// variants (AVX2+FMA on x86-64). The active backend is chosen once at
// startup from CPU features; set WIOR_VECOPS=scalar|avx2 to override.
// Within one process the selection is fixed, so repeated runs of the
// same configuration produce bitwise-identical results.

#include <cstddef>
#include <span>

namespace wior::vec {

struct Backend {
    const char* name;
    double (*dot)(const double*, const double*, std::size_t);
    double (*nrm2sq)(const double*, std::size_t);
    // y += alpha * x
    void (*axpy)(double alpha, const double*, double*, std::size_t);
    // x *= alpha
    void (*scal)(double alpha, double*, std::size_t);
    // y = (1 - gamma) * y + gamma * r
    void (*ema)(double gamma, double*, const double*, std::size_t);
    // out = a - b
    void (*sub)(const double*, const double*, double*, std::size_t);
    // y = A x, A row-major (rows x cols), y has length rows
    void (*gemv)(const double*, std::size_t rows, std::size_t cols, const double*, double*);
    // y = A^T x, A row-major (rows x cols), y has length cols
    void (*gemv_t)(const double*, std::size_t rows, std::size_t cols, const double*, double*);
};

const Backend& scalar_backend();
// Null when this build/CPU cannot run AVX2+FMA.
const Backend* avx2_backend();

// Backend selected at first use (CPU features + WIOR_VECOPS override).
const Backend& active_backend();

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active_backend().dot(a.data(), b.data(), a.size());
}
inline double nrm2sq(std::span<const double> a) {
    return active_backend().nrm2sq(a.data(), a.size());
}
double nrm2(std::span<const double> a);

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active_backend().axpy(alpha, x.data(), y.data(), y.size());
}
inline void scal(double alpha, std::span<double> x) {
    active_backend().scal(alpha, x.data(), x.size());
}
inline void ema(double gamma, std::span<double> y, std::span<const double> r) {
    active_backend().ema(gamma, y.data(), r.data(), y.size());
}
inline void sub(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    active_backend().sub(a.data(), b.data(), out.data(), out.size());
}
inline void gemv(std::span<const double> a, std::size_t rows, std::size_t cols,
                 std::span<const double> x, std::span<double> y) {
    active_backend().gemv(a.data(), rows, cols, x.data(), y.data());
}
inline void gemv_t(std::span<const double> a, std::size_t rows, std::size_t cols,
                   std::span<const double> x, std::span<double> y) {
    active_backend().gemv_t(a.data(), rows, cols, x.data(), y.data());
}

}  // namespace wior::vec
