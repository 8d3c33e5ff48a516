#include "wior/vecops.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

namespace wior::vec {

namespace {

const Backend& select_backend() {
    const char* want = std::getenv("WIOR_VECOPS");
    if (want != nullptr && std::strcmp(want, "scalar") == 0) return scalar_backend();
    const Backend* avx2 = avx2_backend();
    if (want != nullptr && std::strcmp(want, "avx2") == 0 && avx2 != nullptr) return *avx2;
    if (want != nullptr && std::strcmp(want, "auto") != 0) {
        // Unknown or unavailable request falls back to the portable path.
        if (avx2 == nullptr || std::strcmp(want, "avx2") != 0) return scalar_backend();
    }
    return avx2 != nullptr ? *avx2 : scalar_backend();
}

}  // namespace

const Backend& active_backend() {
    static const Backend& chosen = select_backend();
    return chosen;
}

double nrm2(std::span<const double> a) { return std::sqrt(nrm2sq(a)); }

}  // namespace wior::vec
