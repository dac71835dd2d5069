#include "ocil/simd/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>

namespace ocil::simd {

namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

double squared_l2_scalar(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void sgd_momentum_scalar(double* p, double* v, const double* g, std::size_t n,
                         double lr, double momentum, double weight_decay) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
        p[i] -= lr * v[i];
    }
}

void clip_above_scalar(const double* x, double c, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::min(x[i], c);
}

const KernelTable kScalar{Isa::scalar,       dot_scalar,          squared_l2_scalar,
                          axpy_scalar,       sgd_momentum_scalar, clip_above_scalar};

const KernelTable& select() noexcept {
    if (const char* env = std::getenv("OCIL_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return kScalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_kernels()) return *avx2_kernels();
        if (std::strcmp(env, "neon") == 0 && neon_kernels()) return *neon_kernels();
    }
    if (const auto* t = avx2_kernels()) return *t;
    if (const auto* t = neon_kernels()) return *t;
    return kScalar;
}

}  // namespace

std::string_view to_string(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

const KernelTable& scalar_kernels() noexcept { return kScalar; }

const KernelTable& active() noexcept {
    static const KernelTable& table = select();
    return table;
}

}  // namespace ocil::simd
