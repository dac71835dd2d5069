#pragma once

// Data-parallel inner loops used by the training and scoring code.
//
// Every kernel has a scalar reference implementation. Vector variants
// (AVX2+FMA on x86-64, NEON on aarch64) are compiled in separate
// translation units and picked once at startup based on what the CPU
// reports. Set OCIL_SIMD=scalar|avx2|neon to override the choice.
//
// Vector variants reassociate sums, so results agree with the scalar
// path to rounding, not bit-for-bit. The selected table is fixed for the
// life of the process.

#include <cstddef>
#include <span>
#include <string_view>

namespace ocil::simd {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa) noexcept;

struct KernelTable {
    Isa isa;
    // sum_i x[i] * y[i]
    double (*dot)(const double* x, const double* y, std::size_t n);
    // sum_i (x[i] - y[i])^2
    double (*squared_l2)(const double* x, const double* y, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // v = momentum * v + (g + weight_decay * p);  p -= lr * v
    void (*sgd_momentum)(double* p, double* v, const double* g, std::size_t n,
                         double lr, double momentum, double weight_decay);
    // out[i] = min(x[i], c)
    void (*clip_above)(const double* x, double c, double* out, std::size_t n);
};

const KernelTable& scalar_kernels() noexcept;
// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelTable* avx2_kernels() noexcept;
const KernelTable* neon_kernels() noexcept;

// The table chosen for this process.
const KernelTable& active() noexcept;

inline double dot(std::span<const double> x, std::span<const double> y) noexcept {
    return active().dot(x.data(), y.data(), x.size());
}

inline double squared_l2(std::span<const double> x, std::span<const double> y) noexcept {
    return active().squared_l2(x.data(), y.data(), x.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) noexcept {
    active().axpy(a, x.data(), y.data(), x.size());
}

}  // namespace ocil::simd
