#include "ocil/simd/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

#include <algorithm>

namespace ocil::simd {

namespace {

double dot_neon(const double* x, const double* y, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

double squared_l2_neon(const double* x, const double* y, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t d = vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i));
        acc = vfmaq_f64(acc, d, d);
    }
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void sgd_momentum_neon(double* p, double* v, const double* g, std::size_t n,
                       double lr, double momentum, double weight_decay) {
    const float64x2_t vm = vdupq_n_f64(momentum);
    const float64x2_t vwd = vdupq_n_f64(weight_decay);
    const float64x2_t vlr = vdupq_n_f64(lr);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t pp = vld1q_f64(p + i);
        const float64x2_t step = vfmaq_f64(vld1q_f64(g + i), vwd, pp);
        const float64x2_t vv = vfmaq_f64(step, vm, vld1q_f64(v + i));
        vst1q_f64(v + i, vv);
        vst1q_f64(p + i, vfmsq_f64(pp, vlr, vv));
    }
    for (; i < n; ++i) {
        v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
        p[i] -= lr * v[i];
    }
}

void clip_above_neon(const double* x, double c, double* out, std::size_t n) {
    const float64x2_t vc = vdupq_n_f64(c);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vminq_f64(vld1q_f64(x + i), vc));
    for (; i < n; ++i) out[i] = std::min(x[i], c);
}

const KernelTable kNeon{Isa::neon,       dot_neon,          squared_l2_neon,
                        axpy_neon,       sgd_momentum_neon, clip_above_neon};

}  // namespace

const KernelTable* neon_kernels() noexcept { return &kNeon; }

}  // namespace ocil::simd

#else

namespace ocil::simd {
const KernelTable* neon_kernels() noexcept { return nullptr; }
}  // namespace ocil::simd

#endif
