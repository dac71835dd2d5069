#include "ocil/simd/kernels.hpp"

#if defined(OCIL_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>

namespace ocil::simd {

namespace {

// Horizontal sum of the four lanes.
inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

double squared_l2_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void sgd_momentum_avx2(double* p, double* v, const double* g, std::size_t n,
                       double lr, double momentum, double weight_decay) {
    const __m256d vm = _mm256_set1_pd(momentum);
    const __m256d vwd = _mm256_set1_pd(weight_decay);
    const __m256d vlr = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d pp = _mm256_loadu_pd(p + i);
        const __m256d step = _mm256_fmadd_pd(vwd, pp, _mm256_loadu_pd(g + i));
        const __m256d vv = _mm256_fmadd_pd(vm, _mm256_loadu_pd(v + i), step);
        _mm256_storeu_pd(v + i, vv);
        _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, vv, pp));
    }
    for (; i < n; ++i) {
        v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
        p[i] -= lr * v[i];
    }
}

void clip_above_avx2(const double* x, double c, double* out, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_min_pd(_mm256_loadu_pd(x + i), vc));
    for (; i < n; ++i) out[i] = std::min(x[i], c);
}

const KernelTable kAvx2{Isa::avx2,       dot_avx2,          squared_l2_avx2,
                        axpy_avx2,       sgd_momentum_avx2, clip_above_avx2};

}  // namespace

const KernelTable* avx2_kernels() noexcept {
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &kAvx2 : nullptr;
}

}  // namespace ocil::simd

#else

namespace ocil::simd {
const KernelTable* avx2_kernels() noexcept { return nullptr; }
}  // namespace ocil::simd

#endif
