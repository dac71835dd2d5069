#include "ocil/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ocil/error.hpp"
#include "ocil/simd/kernels.hpp"

namespace ocil {

namespace {

void check_input(std::span<const double> v, double tau) {
    require(!v.empty(), ErrorCode::EmptyInput, "logsumexp: empty input");
    require(tau > 0.0 && std::isfinite(tau), ErrorCode::InvalidArgument, "temperature must be positive");
    for (double x : v) require(std::isfinite(x), ErrorCode::NonFinite, "non-finite logit");
}

// Returns log sum exp(v/tau) (without the tau factor).
double lse_unscaled(std::span<const double> v, double tau) {
    const double m = *std::max_element(v.begin(), v.end()) / tau;
    double s = 0.0;
    for (double x : v) s += std::exp(x / tau - m);
    return m + std::log(s);
}

}  // namespace

double logsumexp(std::span<const double> v, double tau) {
    check_input(v, tau);
    return tau * lse_unscaled(v, tau);
}

double softmax_into(std::span<const double> v, double tau, std::span<double> out) {
    check_input(v, tau);
    require(out.size() == v.size(), ErrorCode::DimensionMismatch, "softmax: output size");
    const double m = *std::max_element(v.begin(), v.end()) / tau;
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        out[j] = std::exp(v[j] / tau - m);
        s += out[j];
    }
    const double inv = 1.0 / s;
    for (double& p : out) p *= inv;
    return m + std::log(s);
}

Vec softmax(std::span<const double> v, double tau) {
    Vec out(v.size());
    softmax_into(v, tau, out);
    return out;
}

double l2_norm(std::span<const double> v) noexcept {
    return std::sqrt(simd::dot(v, v));
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    require(u.size() == v.size(), ErrorCode::DimensionMismatch, "cosine_sim: dimension mismatch");
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    require(nu > 0.0 && nv > 0.0, ErrorCode::InvalidArgument, "cosine_sim: zero-norm vector");
    const double c = simd::dot(u, v) / (nu * nv);
    return std::clamp(c, -1.0, 1.0);
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_label(std::string_view label) noexcept {
    // FNV-1a, 64 bit.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t key) : key_(key), engine_(key) {}

Rng::Rng(std::uint64_t seed, std::string_view label)
    : Rng(mix64(mix64(seed) ^ hash_label(label))) {}

Rng Rng::substream(std::string_view label) const {
    return Rng(mix64(key_ ^ hash_label(label)));
}

Rng Rng::substream(std::string_view label, std::uint64_t index) const {
    return Rng(mix64(mix64(key_ ^ hash_label(label)) + index));
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
    require(n > 0, ErrorCode::InvalidArgument, "Rng::below: n must be positive");
    // Rejection sampling.
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

double Rng::normal() {
    if (has_spare_normal_) {
        has_spare_normal_ = false;
        return spare_normal_;
    }
    // Marsaglia polar method.
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_normal_ = v * f;
    has_spare_normal_ = true;
    return u * f;
}

double Rng::gamma(double shape) {
    require(shape > 0.0 && std::isfinite(shape), ErrorCode::InvalidArgument, "gamma: shape must be positive");
    if (shape < 1.0) {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        const double g = gamma(shape + 1.0);
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return g * std::pow(u, 1.0 / shape);
    }
    // Marsaglia-Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
}

double sample_beta(double a, double b, Rng& rng) {
    require(a > 0.0 && b > 0.0, ErrorCode::InvalidArgument, "sample_beta: parameters must be positive");
    const double x = rng.gamma(a);
    const double y = rng.gamma(b);
    const double s = x + y;
    // Both gammas underflowing is only possible for tiny shapes.
    if (s == 0.0) return rng.uniform() < a / (a + b) ? 1.0 : 0.0;
    return x / s;
}

}  // namespace ocil
