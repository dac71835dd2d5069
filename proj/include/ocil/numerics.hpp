#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ocil {

using Vec = std::vector<double>;

// tau * log(sum_j exp(v_j / tau)), max-shifted.
double logsumexp(std::span<const double> v, double tau = 1.0);

Vec softmax(std::span<const double> v, double tau = 1.0);
// Writes the softmax of `v` into `out` (same length). Returns the logsumexp
// of v / tau (unscaled by tau) so callers can reuse it.
double softmax_into(std::span<const double> v, double tau, std::span<double> out);

double cosine_sim(std::span<const double> u, std::span<const double> v);

double l2_norm(std::span<const double> v) noexcept;

// Seeded random stream. A stream is identified by a 64-bit seed plus a text
// label; child streams derive their key from the parent key and a label, so
// adding a consumer never shifts anyone else's draws.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Distributions are implemented here rather than taken from
// <random>, whose algorithms vary between standard libraries.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view label);

    Rng substream(std::string_view label) const;
    Rng substream(std::string_view label, std::uint64_t index) const;

    std::uint64_t key() const noexcept { return key_; }

    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);
    double normal();
    double gamma(double shape);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    std::vector<std::size_t> permutation(std::size_t n);

private:
    explicit Rng(std::uint64_t key);

    std::uint64_t key_;
    std::mt19937_64 engine_;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

// One Beta(a, b) variate via the ratio of two Gamma variates.
double sample_beta(double a, double b, Rng& rng);

// Mixes a 64-bit value (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t hash_label(std::string_view label) noexcept;

}  // namespace ocil
