#pragma once

// Shared helpers for the unit tests: random instance builders and small
// independent oracles. Nothing here calls into the code under test except
// to construct inputs.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ocil/data.hpp"
#include "ocil/model.hpp"

namespace testing {

inline std::mt19937_64& engine() {
    static thread_local std::mt19937_64 e(20261018);
    return e;
}

inline double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine()); }

inline std::vector<double> random_vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
}

inline int random_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine()); }

inline ocil::LinearHead random_head(std::size_t classes, std::size_t dim, double scale = 1.0) {
    ocil::LinearHead h;
    h.classes = classes;
    h.dim = dim;
    h.weights = random_vec(classes * dim, -scale, scale);
    h.bias = random_vec(classes, -scale, scale);
    return h;
}

// Gaussian blobs around well separated means; labels 0..classes-1.
inline ocil::FeatureDataset blobs(int classes, std::size_t per_class, std::size_t dim, double radius, double sigma,
                                  std::uint64_t seed) {
    std::mt19937_64 e(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    ocil::FeatureDataset ds;
    ds.d = dim;
    ds.num_classes = classes;
    for (int c = 0; c < classes; ++c) {
        std::vector<double> mean(dim, 0.0);
        mean[static_cast<std::size_t>(c) % dim] = radius * (c / static_cast<int>(dim) % 2 == 0 ? 1.0 : -1.0);
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t j = 0; j < dim; ++j) ds.features.push_back(mean[j] + sigma * n01(e));
            ds.labels.push_back(c);
        }
    }
    ds.n = ds.labels.size();
    return ds;
}

// Long-double softmax, used as a reference.
inline std::vector<long double> softmax_ld(const std::vector<double>& v, long double tau = 1.0L) {
    long double m = v[0];
    for (double x : v) m = std::max<long double>(m, x);
    std::vector<long double> p(v.size());
    long double s = 0.0L;
    for (std::size_t i = 0; i < v.size(); ++i) s += p[i] = std::exp((v[i] - m) / tau);
    for (auto& x : p) x /= s;
    return p;
}

inline long double logsumexp_ld(const std::vector<double>& v, long double tau = 1.0L) {
    long double s = 0.0L;
    for (double x : v) s += std::exp(static_cast<long double>(x) / tau);
    return tau * std::log(s);
}

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ocil_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
