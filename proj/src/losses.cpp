#include "ocil/losses.hpp"

#include <cmath>
#include <vector>

#include "ocil/error.hpp"
#include "ocil/numerics.hpp"

namespace ocil {

namespace {

std::size_t row_count(std::span<const double> logits, std::size_t classes, std::span<double> dlogits) {
    require(classes > 0 && logits.size() % classes == 0, ErrorCode::ShapeMismatch, "loss: logits shape");
    require(dlogits.empty() || dlogits.size() == logits.size(), ErrorCode::ShapeMismatch, "loss: gradient shape");
    const std::size_t rows = logits.size() / classes;
    require(rows > 0, ErrorCode::EmptyInput, "loss: empty batch");
    return rows;
}

}  // namespace

double cross_entropy(std::span<const double> logits, std::size_t classes, std::span<const int> targets,
                     std::span<double> dlogits, double weight) {
    const std::size_t rows = row_count(logits, classes, dlogits);
    require(targets.size() == rows, ErrorCode::ShapeMismatch, "cross_entropy: target count");
    std::vector<double> p(classes);
    double total = 0.0;
    const double scale = weight / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto f = logits.subspan(r * classes, classes);
        const int y = targets[r];
        require(y >= 0 && static_cast<std::size_t>(y) < classes, ErrorCode::InvalidArgument,
                "cross_entropy: target out of range");
        const double lse = softmax_into(f, 1.0, p);
        total += lse - f[y];
        if (!dlogits.empty()) {
            for (std::size_t c = 0; c < classes; ++c)
                dlogits[r * classes + c] += scale * (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0));
        }
    }
    return total / static_cast<double>(rows);
}

double logitnorm_cross_entropy(std::span<const double> logits, std::size_t classes,
                               std::span<const int> targets, double tau, std::span<double> dlogits,
                               double weight) {
    constexpr double kEps = 1e-7;
    const std::size_t rows = row_count(logits, classes, dlogits);
    require(tau > 0.0, ErrorCode::InvalidArgument, "logitnorm: tau must be positive");
    require(targets.size() == rows, ErrorCode::ShapeMismatch, "logitnorm: target count");
    std::vector<double> z(classes), g(classes, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto f = logits.subspan(r * classes, classes);
        const double n = l2_norm(f);
        const double s = tau * (n + kEps);
        for (std::size_t c = 0; c < classes; ++c) z[c] = f[c] / s;
        const int y = targets[r];
        std::fill(g.begin(), g.end(), 0.0);
        total += cross_entropy(z, classes, std::span<const int>(&y, 1), g, 1.0);
        if (dlogits.empty()) continue;
        // d z_i / d f_j = delta_ij / s - tau * f_i f_j / (n s^2)
        double gf = 0.0;
        for (std::size_t c = 0; c < classes; ++c) gf += g[c] * f[c];
        const double coupling = n > 0.0 ? tau * gf / (n * s * s) : 0.0;
        const double scale = weight / static_cast<double>(rows);
        for (std::size_t c = 0; c < classes; ++c)
            dlogits[r * classes + c] += scale * (g[c] / s - coupling * f[c]);
    }
    return total / static_cast<double>(rows);
}

double distillation_kl(std::span<const double> new_logits, std::size_t new_classes,
                       std::span<const double> old_logits, std::size_t old_classes, double temperature,
                       std::span<double> dlogits, double weight) {
    const std::size_t rows = row_count(new_logits, new_classes, dlogits);
    require(old_classes > 0 && old_classes <= new_classes, ErrorCode::ShapeMismatch,
            "distillation: old class count");
    require(old_logits.size() == rows * old_classes, ErrorCode::ShapeMismatch, "distillation: old logits shape");
    require(temperature > 0.0, ErrorCode::InvalidArgument, "distillation: temperature must be positive");
    const double t = temperature;
    std::vector<double> p(old_classes), q(old_classes);
    double total = 0.0;
    const double scale = weight / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto fo = old_logits.subspan(r * old_classes, old_classes);
        const auto fn = new_logits.subspan(r * new_classes, old_classes);
        const double lse_p = softmax_into(fo, t, p);
        const double lse_q = softmax_into(fn, t, q);
        double kl = 0.0;
        for (std::size_t c = 0; c < old_classes; ++c) {
            if (p[c] <= 0.0) continue;
            const double log_p = fo[c] / t - lse_p;
            const double log_q = fn[c] / t - lse_q;
            kl += p[c] * (log_p - log_q);
        }
        total += t * t * kl;
        if (!dlogits.empty())
            for (std::size_t c = 0; c < old_classes; ++c) dlogits[r * new_classes + c] += scale * t * (q[c] - p[c]);
    }
    return total / static_cast<double>(rows);
}

}  // namespace ocil
