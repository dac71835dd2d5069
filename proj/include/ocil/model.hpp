#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ocil/data.hpp"
#include "ocil/numerics.hpp"

namespace ocil {

// Frozen feature extractor: the forward map and its transpose, which
// carries input gradients for ODIN.
class Extractor {
public:
    enum class Kind { identity, random_projection };

    static Extractor identity(std::size_t dim);
    // Fixed Gaussian projection, entries N(0, 1/d_out), generated from `seed`.
    static Extractor random_projection(std::size_t d_in, std::size_t d_out, std::uint64_t seed);

    Kind kind() const noexcept { return kind_; }
    std::size_t input_dim() const noexcept { return d_in_; }
    std::size_t output_dim() const noexcept { return d_out_; }
    std::uint64_t seed() const noexcept { return seed_; }

    void apply(std::span<const double> x, std::span<double> out) const;
    Vec apply(std::span<const double> x) const;
    FeatureDataset apply(const FeatureDataset& ds) const;
    // grad_in = J^T grad_out
    void backward(std::span<const double> grad_out, std::span<double> grad_in) const;

    std::uint64_t fingerprint() const noexcept;

private:
    Kind kind_ = Kind::identity;
    std::size_t d_in_ = 0;
    std::size_t d_out_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> matrix_;  // d_out x d_in
};

// Expandable linear classifier: logits = W x + b, one row per seen class.
struct LinearHead {
    std::size_t classes = 0;
    std::size_t dim = 0;
    std::vector<double> weights;  // classes x dim, row-major
    std::vector<double> bias;     // classes

    static LinearHead empty(std::size_t dim);

    std::span<const double> row(std::size_t c) const { return {weights.data() + c * dim, dim}; }
    std::span<double> row(std::size_t c) { return {weights.data() + c * dim, dim}; }

    void forward(std::span<const double> x, std::span<double> out) const;
    // Logits for `rows` stacked inputs; out is rows x classes.
    void forward_batch(std::span<const double> x, std::size_t rows, std::span<double> out) const;

    std::uint64_t fingerprint() const noexcept;
};

Vec forward_logits(const LinearHead& head, std::span<const double> x);

enum class HeadInit { zeros, copy_scaled, seeded_uniform };

// Appends `new_classes` rows. Existing rows are copied unchanged.
//  zeros          new rows and biases are 0
//  copy_scaled    new row j copies old row (j mod C) scaled by 0.1, bias 0;
//                 falls back to seeded_uniform when the head is empty
//  seeded_uniform U[-1/sqrt(d), 1/sqrt(d)] weights, bias 0
LinearHead expand_head(const LinearHead& head, std::size_t new_classes, HeadInit init, Rng& rng);

// Gradient buffers shaped like a head.
struct HeadGrad {
    std::vector<double> weights;
    std::vector<double> bias;

    static HeadGrad zeros_like(const LinearHead& head);
    void clear();
};

// Accumulates dL/dW and dL/db from dL/dlogits (rows x classes).
void accumulate_head_grad(const LinearHead& head, std::span<const double> x, std::size_t rows,
                          std::span<const double> dlogits, HeadGrad& grad);

// dL/dx for a single row from dL/dlogits.
void head_input_grad(const LinearHead& head, std::span<const double> dlogits, std::span<double> dx);

enum class LrSchedule { cosine, constant };

struct SgdConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LrSchedule schedule = LrSchedule::cosine;
};

// Momentum SGD with coupled weight decay and cosine annealing:
//   lr(s) = lr0 * 0.5 * (1 + cos(pi * s / total))
//   v <- momentum * v + (g + wd * p);  p <- p - lr * v
class SgdState {
public:
    explicit SgdState(SgdConfig cfg = {}) : cfg_(cfg) {}

    const SgdConfig& config() const noexcept { return cfg_; }
    double lr_at(std::size_t step, std::size_t total_steps) const;

    // Grows velocity buffers to match an expanded head; new rows start at 0.
    void sync(const LinearHead& head);
    void step(LinearHead& head, const HeadGrad& grad, std::size_t step, std::size_t total_steps);

    std::span<const double> velocity_weights() const noexcept { return vw_; }
    std::span<const double> velocity_bias() const noexcept { return vb_; }

private:
    SgdConfig cfg_;
    std::size_t dim_ = 0;
    std::vector<double> vw_;
    std::vector<double> vb_;
};

// Rescales the `new_rows` weight rows so their mean L2 norm matches that of
// `old_rows`. Biases are left alone.
LinearHead weight_align(const LinearHead& head, std::span<const std::size_t> old_rows,
                        std::span<const std::size_t> new_rows);

// "OCH1" checkpoint: magic, u32 C, u32 d, f64 W (row-major), f64 b.
void save_head(const LinearHead& head, const std::filesystem::path& path);
LinearHead load_head(const std::filesystem::path& path);

}  // namespace ocil
