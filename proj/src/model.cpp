#include "ocil/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "ocil/error.hpp"
#include "ocil/simd/kernels.hpp"

namespace ocil {

namespace {

std::uint64_t hash_doubles(std::uint64_t h, std::span<const double> v) {
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        h = mix64(h ^ bits);
    }
    return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Extractor

Extractor Extractor::identity(std::size_t dim) {
    require(dim > 0, ErrorCode::InvalidArgument, "extractor dimension must be positive");
    Extractor e;
    e.kind_ = Kind::identity;
    e.d_in_ = e.d_out_ = dim;
    return e;
}

Extractor Extractor::random_projection(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
    require(d_in > 0 && d_out > 0, ErrorCode::InvalidArgument, "projection dimensions must be positive");
    Extractor e;
    e.kind_ = Kind::random_projection;
    e.d_in_ = d_in;
    e.d_out_ = d_out;
    e.seed_ = seed;
    e.matrix_.resize(d_in * d_out);
    Rng rng(seed, "extractor/random_projection");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_out));
    for (double& m : e.matrix_) m = rng.normal() * scale;
    return e;
}

void Extractor::apply(std::span<const double> x, std::span<double> out) const {
    require(x.size() == d_in_, ErrorCode::DimensionMismatch, "extractor: input dimension mismatch");
    require(out.size() == d_out_, ErrorCode::DimensionMismatch, "extractor: output dimension mismatch");
    if (kind_ == Kind::identity) {
        std::copy(x.begin(), x.end(), out.begin());
        return;
    }
    for (std::size_t i = 0; i < d_out_; ++i)
        out[i] = simd::dot({matrix_.data() + i * d_in_, d_in_}, x);
}

Vec Extractor::apply(std::span<const double> x) const {
    Vec out(d_out_);
    apply(x, out);
    return out;
}

FeatureDataset Extractor::apply(const FeatureDataset& ds) const {
    if (kind_ == Kind::identity) {
        require(ds.n == 0 || ds.d == d_in_, ErrorCode::DimensionMismatch, "extractor: input dimension mismatch");
        return ds;
    }
    FeatureDataset out;
    out.n = ds.n;
    out.d = d_out_;
    out.labels = ds.labels;
    out.num_classes = ds.num_classes;
    out.class_names = ds.class_names;
    out.features.resize(ds.n * d_out_);
    for (std::size_t r = 0; r < ds.n; ++r) apply(ds.row(r), {out.features.data() + r * d_out_, d_out_});
    return out;
}

void Extractor::backward(std::span<const double> grad_out, std::span<double> grad_in) const {
    require(grad_out.size() == d_out_ && grad_in.size() == d_in_, ErrorCode::DimensionMismatch,
            "extractor backward: dimension mismatch");
    if (kind_ == Kind::identity) {
        std::copy(grad_out.begin(), grad_out.end(), grad_in.begin());
        return;
    }
    std::fill(grad_in.begin(), grad_in.end(), 0.0);
    for (std::size_t i = 0; i < d_out_; ++i)
        simd::axpy(grad_out[i], {matrix_.data() + i * d_in_, d_in_}, grad_in);
}

std::uint64_t Extractor::fingerprint() const noexcept {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(kind_) ^ (d_in_ << 8) ^ (d_out_ << 32) ^ seed_);
    return hash_doubles(h, matrix_);
}

// ---------------------------------------------------------------------------
// LinearHead

LinearHead LinearHead::empty(std::size_t dim) {
    require(dim > 0, ErrorCode::InvalidArgument, "head dimension must be positive");
    LinearHead h;
    h.dim = dim;
    return h;
}

void LinearHead::forward(std::span<const double> x, std::span<double> out) const {
    require(x.size() == dim, ErrorCode::DimensionMismatch, "forward_logits: input dimension mismatch");
    require(out.size() == classes, ErrorCode::DimensionMismatch, "forward_logits: output size mismatch");
    for (std::size_t c = 0; c < classes; ++c) out[c] = simd::dot(row(c), x) + bias[c];
}

void LinearHead::forward_batch(std::span<const double> x, std::size_t rows, std::span<double> out) const {
    require(x.size() == rows * dim, ErrorCode::DimensionMismatch, "forward_batch: input size mismatch");
    require(out.size() == rows * classes, ErrorCode::DimensionMismatch, "forward_batch: output size mismatch");
    for (std::size_t r = 0; r < rows; ++r)
        forward(x.subspan(r * dim, dim), out.subspan(r * classes, classes));
}

std::uint64_t LinearHead::fingerprint() const noexcept {
    std::uint64_t h = mix64(classes ^ (dim << 32));
    h = hash_doubles(h, weights);
    return hash_doubles(h, bias);
}

Vec forward_logits(const LinearHead& head, std::span<const double> x) {
    Vec out(head.classes);
    head.forward(x, out);
    return out;
}

LinearHead expand_head(const LinearHead& head, std::size_t new_classes, HeadInit init, Rng& rng) {
    require(new_classes >= 1, ErrorCode::InvalidArgument, "expand_head: need at least one new class");
    require(head.dim > 0, ErrorCode::InvalidArgument, "expand_head: head has no dimension");
    LinearHead out = head;
    const std::size_t old = head.classes;
    out.classes = old + new_classes;
    out.weights.resize(out.classes * out.dim, 0.0);
    out.bias.resize(out.classes, 0.0);
    if (init == HeadInit::copy_scaled && old == 0) init = HeadInit::seeded_uniform;
    switch (init) {
        case HeadInit::zeros:
            break;
        case HeadInit::copy_scaled:
            for (std::size_t j = 0; j < new_classes; ++j) {
                auto src = head.row(j % old);
                auto dst = out.row(old + j);
                for (std::size_t i = 0; i < out.dim; ++i) dst[i] = 0.1 * src[i];
            }
            break;
        case HeadInit::seeded_uniform: {
            const double a = 1.0 / std::sqrt(static_cast<double>(out.dim));
            for (std::size_t i = old * out.dim; i < out.weights.size(); ++i) out.weights[i] = rng.uniform(-a, a);
            break;
        }
    }
    return out;
}

HeadGrad HeadGrad::zeros_like(const LinearHead& head) {
    return {std::vector<double>(head.weights.size(), 0.0), std::vector<double>(head.bias.size(), 0.0)};
}

void HeadGrad::clear() {
    std::fill(weights.begin(), weights.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
}

void accumulate_head_grad(const LinearHead& head, std::span<const double> x, std::size_t rows,
                          std::span<const double> dlogits, HeadGrad& grad) {
    require(x.size() == rows * head.dim && dlogits.size() == rows * head.classes, ErrorCode::ShapeMismatch,
            "accumulate_head_grad: shape mismatch");
    require(grad.weights.size() == head.weights.size() && grad.bias.size() == head.bias.size(),
            ErrorCode::ShapeMismatch, "accumulate_head_grad: gradient buffer shape");
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = x.subspan(r * head.dim, head.dim);
        for (std::size_t c = 0; c < head.classes; ++c) {
            const double g = dlogits[r * head.classes + c];
            if (g == 0.0) continue;
            simd::axpy(g, xr, {grad.weights.data() + c * head.dim, head.dim});
            grad.bias[c] += g;
        }
    }
}

void head_input_grad(const LinearHead& head, std::span<const double> dlogits, std::span<double> dx) {
    require(dlogits.size() == head.classes && dx.size() == head.dim, ErrorCode::ShapeMismatch,
            "head_input_grad: shape mismatch");
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t c = 0; c < head.classes; ++c) simd::axpy(dlogits[c], head.row(c), dx);
}

// ---------------------------------------------------------------------------
// SGD

double SgdState::lr_at(std::size_t step, std::size_t total_steps) const {
    if (cfg_.schedule == LrSchedule::constant || total_steps == 0) return cfg_.lr0;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return cfg_.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void SgdState::sync(const LinearHead& head) {
    if (dim_ != head.dim) {
        require(vw_.empty(), ErrorCode::ShapeMismatch, "sgd: head dimension changed");
        dim_ = head.dim;
    }
    require(vw_.size() <= head.weights.size(), ErrorCode::ShapeMismatch, "sgd: head shrank");
    vw_.resize(head.weights.size(), 0.0);
    vb_.resize(head.bias.size(), 0.0);
}

void SgdState::step(LinearHead& head, const HeadGrad& grad, std::size_t step, std::size_t total_steps) {
    require(grad.weights.size() == head.weights.size() && grad.bias.size() == head.bias.size(),
            ErrorCode::ShapeMismatch, "sgd_step: gradient shape mismatch");
    sync(head);
    const double lr = lr_at(step, total_steps);
    const auto& k = simd::active();
    k.sgd_momentum(head.weights.data(), vw_.data(), grad.weights.data(), head.weights.size(), lr,
                   cfg_.momentum, cfg_.weight_decay);
    k.sgd_momentum(head.bias.data(), vb_.data(), grad.bias.data(), head.bias.size(), lr, cfg_.momentum,
                   cfg_.weight_decay);
}

// ---------------------------------------------------------------------------
// Weight alignment

LinearHead weight_align(const LinearHead& head, std::span<const std::size_t> old_rows,
                        std::span<const std::size_t> new_rows) {
    require(!old_rows.empty() && !new_rows.empty(), ErrorCode::InvalidArgument,
            "weight_align: both class sets must be nonempty");
    auto mean_norm = [&](std::span<const std::size_t> rows) {
        double s = 0.0;
        for (std::size_t r : rows) {
            require(r < head.classes, ErrorCode::InvalidArgument, "weight_align: row out of range");
            s += l2_norm(head.row(r));
        }
        return s / static_cast<double>(rows.size());
    };
    const double old_norm = mean_norm(old_rows);
    const double new_norm = mean_norm(new_rows);
    require(old_norm > 0.0 && new_norm > 0.0, ErrorCode::InvalidArgument, "weight_align: zero mean norm");
    const double gamma = old_norm / new_norm;
    LinearHead out = head;
    for (std::size_t r : new_rows)
        for (double& w : out.row(r)) w *= gamma;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kHeadMagic[4] = {'O', 'C', 'H', '1'};
}

void save_head(const LinearHead& head, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    const auto c = static_cast<std::uint32_t>(head.classes);
    const auto d = static_cast<std::uint32_t>(head.dim);
    out.write(kHeadMagic, 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
    out.write(reinterpret_cast<const char*>(&d), 4);
    out.write(reinterpret_cast<const char*>(head.weights.data()), static_cast<std::streamsize>(head.weights.size() * 8));
    out.write(reinterpret_cast<const char*>(head.bias.data()), static_cast<std::streamsize>(head.bias.size() * 8));
    if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

LinearHead load_head(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::FileNotFound, "no such checkpoint: " + path.string());
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    std::uint32_t c = 0, d = 0;
    if (!in.read(magic, 4) || std::memcmp(magic, kHeadMagic, 4) != 0)
        fail(ErrorCode::MalformedHeader, "bad head magic in " + path.string());
    if (!in.read(reinterpret_cast<char*>(&c), 4) || !in.read(reinterpret_cast<char*>(&d), 4) || d == 0)
        fail(ErrorCode::MalformedHeader, "bad head shape in " + path.string());
    const std::uint64_t expected = 12ULL + 8ULL * c * d + 8ULL * c;
    if (std::filesystem::file_size(path) != expected)
        fail(ErrorCode::DimensionMismatch, "checkpoint size does not match header: " + path.string());
    LinearHead head;
    head.classes = c;
    head.dim = d;
    head.weights.resize(static_cast<std::size_t>(c) * d);
    head.bias.resize(c);
    in.read(reinterpret_cast<char*>(head.weights.data()), static_cast<std::streamsize>(head.weights.size() * 8));
    in.read(reinterpret_cast<char*>(head.bias.data()), static_cast<std::streamsize>(head.bias.size() * 8));
    if (!in) fail(ErrorCode::Io, "short read in " + path.string());
    return head;
}

}  // namespace ocil
