#include "ocil/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ocil/error.hpp"
#include "ocil/losses.hpp"

namespace ocil {

void BerConfig::validate() const {
    require(alpha >= 0.0, ErrorCode::Config, "ber: alpha must be >= 0");
    require(tau > 0.0, ErrorCode::Config, "ber: tau must be positive");
    require(p_out < p_in, ErrorCode::Config, "ber: p_out must be below p_in");
    require(lambda_old >= 0.0 && lambda_old <= 1.0, ErrorCode::Config, "ber: lambda must be in [0, 1]");
    require(beta_a > 0.0 && beta_b > 0.0, ErrorCode::Config, "ber: beta parameters must be positive");
}

void FinetuneConfig::validate() const {
    require(epochs >= 1, ErrorCode::Config, "finetune: epochs must be >= 1");
    require(batch_size >= 2, ErrorCode::Config, "finetune: batch_size must be >= 2");
    require(logitnorm_tau > 0.0 && t2fnorm_tau > 0.0, ErrorCode::Config, "finetune: temperatures must be positive");
    require(sgd.lr0 > 0.0 && sgd.momentum >= 0.0 && sgd.weight_decay >= 0.0, ErrorCode::Config,
            "finetune: invalid optimizer settings");
    ber.validate();
}

double energy(std::span<const double> logits, double tau) { return -logsumexp(logits, tau); }

// ---------------------------------------------------------------------------
// Mixup synthesis

PseudoOodBatch synth_pseudo_ood(std::span<const double> x, std::span<const int> labels, std::size_t dim,
                                double beta_a, double beta_b, Rng& rng) {
    constexpr int kMaxRedraws = 16;
    const std::size_t n = labels.size();
    require(x.size() == n * dim, ErrorCode::ShapeMismatch, "synth_pseudo_ood: shape mismatch");
    PseudoOodBatch out;
    out.dim = dim;
    const bool distinct = n > 0 && std::any_of(labels.begin(), labels.end(), [&](int y) { return y != labels[0]; });
    if (!distinct) {
        out.single_label = true;
        return out;
    }
    const auto partner = rng.permutation(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = partner[i];
        for (int tries = 0; labels[j] == labels[i] && tries < kMaxRedraws; ++tries) j = rng.below(n);
        if (labels[j] == labels[i]) continue;
        const double beta = sample_beta(beta_a, beta_b, rng);
        for (std::size_t k = 0; k < dim; ++k)
            out.rows.push_back(beta * x[i * dim + k] + (1.0 - beta) * x[j * dim + k]);
        out.sources.emplace_back(i, j);
        out.betas.push_back(beta);
    }
    return out;
}

MixedOldBatch synth_old_mix(std::span<const double> new_x, std::size_t new_rows, std::span<const double> mem_x,
                            std::span<const int> mem_labels, std::size_t dim, double lambda_old, Rng& rng) {
    const std::size_t mem_rows = mem_labels.size();
    require(new_rows > 0 && mem_rows > 0, ErrorCode::EmptyInput, "synth_old_mix: both batches must be nonempty");
    require(new_x.size() == new_rows * dim && mem_x.size() == mem_rows * dim, ErrorCode::ShapeMismatch,
            "synth_old_mix: shape mismatch");
    const auto order = rng.permutation(new_rows);
    const std::size_t count = std::max(new_rows, mem_rows);
    MixedOldBatch out;
    out.dim = dim;
    out.rows.resize(count * dim);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t a = order[i % new_rows];
        const std::size_t m = i % mem_rows;
        for (std::size_t k = 0; k < dim; ++k)
            out.rows[i * dim + k] = lambda_old * new_x[a * dim + k] + (1.0 - lambda_old) * mem_x[m * dim + k];
        out.labels.push_back(mem_labels[m]);
        out.sources.emplace_back(a, m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Energy hinge losses

namespace {

enum class Push { below, above };

// mean over rows of (max(0, E - margin))^2 for Push::below, or
// (max(0, margin - E))^2 for Push::above. Gradient added into dlogits.
double hinge_energy(const LinearHead& head, std::span<const double> x, std::size_t rows, double margin, Push push,
                    double tau, HeadGrad& grad) {
    if (rows == 0) return 0.0;
    const std::size_t C = head.classes;
    std::vector<double> logits(rows * C), dlogits(rows * C, 0.0), p(C);
    head.forward_batch(x, rows, logits);
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto f = std::span<const double>(logits).subspan(r * C, C);
        const double e = -tau * softmax_into(f, tau, p);
        const double h = push == Push::below ? std::max(0.0, e - margin) : std::max(0.0, margin - e);
        if (h <= 0.0) continue;
        total += h * h;
        // dE/df = -softmax(f / tau); d(h^2)/dE = +2h (below) or -2h (above)
        const double de = push == Push::below ? 2.0 * h : -2.0 * h;
        for (std::size_t c = 0; c < C; ++c) dlogits[r * C + c] = -de * p[c] * inv;
    }
    accumulate_head_grad(head, x, rows, dlogits, grad);
    return total * inv;
}

struct Margins {
    double id_margin;
    Push id_push;
    double ood_margin;
    Push ood_push;
    double old_margin;
    Push old_push;
};

Margins margins_for(const BerConfig& cfg) {
    if (cfg.orientation == HingeOrientation::literal)
        return {cfg.p_in, Push::above, cfg.p_out, Push::below, cfg.p_in, Push::below};
    const double m_in = std::min(cfg.p_in, cfg.p_out);
    const double m_out = std::max(cfg.p_in, cfg.p_out);
    return {m_in, Push::below, m_out, Push::above, m_in, Push::below};
}

}  // namespace

LossWithGrad nter_loss(const LinearHead& head, std::span<const double> id_x, std::size_t id_rows,
                       const PseudoOodBatch& pseudo, const BerConfig& cfg) {
    require(id_rows > 0, ErrorCode::EmptyInput, "nter_loss: empty ID half");
    require(id_x.size() == id_rows * head.dim, ErrorCode::ShapeMismatch, "nter_loss: ID shape");
    const Margins m = margins_for(cfg);
    LossWithGrad out{0.0, HeadGrad::zeros_like(head)};
    out.loss = hinge_energy(head, id_x, id_rows, m.id_margin, m.id_push, cfg.tau, out.grad);
    if (pseudo.count() > 0) {
        require(pseudo.dim == head.dim, ErrorCode::ShapeMismatch, "nter_loss: pseudo-OOD shape");
        out.loss += hinge_energy(head, pseudo.rows, pseudo.count(), m.ood_margin, m.ood_push, cfg.tau, out.grad);
    }
    return out;
}

LossWithGrad oter_loss(const LinearHead& head, const MixedOldBatch& mixed, const BerConfig& cfg) {
    require(mixed.count() > 0, ErrorCode::EmptyInput, "oter_loss: empty mixed batch");
    require(mixed.dim == head.dim, ErrorCode::ShapeMismatch, "oter_loss: shape");
    const Margins m = margins_for(cfg);
    LossWithGrad out{0.0, HeadGrad::zeros_like(head)};
    out.loss = hinge_energy(head, mixed.rows, mixed.count(), m.old_margin, m.old_push, cfg.tau, out.grad);
    return out;
}

BerLoss ber_total_loss(const LinearHead& head, std::span<const double> ce_x, std::span<const int> ce_targets,
                       std::span<const double> id_x, std::size_t id_rows, const PseudoOodBatch& pseudo,
                       const MixedOldBatch& mixed, const BerConfig& cfg) {
    BerLoss out;
    out.grad = HeadGrad::zeros_like(head);
    const std::size_t rows = ce_targets.size();
    require(rows > 0 && ce_x.size() == rows * head.dim, ErrorCode::ShapeMismatch, "ber_total_loss: CE batch shape");
    std::vector<double> logits(rows * head.classes), dlogits(rows * head.classes, 0.0);
    head.forward_batch(ce_x, rows, logits);
    out.ce = cross_entropy(logits, head.classes, ce_targets, dlogits);
    accumulate_head_grad(head, ce_x, rows, dlogits, out.grad);

    auto add = [&](const LossWithGrad& part) {
        for (std::size_t i = 0; i < out.grad.weights.size(); ++i) out.grad.weights[i] += cfg.alpha * part.grad.weights[i];
        for (std::size_t i = 0; i < out.grad.bias.size(); ++i) out.grad.bias[i] += cfg.alpha * part.grad.bias[i];
    };
    if (cfg.use_nter && id_rows > 0) {
        const LossWithGrad ln = nter_loss(head, id_x, id_rows, pseudo, cfg);
        out.nter = ln.loss;
        add(ln);
    }
    if (cfg.use_oter && mixed.count() > 0) {
        const LossWithGrad lo = oter_loss(head, mixed, cfg);
        out.oter = lo.loss;
        add(lo);
    }
    out.total = out.ce + cfg.alpha * (out.nter + out.oter);
    return out;
}

// ---------------------------------------------------------------------------
// Per-step loop

void t2f_normalize(std::span<double> rows, std::size_t dim, double tau) {
    for (std::size_t r = 0; r * dim < rows.size(); ++r) {
        auto z = rows.subspan(r * dim, dim);
        const double n = l2_norm(z);
        if (n > 0.0)
            for (double& v : z) v /= n * tau;
    }
}

namespace {

void gather(const FeatureDataset& ds, std::span<const std::size_t> idx, std::vector<double>& x) {
    x.resize(idx.size() * ds.d);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto r = ds.row(idx[i]);
        std::copy(r.begin(), r.end(), x.begin() + static_cast<std::ptrdiff_t>(i * ds.d));
    }
}

}  // namespace

FinetuneResult finetune_step_loop(const CilModel& model, const TaskStream& stream, std::size_t t,
                                  const MemoryBuffer& memory, const FinetuneConfig& cfg, Rng& rng) {
    cfg.validate();
    require(t >= 1 && t <= stream.size(), ErrorCode::InvalidArgument, "finetune: step out of range");
    require(model.seen_classes.size() == stream.seen_classes(t).size(), ErrorCode::InvalidArgument,
            "finetune: CIL model has not been trained for this step");
    const std::uint64_t head_bits = model.head.fingerprint();
    const std::uint64_t extractor_bits = model.extractor.fingerprint();

    FinetuneResult out;
    if (cfg.init == ExtraHeadInit::copy_from_cil) {
        out.head = model.head;
    } else {
        Rng init_rng = rng.substream("init");
        out.head = expand_head(LinearHead::empty(model.head.dim), model.head.classes, HeadInit::seeded_uniform, init_rng);
    }
    LinearHead& f = out.head;
    const std::size_t C = f.classes;
    const std::size_t d = f.dim;

    FeatureDataset fresh = model.extractor.apply(stream.task(t).train);
    FeatureDataset mem = model.extractor.apply(memory.materialize(stream));
    if (cfg.method == FinetuneMethod::t2fnorm) {
        out.feature_norm_tau = cfg.t2fnorm_tau;
        t2f_normalize(fresh.features, d, cfg.t2fnorm_tau);
        t2f_normalize(mem.features, d, cfg.t2fnorm_tau);
    }
    auto targets_of = [&](const FeatureDataset& ds) {
        std::vector<int> y(ds.n);
        for (std::size_t i = 0; i < ds.n; ++i) y[i] = static_cast<int>(model.row_of(ds.labels[i]));
        return y;
    };
    const std::vector<int> fresh_y = targets_of(fresh);
    const std::vector<int> mem_y = targets_of(mem);
    require(fresh.n > 0, ErrorCode::EmptyInput, "finetune: empty new-task training set");

    SgdState opt(cfg.sgd);
    const std::size_t B = cfg.batch_size;
    std::vector<double> xb, logits, dlogits;
    std::vector<int> yb;
    std::size_t step = 0;

    if (cfg.method != FinetuneMethod::ber) {
        // Batches over T_t^{train+}.
        FeatureDataset all = fresh;
        all.append(mem);
        std::vector<int> all_y = fresh_y;
        all_y.insert(all_y.end(), mem_y.begin(), mem_y.end());
        const std::size_t total_steps = static_cast<std::size_t>(cfg.epochs) * ((all.n + B - 1) / B);
        HeadGrad grad = HeadGrad::zeros_like(f);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            Rng er = rng.substream("epoch", static_cast<std::uint64_t>(epoch));
            const auto order = er.permutation(all.n);
            const double epoch_lr = opt.lr_at(step, total_steps);
            double ce_sum = 0.0;
            for (std::size_t start = 0; start < all.n; start += B) {
                const std::size_t b = std::min(B, all.n - start);
                const std::span<const std::size_t> idx(order.data() + start, b);
                gather(all, idx, xb);
                yb.resize(b);
                for (std::size_t i = 0; i < b; ++i) yb[i] = all_y[idx[i]];
                logits.assign(b * C, 0.0);
                dlogits.assign(b * C, 0.0);
                f.forward_batch(xb, b, logits);
                const double loss = cfg.method == FinetuneMethod::logitnorm
                                        ? logitnorm_cross_entropy(logits, C, yb, cfg.logitnorm_tau, dlogits)
                                        : cross_entropy(logits, C, yb, dlogits);
                grad.clear();
                accumulate_head_grad(f, xb, b, dlogits, grad);
                opt.step(f, grad, step++, total_steps);
                ce_sum += loss * static_cast<double>(b);
            }
            out.log.push_back({t, epoch, ce_sum / static_cast<double>(all.n), 0.0, 0.0, epoch_lr});
        }
    } else {
        const BerConfig& ber = cfg.ber;
        if (mem.n == 0 && ber.use_oter)
            out.warnings.push_back("step " + std::to_string(t) + ": replay memory is empty, old-task term disabled");
        const std::size_t total_steps = static_cast<std::size_t>(cfg.epochs) * ((fresh.n + B - 1) / B);
        std::vector<double> half_a, half_b, mem_x;
        std::vector<int> y_a, y_b, mem_yb, ce_y;
        std::vector<double> ce_x;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            Rng er = rng.substream("epoch", static_cast<std::uint64_t>(epoch));
            const auto order = er.permutation(fresh.n);
            std::vector<std::size_t> mem_order;
            if (mem.n > 0) mem_order = er.substream("memory").permutation(mem.n);
            std::size_t mem_cursor = 0;
            const double epoch_lr = opt.lr_at(step, total_steps);
            double ce_sum = 0.0, ln_sum = 0.0, lo_sum = 0.0;
            std::size_t iters = 0;
            bool warned_single = false;
            for (std::size_t start = 0; start < fresh.n; start += B) {
                Rng it = er.substream("iter", start);
                const std::size_t b = std::min(B, fresh.n - start);
                const std::size_t na = b - b / 2;
                const std::span<const std::size_t> idx(order.data() + start, b);
                gather(fresh, idx.first(na), half_a);
                gather(fresh, idx.subspan(na), half_b);
                y_a.assign(b, 0);
                for (std::size_t i = 0; i < b; ++i) y_a[i] = fresh_y[idx[i]];
                y_b.assign(y_a.begin() + static_cast<std::ptrdiff_t>(na), y_a.end());
                y_a.resize(na);

                PseudoOodBatch pseudo;
                pseudo.dim = d;
                if (ber.use_nter && !y_b.empty()) {
                    Rng pr = it.substream("pseudo");
                    pseudo = synth_pseudo_ood(half_b, y_b, d, ber.beta_a, ber.beta_b, pr);
                    if (pseudo.single_label && !warned_single) {
                        out.warnings.push_back("step " + std::to_string(t) + ": single-label half batch, no pseudo-OOD rows");
                        warned_single = true;
                    }
                }

                ce_x = half_a;
                ce_y = y_a;
                MixedOldBatch mixed;
                mixed.dim = d;
                if (mem.n > 0) {
                    const std::size_t mb = std::min(b, mem.n);
                    std::vector<std::size_t> midx(mb);
                    for (std::size_t i = 0; i < mb; ++i) {
                        if (mem_cursor == mem.n) mem_cursor = 0;
                        midx[i] = mem_order[mem_cursor++];
                    }
                    gather(mem, midx, mem_x);
                    mem_yb.resize(mb);
                    for (std::size_t i = 0; i < mb; ++i) mem_yb[i] = mem_y[midx[i]];
                    ce_x.insert(ce_x.end(), mem_x.begin(), mem_x.end());
                    ce_y.insert(ce_y.end(), mem_yb.begin(), mem_yb.end());
                    if (ber.use_oter) {
                        gather(fresh, idx, xb);
                        Rng mr = it.substream("old_mix");
                        mixed = synth_old_mix(xb, b, mem_x, mem_yb, d, ber.lambda_old, mr);
                    }
                }

                const BerLoss loss = ber_total_loss(f, ce_x, ce_y, half_a, na, pseudo, mixed, ber);
                opt.step(f, loss.grad, step++, total_steps);
                ce_sum += loss.ce;
                ln_sum += loss.nter;
                lo_sum += loss.oter;
                ++iters;
            }
            const double inv = 1.0 / static_cast<double>(iters);
            out.log.push_back({t, epoch, ce_sum * inv, ln_sum * inv, lo_sum * inv, epoch_lr});
        }
    }

    require(model.head.fingerprint() == head_bits && model.extractor.fingerprint() == extractor_bits,
            ErrorCode::Runtime, "finetune: frozen CIL model was modified");
    return out;
}

void write_finetune_log(const std::vector<FinetuneLogEntry>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write '" + path.string() + "'");
    for (const auto& e : log) {
        const nlohmann::json j = {{"task", e.task}, {"epoch", e.epoch}, {"ce", e.ce},
                                  {"nter", e.nter}, {"oter", e.oter}, {"lr", e.lr}};
        out << j.dump() << '\n';
    }
}

std::string to_string(FinetuneMethod m) {
    switch (m) {
        case FinetuneMethod::plain: return "plain";
        case FinetuneMethod::logitnorm: return "logitnorm";
        case FinetuneMethod::t2fnorm: return "t2fnorm";
        case FinetuneMethod::ber: return "ber";
    }
    return "unknown";
}

FinetuneMethod parse_finetune_method(const std::string& s) {
    if (s == "plain") return FinetuneMethod::plain;
    if (s == "logitnorm") return FinetuneMethod::logitnorm;
    if (s == "t2fnorm") return FinetuneMethod::t2fnorm;
    if (s == "ber") return FinetuneMethod::ber;
    fail(ErrorCode::Config, "unknown fine-tuning method '" + s + "'");
}

std::string to_string(HingeOrientation o) { return o == HingeOrientation::literal ? "literal" : "energy_paper"; }

HingeOrientation parse_hinge_orientation(const std::string& s) {
    if (s == "literal") return HingeOrientation::literal;
    if (s == "energy_paper") return HingeOrientation::energy_paper;
    fail(ErrorCode::Config, "hinge_orientation must be 'literal' or 'energy_paper'");
}

}  // namespace ocil
