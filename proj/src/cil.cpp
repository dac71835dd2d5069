#include "ocil/cil.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "ocil/error.hpp"
#include "ocil/losses.hpp"

namespace ocil {

void CilConfig::validate() const {
    require(epochs_per_task >= 1, ErrorCode::Config, "cil: epochs must be >= 1");
    require(batch_size >= 2, ErrorCode::Config, "cil: batch_size must be >= 2");
    require(distill_temperature > 0.0, ErrorCode::Config, "cil: distill_temperature must be positive");
    require(distill_weight >= 0.0, ErrorCode::Config, "cil: distill_weight must be >= 0");
    require(sgd.lr0 > 0.0 && sgd.momentum >= 0.0 && sgd.weight_decay >= 0.0, ErrorCode::Config,
            "cil: invalid optimizer settings");
}

CilModel CilModel::create(Extractor extractor) {
    CilModel m{std::move(extractor), {}, {}};
    m.head = LinearHead::empty(m.extractor.output_dim());
    return m;
}

std::size_t CilModel::row_of(int label) const {
    const auto it = std::find(seen_classes.begin(), seen_classes.end(), label);
    require(it != seen_classes.end(), ErrorCode::InvalidArgument,
            "label " + std::to_string(label) + " has not been seen");
    return static_cast<std::size_t>(it - seen_classes.begin());
}

std::size_t argmax(std::span<const double> v) {
    require(!v.empty(), ErrorCode::EmptyInput, "argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::size_t CilModel::predict_row(std::span<const double> x) const {
    const Vec z = extractor.apply(x);
    return argmax(forward_logits(head, z));
}

TrainResult train_task(const CilModel& model, const TaskStream& stream, std::size_t t,
                       const MemoryBuffer& memory, const CilConfig& cfg, Rng& rng) {
    cfg.validate();
    require(t >= 1 && t <= stream.size(), ErrorCode::InvalidArgument, "train_task: step out of range");
    require(model.seen_classes.size() == stream.seen_classes(t).size() - stream.task(t).classes.size(),
            ErrorCode::InvalidArgument, "train_task: previous steps have not been trained");
    const Task& task = stream.task(t);
    require(task.train.n > 0, ErrorCode::EmptyInput, "train_task: empty new-task training set");

    TrainResult out{model, {}, {}};
    CilModel& m = out.model;
    const LinearHead old_head = model.head;
    Rng expand_rng = rng.substream("expand");
    m.head = expand_head(m.head, task.classes.size(), cfg.init, expand_rng);
    m.seen_classes.insert(m.seen_classes.end(), task.classes.begin(), task.classes.end());

    FeatureDataset rows = task.train;
    rows.append(memory.materialize(stream));
    rows = m.extractor.apply(rows);
    std::vector<int> targets(rows.n);
    for (std::size_t i = 0; i < rows.n; ++i) targets[i] = static_cast<int>(m.row_of(rows.labels[i]));

    const bool distill = cfg.method != CilMethod::replay && old_head.classes > 0 && cfg.distill_weight > 0.0;
    const std::size_t batches_per_epoch = (rows.n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = static_cast<std::size_t>(cfg.epochs_per_task) * batches_per_epoch;
    const std::size_t C = m.head.classes;
    const std::size_t d = m.head.dim;

    SgdState opt(cfg.sgd);
    HeadGrad grad = HeadGrad::zeros_like(m.head);
    std::vector<double> xb, logits, dlogits, old_logits;
    std::vector<int> yb;
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
        Rng epoch_rng = rng.substream("epoch", static_cast<std::uint64_t>(epoch));
        const auto order = epoch_rng.permutation(rows.n);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        const double epoch_lr = opt.lr_at(step, total_steps);
        for (std::size_t start = 0; start < rows.n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, rows.n - start);
            xb.resize(b * d);
            yb.resize(b);
            for (std::size_t i = 0; i < b; ++i) {
                const auto r = rows.row(order[start + i]);
                std::copy(r.begin(), r.end(), xb.begin() + static_cast<std::ptrdiff_t>(i * d));
                yb[i] = targets[order[start + i]];
            }
            logits.assign(b * C, 0.0);
            m.head.forward_batch(xb, b, logits);
            for (std::size_t i = 0; i < b; ++i)
                if (argmax({logits.data() + i * C, C}) == static_cast<std::size_t>(yb[i])) ++correct;

            dlogits.assign(b * C, 0.0);
            double loss = cross_entropy(logits, C, yb, dlogits);
            if (distill) {
                old_logits.assign(b * old_head.classes, 0.0);
                old_head.forward_batch(xb, b, old_logits);
                loss += cfg.distill_weight * distillation_kl(logits, C, old_logits, old_head.classes,
                                                             cfg.distill_temperature, dlogits, cfg.distill_weight);
            }
            grad.clear();
            accumulate_head_grad(m.head, xb, b, dlogits, grad);
            opt.step(m.head, grad, step, total_steps);
            ++step;
            loss_sum += loss * static_cast<double>(b);
        }
        out.log.push_back({t, epoch, loss_sum / static_cast<double>(rows.n), epoch_lr,
                           static_cast<double>(correct) / static_cast<double>(rows.n)});
    }

    if (cfg.method == CilMethod::replay_distill_wa && old_head.classes > 0) {
        std::vector<std::size_t> old_rows(old_head.classes), new_rows(C - old_head.classes);
        std::iota(old_rows.begin(), old_rows.end(), 0);
        std::iota(new_rows.begin(), new_rows.end(), old_head.classes);
        m.head = weight_align(m.head, old_rows, new_rows);
    }

    Rng mem_rng = rng.substream("memory");
    const Extractor& ex = m.extractor;
    out.memory = rebalance_memory(memory, stream, t, cfg.memory_strategy, mem_rng,
                                  [&ex](const FeatureDataset& ds) { return ex.apply(ds); });
    return out;
}

double evaluate_accuracy(const CilModel& model, const FeatureDataset& test) {
    require(test.n > 0, ErrorCode::EmptyInput, "evaluate_accuracy: empty test set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.n; ++i) {
        const std::size_t truth = model.row_of(test.labels[i]);
        if (model.predict_row(test.row(i)) == truth) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.n);
}

void write_training_log(const std::vector<TrainLogEntry>& log, const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : log)
        j.push_back({{"task", e.task}, {"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}, {"train_acc", e.train_acc}});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

std::string to_string(CilMethod m) {
    switch (m) {
        case CilMethod::replay: return "replay";
        case CilMethod::replay_distill: return "replay_distill";
        case CilMethod::replay_distill_wa: return "replay_distill_wa";
    }
    return "unknown";
}

CilMethod parse_cil_method(const std::string& s) {
    if (s == "replay") return CilMethod::replay;
    if (s == "replay_distill") return CilMethod::replay_distill;
    if (s == "replay_distill_wa") return CilMethod::replay_distill_wa;
    fail(ErrorCode::Config, "unknown cil method '" + s + "'");
}

}  // namespace ocil
