#pragma once

// Fine-tuning OOD methods. The CIL model (extractor and head h_t) stays
// frozen; an extra head f_t is trained per step and only f_t is used for
// OOD scoring.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ocil/cil.hpp"
#include "ocil/posthoc.hpp"

namespace ocil {

enum class FinetuneMethod { plain, logitnorm, t2fnorm, ber };

// How the two hinge terms of the new-task regularizer are oriented.
//  literal       exactly as written: ID rows pay (max(0, p_in - E))^2,
//                pseudo-OOD rows pay (max(0, E - p_out))^2, mixed old rows
//                pay (max(0, E - p_in))^2.
//  energy_paper  the margin-energy convention: ID-side rows (new and mixed
//                old) pay (max(0, E - m_in))^2 and pseudo-OOD rows pay
//                (max(0, m_out - E))^2 with m_in = min(p_in, p_out) and
//                m_out = max(p_in, p_out), so ID energy is pushed low and
//                OOD energy high.
enum class HingeOrientation { literal, energy_paper };

enum class ExtraHeadInit { copy_from_cil, fresh };

struct BerConfig {
    double alpha = 0.1;
    double tau = 1.0;
    double p_in = -5.0;
    double p_out = -27.0;
    double lambda_old = 0.002;
    double beta_a = 1.0;
    double beta_b = 1.0;
    bool use_nter = true;
    bool use_oter = true;
    HingeOrientation orientation = HingeOrientation::literal;

    void validate() const;
};

struct FinetuneConfig {
    FinetuneMethod method = FinetuneMethod::ber;
    int epochs = 10;
    std::size_t batch_size = 128;
    SgdConfig sgd{};
    ExtraHeadInit init = ExtraHeadInit::copy_from_cil;
    double logitnorm_tau = 0.04;
    double t2fnorm_tau = 0.1;
    BerConfig ber{};

    void validate() const;
};

// E(x; f) = -tau * log sum_j exp(f_j / tau)
double energy(std::span<const double> logits, double tau);

// Mixup of different-class pairs inside one half-batch.
struct PseudoOodBatch {
    std::size_t dim = 0;
    std::vector<double> rows;                             // count x dim
    std::vector<std::pair<std::size_t, std::size_t>> sources;
    std::vector<double> betas;
    bool single_label = false;  // no valid pair could exist

    std::size_t count() const noexcept { return sources.size(); }
};

// Pairs row i with a seeded partner j; equal-label partners are redrawn up
// to 16 times and the pair is dropped if none differs. Each kept pair is
// mixed as beta * x_i + (1 - beta) * x_j with beta ~ Beta(a, b).
PseudoOodBatch synth_pseudo_ood(std::span<const double> x, std::span<const int> labels, std::size_t dim,
                                double beta_a, double beta_b, Rng& rng);

// Old-class samples lambda * x + (1 - lambda) * m.
struct MixedOldBatch {
    std::size_t dim = 0;
    std::vector<double> rows;                             // count x dim
    std::vector<int> labels;                              // label of the memory source
    std::vector<std::pair<std::size_t, std::size_t>> sources;  // (new row, memory row)

    std::size_t count() const noexcept { return labels.size(); }
};

// Pairs a seeded shuffle of the new batch with the memory batch by index,
// cycling the shorter one; the output has max(new_rows, mem_rows) rows.
MixedOldBatch synth_old_mix(std::span<const double> new_x, std::size_t new_rows, std::span<const double> mem_x,
                            std::span<const int> mem_labels, std::size_t dim, double lambda_old, Rng& rng);

struct LossWithGrad {
    double loss = 0.0;
    HeadGrad grad;
};

// New-task energy regularizer over ID rows and pseudo-OOD rows. An empty
// pseudo batch contributes 0.
LossWithGrad nter_loss(const LinearHead& head, std::span<const double> id_x, std::size_t id_rows,
                       const PseudoOodBatch& pseudo, const BerConfig& cfg);

// Old-task energy regularizer over mixed old rows.
LossWithGrad oter_loss(const LinearHead& head, const MixedOldBatch& mixed, const BerConfig& cfg);

struct BerLoss {
    double total = 0.0;
    double ce = 0.0;
    double nter = 0.0;
    double oter = 0.0;
    HeadGrad grad;
};

// CE + alpha * (L_n + L_o). Disabled components (cfg.use_nter/use_oter,
// empty mixed batch) contribute 0.
BerLoss ber_total_loss(const LinearHead& head, std::span<const double> ce_x, std::span<const int> ce_targets,
                       std::span<const double> id_x, std::size_t id_rows, const PseudoOodBatch& pseudo,
                       const MixedOldBatch& mixed, const BerConfig& cfg);

struct FinetuneLogEntry {
    std::size_t task = 0;
    int epoch = 0;
    double ce = 0.0;
    double nter = 0.0;
    double oter = 0.0;
    double lr = 0.0;
};

struct FinetuneResult {
    LinearHead head;
    double feature_norm_tau = 0.0;  // > 0 for T2FNorm
    std::vector<FinetuneLogEntry> log;
    std::vector<std::string> warnings;

    ScoringModel scoring_model(const Extractor& extractor) const { return {&extractor, &head, feature_norm_tau}; }
};

// Trains the extra head f_t for step t. `memory` is M_t (replay rows
// available while step t trains).
FinetuneResult finetune_step_loop(const CilModel& model, const TaskStream& stream, std::size_t t,
                                  const MemoryBuffer& memory, const FinetuneConfig& cfg, Rng& rng);

// One JSON object per line: {task, epoch, ce, nter, oter, lr}.
void write_finetune_log(const std::vector<FinetuneLogEntry>& log, const std::filesystem::path& path);

// z / (||z|| * tau), applied row-wise in place.
void t2f_normalize(std::span<double> rows, std::size_t dim, double tau);

std::string to_string(FinetuneMethod m);
FinetuneMethod parse_finetune_method(const std::string& s);
std::string to_string(HingeOrientation o);
HingeOrientation parse_hinge_orientation(const std::string& s);

}  // namespace ocil
