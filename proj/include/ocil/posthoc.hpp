#pragma once

// Post-hoc OOD scorers. Every score is oriented so that higher means
// "more in-distribution".

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ocil/data.hpp"
#include "ocil/model.hpp"

namespace ocil {

enum class ScorerKind { msp, maxlogit, energy, gen, odin, react, klm, nnguide, relation_simplified };

inline constexpr ScorerKind kAllScorers[] = {
    ScorerKind::msp,   ScorerKind::maxlogit, ScorerKind::energy,  ScorerKind::gen,
    ScorerKind::odin,  ScorerKind::react,    ScorerKind::klm,     ScorerKind::nnguide,
    ScorerKind::relation_simplified,
};

std::string to_string(ScorerKind k);
ScorerKind parse_scorer_kind(const std::string& s);

struct ScorerParams {
    double energy_tau = 1.0;
    double gen_gamma = 0.1;
    std::size_t gen_top_m = 100;
    double odin_temperature = 1000.0;
    double odin_epsilon = 0.0014;
    double react_percentile = 90.0;
    std::size_t knn_k = 10;

    void validate() const;
};

// The pieces a scorer reads: frozen extractor, a head, and optionally the
// feature normalization used by T2FNorm-trained heads
// (z -> z / (||z|| * feature_norm_tau) when feature_norm_tau > 0).
struct ScoringModel {
    const Extractor* extractor = nullptr;
    const LinearHead* head = nullptr;
    double feature_norm_tau = 0.0;

    std::size_t input_dim() const { return extractor->input_dim(); }
    Vec features(std::span<const double> x) const;
    Vec logits(std::span<const double> features) const;
    // d(objective)/dx given d(objective)/dlogits.
    Vec input_grad(std::span<const double> x, std::span<const double> dlogits) const;
};

// L2-normalized ID feature bank used by the nearest-neighbour scorers.
struct FeatureBank {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> unit_features;  // rows x dim
    std::vector<double> msp;            // per-row max softmax under the head

    // Cosine similarity of the k nearest rows to `feature`, descending,
    // ties by lower row index. Rows paired with their similarity.
    std::vector<std::pair<std::size_t, double>> nearest(std::span<const double> feature, std::size_t k) const;
};

struct ScorerFit {
    double react_threshold = 0.0;
    std::vector<std::optional<Vec>> klm_templates;  // indexed by head row
    FeatureBank bank;
};

// Logit-level scores.
double msp_score(std::span<const double> logits);
double maxlogit_score(std::span<const double> logits);
double energy_score(std::span<const double> logits, double tau);
double gen_score(std::span<const double> logits, double gamma, std::size_t top_m);
double klm_score(std::span<const double> logits, std::span<const std::optional<Vec>> templates);

// Gradient w.r.t. x of log softmax_max(f(x) / T), the ODIN perturbation direction.
Vec odin_input_gradient(const ScoringModel& model, std::span<const double> x, double temperature);
double odin_score(const ScoringModel& model, std::span<const double> x, double temperature, double epsilon);
double react_score(const ScoringModel& model, std::span<const double> x, double threshold, double tau);
double nnguide_score(std::span<const double> feature, std::span<const double> logits, const FeatureBank& bank,
                     std::size_t k, double tau);
double relation_score(std::span<const double> feature, const FeatureBank& bank, std::size_t k);

// Linearly interpolated p-th percentile (0 <= p <= 100).
double percentile(std::vector<double> values, double p);

// KL(p || d) with template entries floored at 1e-12.
double kl_to_template(std::span<const double> p, std::span<const double> d);

class Scorer {
public:
    Scorer(ScorerKind kind, ScorerParams params);

    ScorerKind kind() const noexcept { return kind_; }
    const ScorerParams& params() const noexcept { return params_; }
    const ScorerFit& fit_state() const noexcept { return fit_; }

    // Fits ID statistics on raw (pre-extractor) rows.
    void fit(const ScoringModel& model, const FeatureDataset& id_rows);
    double score(const ScoringModel& model, std::span<const double> x) const;
    std::vector<double> score_all(const ScoringModel& model, const FeatureDataset& ds) const;

private:
    ScorerKind kind_;
    ScorerParams params_;
    ScorerFit fit_;
    bool fitted_ = false;
};

bool needs_fit(ScorerKind k) noexcept;

}  // namespace ocil
