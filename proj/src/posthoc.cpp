#include "ocil/posthoc.hpp"

#include <algorithm>
#include <cmath>

#include "ocil/cil.hpp"
#include "ocil/error.hpp"
#include "ocil/simd/kernels.hpp"

namespace ocil {

namespace {
constexpr double kTemplateFloor = 1e-12;
}

std::string to_string(ScorerKind k) {
    switch (k) {
        case ScorerKind::msp: return "msp";
        case ScorerKind::maxlogit: return "maxlogit";
        case ScorerKind::energy: return "energy";
        case ScorerKind::gen: return "gen";
        case ScorerKind::odin: return "odin";
        case ScorerKind::react: return "react";
        case ScorerKind::klm: return "klm";
        case ScorerKind::nnguide: return "nnguide";
        case ScorerKind::relation_simplified: return "relation_simplified";
    }
    return "unknown";
}

ScorerKind parse_scorer_kind(const std::string& s) {
    for (ScorerKind k : kAllScorers)
        if (to_string(k) == s) return k;
    fail(ErrorCode::Config, "unknown scorer '" + s + "'");
}

void ScorerParams::validate() const {
    require(energy_tau > 0.0, ErrorCode::Config, "scorer: energy_tau must be positive");
    require(gen_gamma > 0.0 && gen_top_m >= 1, ErrorCode::Config, "scorer: invalid GEN settings");
    require(odin_temperature > 0.0 && odin_epsilon >= 0.0, ErrorCode::Config, "scorer: invalid ODIN settings");
    require(react_percentile >= 0.0 && react_percentile <= 100.0, ErrorCode::Config,
            "scorer: react_percentile must be in [0, 100]");
    require(knn_k >= 1, ErrorCode::Config, "scorer: knn_k must be >= 1");
}

bool needs_fit(ScorerKind k) noexcept {
    return k == ScorerKind::react || k == ScorerKind::klm || k == ScorerKind::nnguide ||
           k == ScorerKind::relation_simplified;
}

// ---------------------------------------------------------------------------
// ScoringModel

Vec ScoringModel::features(std::span<const double> x) const {
    Vec z = extractor->apply(x);
    if (feature_norm_tau > 0.0) {
        const double n = l2_norm(z);
        if (n > 0.0)
            for (double& v : z) v /= n * feature_norm_tau;
    }
    return z;
}

Vec ScoringModel::logits(std::span<const double> feature) const { return forward_logits(*head, feature); }

Vec ScoringModel::input_grad(std::span<const double> x, std::span<const double> dlogits) const {
    Vec dz(head->dim);
    head_input_grad(*head, dlogits, dz);
    if (feature_norm_tau > 0.0) {
        // z' = z / (||z|| tau):  dz = (dz' - u (u . dz')) / (||z|| tau), u = z / ||z||
        const Vec z = extractor->apply(x);
        const double n = l2_norm(z);
        if (n > 0.0) {
            const double proj = simd::dot(z, dz) / (n * n);
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = (dz[i] - proj * z[i]) / (n * feature_norm_tau);
        }
    }
    Vec dx(extractor->input_dim());
    extractor->backward(dz, dx);
    return dx;
}

// ---------------------------------------------------------------------------
// Logit-level scores

double msp_score(std::span<const double> logits) {
    const Vec p = softmax(logits, 1.0);
    return *std::max_element(p.begin(), p.end());
}

double maxlogit_score(std::span<const double> logits) {
    require(!logits.empty(), ErrorCode::EmptyInput, "maxlogit: empty logits");
    return *std::max_element(logits.begin(), logits.end());
}

double energy_score(std::span<const double> logits, double tau) { return logsumexp(logits, tau); }

double gen_score(std::span<const double> logits, double gamma, std::size_t top_m) {
    Vec p = softmax(logits, 1.0);
    const std::size_t m = std::min(top_m, p.size());
    std::partial_sort(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(m), p.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::pow(p[j], gamma) * std::pow(1.0 - p[j], gamma);
    return -s;
}

double kl_to_template(std::span<const double> p, std::span<const double> d) {
    require(p.size() == d.size(), ErrorCode::DimensionMismatch, "kl: size mismatch");
    double kl = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] <= 0.0) continue;
        kl += p[j] * (std::log(p[j]) - std::log(std::max(d[j], kTemplateFloor)));
    }
    return kl;
}

double klm_score(std::span<const double> logits, std::span<const std::optional<Vec>> templates) {
    const Vec p = softmax(logits, 1.0);
    double best = 0.0;
    bool any = false;
    for (const auto& t : templates) {
        if (!t) continue;
        const double kl = kl_to_template(p, *t);
        if (!any || kl < best) best = kl;
        any = true;
    }
    require(any, ErrorCode::InvalidArgument, "klm: no templates fitted");
    return -best;
}

// ---------------------------------------------------------------------------
// Input-level scores

Vec odin_input_gradient(const ScoringModel& model, std::span<const double> x, double temperature) {
    const Vec z = model.features(x);
    const Vec f = model.logits(z);
    const Vec p = softmax(f, temperature);
    const std::size_t top = argmax(f);
    // d/df log softmax_top(f / T) = (e_top - p) / T
    Vec g(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) g[j] = ((j == top ? 1.0 : 0.0) - p[j]) / temperature;
    return model.input_grad(x, g);
}

double odin_score(const ScoringModel& model, std::span<const double> x, double temperature, double epsilon) {
    Vec xp(x.begin(), x.end());
    if (epsilon != 0.0) {
        const Vec g = odin_input_gradient(model, x, temperature);
        for (std::size_t i = 0; i < xp.size(); ++i) {
            const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            xp[i] += epsilon * s;
        }
    }
    const Vec f = model.logits(model.features(xp));
    const Vec p = softmax(f, temperature);
    return *std::max_element(p.begin(), p.end());
}

double react_score(const ScoringModel& model, std::span<const double> x, double threshold, double tau) {
    Vec z = model.features(x);
    simd::active().clip_above(z.data(), threshold, z.data(), z.size());
    return energy_score(model.logits(z), tau);
}

std::vector<std::pair<std::size_t, double>> FeatureBank::nearest(std::span<const double> feature,
                                                                 std::size_t k) const {
    require(feature.size() == dim, ErrorCode::DimensionMismatch, "feature bank: dimension mismatch");
    require(rows > 0, ErrorCode::EmptyInput, "feature bank is empty");
    const double n = l2_norm(feature);
    std::vector<std::pair<std::size_t, double>> sims(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double s = n > 0.0 ? simd::dot({unit_features.data() + r * dim, dim}, feature) / n : 0.0;
        sims[r] = {r, std::clamp(s, -1.0, 1.0)};
    }
    const std::size_t kk = std::min(k, rows);
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(kk), sims.end(),
                      [](const auto& a, const auto& b) {
                          return a.second > b.second || (a.second == b.second && a.first < b.first);
                      });
    sims.resize(kk);
    return sims;
}

double nnguide_score(std::span<const double> feature, std::span<const double> logits, const FeatureBank& bank,
                     std::size_t k, double tau) {
    const auto nn = bank.nearest(feature, k);
    double guidance = 0.0;
    for (const auto& [r, s] : nn) guidance += s;
    guidance /= static_cast<double>(nn.size());
    return energy_score(logits, tau) * guidance;
}

double relation_score(std::span<const double> feature, const FeatureBank& bank, std::size_t k) {
    double s = 0.0;
    for (const auto& [r, sim] : bank.nearest(feature, k)) s += std::max(0.0, sim) * bank.msp[r];
    return s;
}

double percentile(std::vector<double> values, double p) {
    require(!values.empty(), ErrorCode::EmptyInput, "percentile: empty input");
    require(p >= 0.0 && p <= 100.0, ErrorCode::InvalidArgument, "percentile: p must be in [0, 100]");
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double v_lo = values[lo];
    if (frac == 0.0 || lo + 1 >= values.size()) return v_lo;
    const double v_hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return v_lo + frac * (v_hi - v_lo);
}

// ---------------------------------------------------------------------------
// Scorer

Scorer::Scorer(ScorerKind kind, ScorerParams params) : kind_(kind), params_(params) { params_.validate(); }

void Scorer::fit(const ScoringModel& model, const FeatureDataset& id_rows) {
    fit_ = {};
    fitted_ = true;
    if (!needs_fit(kind_)) return;
    require(id_rows.n > 0, ErrorCode::EmptyInput, "scorer fit: no ID rows");
    require(id_rows.d == model.input_dim(), ErrorCode::DimensionMismatch, "scorer fit: dimension mismatch");

    std::vector<Vec> feats(id_rows.n);
    for (std::size_t i = 0; i < id_rows.n; ++i) feats[i] = model.features(id_rows.row(i));

    switch (kind_) {
        case ScorerKind::react: {
            std::vector<double> acts;
            acts.reserve(id_rows.n * model.head->dim);
            for (const auto& z : feats) acts.insert(acts.end(), z.begin(), z.end());
            fit_.react_threshold = percentile(std::move(acts), params_.react_percentile);
            break;
        }
        case ScorerKind::klm: {
            const std::size_t C = model.head->classes;
            std::vector<Vec> sums(C, Vec(C, 0.0));
            std::vector<std::size_t> counts(C, 0);
            for (const auto& z : feats) {
                const Vec f = model.logits(z);
                const Vec p = softmax(f, 1.0);
                const std::size_t k = argmax(f);
                for (std::size_t j = 0; j < C; ++j) sums[k][j] += p[j];
                ++counts[k];
            }
            fit_.klm_templates.resize(C);
            for (std::size_t k = 0; k < C; ++k) {
                if (counts[k] == 0) continue;
                for (double& v : sums[k]) v /= static_cast<double>(counts[k]);
                fit_.klm_templates[k] = std::move(sums[k]);
            }
            break;
        }
        case ScorerKind::nnguide:
        case ScorerKind::relation_simplified: {
            FeatureBank& bank = fit_.bank;
            bank.dim = model.head->dim;
            for (const auto& z : feats) {
                const double n = l2_norm(z);
                if (n == 0.0) continue;
                for (double v : z) bank.unit_features.push_back(v / n);
                bank.msp.push_back(msp_score(model.logits(z)));
                ++bank.rows;
            }
            require(bank.rows > 0, ErrorCode::InvalidArgument, "scorer fit: all ID features are zero");
            break;
        }
        default:
            break;
    }
}

double Scorer::score(const ScoringModel& model, std::span<const double> x) const {
    require(x.size() == model.input_dim(), ErrorCode::DimensionMismatch, "score: input dimension mismatch");
    require(fitted_ || !needs_fit(kind_), ErrorCode::InvalidArgument, "score: scorer has not been fitted");
    switch (kind_) {
        case ScorerKind::odin:
            return odin_score(model, x, params_.odin_temperature, params_.odin_epsilon);
        case ScorerKind::react:
            return react_score(model, x, fit_.react_threshold, params_.energy_tau);
        default:
            break;
    }
    const Vec z = model.features(x);
    const Vec f = model.logits(z);
    switch (kind_) {
        case ScorerKind::msp: return msp_score(f);
        case ScorerKind::maxlogit: return maxlogit_score(f);
        case ScorerKind::energy: return energy_score(f, params_.energy_tau);
        case ScorerKind::gen: return gen_score(f, params_.gen_gamma, params_.gen_top_m);
        case ScorerKind::klm: return klm_score(f, fit_.klm_templates);
        case ScorerKind::nnguide: return nnguide_score(z, f, fit_.bank, params_.knn_k, params_.energy_tau);
        case ScorerKind::relation_simplified: return relation_score(z, fit_.bank, params_.knn_k);
        default: break;
    }
    fail(ErrorCode::Runtime, "unreachable scorer kind");
}

std::vector<double> Scorer::score_all(const ScoringModel& model, const FeatureDataset& ds) const {
    std::vector<double> out(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) out[i] = score(model, ds.row(i));
    return out;
}

}  // namespace ocil
