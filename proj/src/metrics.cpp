#include "ocil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ocil/error.hpp"

namespace ocil {

namespace {

void check(const ScoredSplit& s) {
    require(!s.id_scores.empty() && !s.ood_scores.empty(), ErrorCode::EmptyInput,
            "metric needs nonempty ID and OOD scores");
    for (double v : s.id_scores) require(std::isfinite(v), ErrorCode::NonFinite, "non-finite ID score");
    for (double v : s.ood_scores) require(std::isfinite(v), ErrorCode::NonFinite, "non-finite OOD score");
}

std::vector<double> sorted(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

double auroc(const ScoredSplit& s) {
    check(s);
    const auto id = sorted(s.id_scores);
    const auto ood = sorted(s.ood_scores);
    // For each ID score count OOD scores strictly below and equal.
    std::uint64_t greater = 0, ties = 0;
    std::size_t lo = 0, hi = 0;
    for (double v : id) {
        while (lo < ood.size() && ood[lo] < v) ++lo;
        if (hi < lo) hi = lo;
        while (hi < ood.size() && ood[hi] <= v) ++hi;
        greater += lo;
        ties += hi - lo;
    }
    const double pairs = static_cast<double>(id.size()) * static_cast<double>(ood.size());
    return (static_cast<double>(greater) + 0.5 * static_cast<double>(ties)) / pairs;
}

double fpr_at_tpr95(const ScoredSplit& s) {
    check(s);
    std::vector<double> id(s.id_scores.begin(), s.id_scores.end());
    std::sort(id.begin(), id.end(), std::greater<>());
    const std::size_t n = id.size();
    // Smallest count m with m / n >= 0.95, in integer arithmetic.
    const std::size_t needed = (95 * n + 99) / 100;
    const double threshold = id[needed - 1];
    std::size_t accepted = 0;
    for (double v : s.ood_scores)
        if (v >= threshold) ++accepted;
    return static_cast<double>(accepted) / static_cast<double>(s.ood_scores.size());
}

double average_precision(const ScoredSplit& s) {
    check(s);
    struct Item {
        double score;
        bool ood;
        std::size_t index;
    };
    std::vector<Item> items;
    items.reserve(s.id_scores.size() + s.ood_scores.size());
    for (std::size_t i = 0; i < s.id_scores.size(); ++i) items.push_back({s.id_scores[i], false, i});
    for (std::size_t i = 0; i < s.ood_scores.size(); ++i) items.push_back({s.ood_scores[i], true, i});
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.ood != b.ood) return !a.ood;  // ID first at equal score
        return a.index < b.index;
    });
    double sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t rank = 0; rank < items.size(); ++rank) {
        if (!items[rank].ood) continue;
        ++positives;
        sum += static_cast<double>(positives) / static_cast<double>(rank + 1);
    }
    return sum / static_cast<double>(s.ood_scores.size());
}

double average_over_steps(std::span<const double> values) {
    require(!values.empty(), ErrorCode::EmptyInput, "average_over_steps: no steps");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

}  // namespace ocil
