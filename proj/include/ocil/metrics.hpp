#pragma once

#include <span>

namespace ocil {

// Scores are oriented higher = more in-distribution.
struct ScoredSplit {
    std::span<const double> id_scores;
    std::span<const double> ood_scores;
};

// P(id > ood) + 0.5 * P(id == ood) over all pairs. O(n log n).
double auroc(const ScoredSplit& s);

// OOD acceptance rate at the largest threshold that keeps >= 95% of ID rows.
double fpr_at_tpr95(const ScoredSplit& s);

// Average precision with OOD as the positive class, ranked by ascending ID
// score. At equal scores ID rows rank first.
double average_precision(const ScoredSplit& s);

double average_over_steps(std::span<const double> values);

}  // namespace ocil
