#pragma once

// Batch losses over a logits matrix (rows x classes). Each function returns
// the mean loss over rows and, when `dlogits` is non-empty, adds
// weight * dL/dlogits into it.

#include <cstddef>
#include <span>

namespace ocil {

double cross_entropy(std::span<const double> logits, std::size_t classes, std::span<const int> targets,
                     std::span<double> dlogits = {}, double weight = 1.0);

// Cross-entropy on logits / (tau * (||logits|| + 1e-7)).
double logitnorm_cross_entropy(std::span<const double> logits, std::size_t classes,
                               std::span<const int> targets, double tau,
                               std::span<double> dlogits = {}, double weight = 1.0);

// T^2 * KL(softmax(old / T) || softmax(new[:, :old_classes] / T)).
// `new_logits` is rows x new_classes; only its first old_classes columns
// receive gradient.
double distillation_kl(std::span<const double> new_logits, std::size_t new_classes,
                       std::span<const double> old_logits, std::size_t old_classes, double temperature,
                       std::span<double> dlogits = {}, double weight = 1.0);

}  // namespace ocil
