#pragma once

// Per-task losses and the uncertainty-weighted combination
//   L = sum_i 0.5 * exp(-eta_i) * L_i + 0.5 * eta_i,   eta_i = log(sigma_i^2).

#include <cstdint>
#include <span>
#include <vector>

#include "sparseshare/autograd.hpp"
#include "sparseshare/model.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

/// Target for one task on one batch. Segmentation uses `classes` (one index
/// per pixel, (B,H,W) order); every other kind uses `values`.
template <typename T>
struct TaskTarget {
    Tensor<T> values;
    std::vector<std::int32_t> classes;
};

namespace loss {

/// Mean per-pixel cross-entropy of softmax(logits) over (B,K,H,W) logits.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::int32_t> classes);
/// Mean squared error.
template <typename T>
Var mse(Tape<T>& tape, Var pred, const Tensor<T>& target);
/// 1 - mean per-pixel dot(pred, target) over (B,3,H,W) unit fields; in [0, 2].
template <typename T>
Var cosine_loss(Tape<T>& tape, Var pred, const Tensor<T>& target);
/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, const Tensor<T>& target);

/// Dispatches on the task kind. Throws std::out_of_range on invalid class indices.
template <typename T>
Var task_loss(Tape<T>& tape, TaskKind kind, Var prediction, const TaskTarget<T>& target);

/// Differentiable in every loss and in eta (shape (N)).
template <typename T>
Var combine_uncertainty(Tape<T>& tape, std::span<const Var> losses, Var eta);

/// Eager forms.
template <typename T>
double task_loss(TaskKind kind, const Tensor<T>& prediction, const TaskTarget<T>& target);
double combine_uncertainty(std::span<const double> losses, std::span<const double> eta);

}  // namespace loss

/// Registry holding the learnable log-variances as one entry, "uncertainty.eta",
/// initialized to zero (sigma = 1). Never shared, never regularized.
template <typename T>
ParamRegistry<T> make_uncertainty_weights(std::size_t tasks);

}  // namespace sparseshare
