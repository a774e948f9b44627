#pragma once

// Task-quality metrics. IoU is the mean over classes present in prediction
// or target; classes absent from both are skipped.

#include <cstdint>
#include <span>
#include <string>

#include "sparseshare/model.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

enum class MetricKind { iou, cosine_similarity, mae, accuracy };

const char* metric_name(MetricKind kind);
MetricKind metric_for(TaskKind kind);
/// True when larger values are better.
bool higher_is_better(MetricKind kind);

struct MetricRecord {
    std::string task;
    MetricKind kind = MetricKind::mae;
    double value = 0;
    std::string split;
    std::size_t epoch = 0;
};

/// (B,K,H,W) logits against (B,H,W) class indices; argmax ties pick the lowest class.
template <typename T>
double iou(const Tensor<T>& logits, std::span<const std::int32_t> classes);

/// Mean over pixels of dot(pred, target) on (B,3,H,W) fields.
template <typename T>
double cosine_similarity_mean(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& target);

/// sigmoid(logit) >= 0.5, i.e. logit >= 0, predicts class 1.
template <typename T>
double accuracy(const Tensor<T>& logits, const Tensor<T>& targets);

}  // namespace sparseshare
