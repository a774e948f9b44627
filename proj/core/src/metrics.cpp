#include "sparseshare/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sparseshare {

const char* metric_name(MetricKind kind) {
    switch (kind) {
        case MetricKind::iou: return "iou";
        case MetricKind::cosine_similarity: return "cs";
        case MetricKind::mae: return "mae";
        case MetricKind::accuracy: return "accuracy";
    }
    return "?";
}

MetricKind metric_for(TaskKind kind) {
    switch (kind) {
        case TaskKind::segmentation: return MetricKind::iou;
        case TaskKind::depth: return MetricKind::mae;
        case TaskKind::normals: return MetricKind::cosine_similarity;
        case TaskKind::binary_classification: return MetricKind::accuracy;
    }
    throw std::invalid_argument("metric_for: unknown task kind");
}

bool higher_is_better(MetricKind kind) { return kind != MetricKind::mae; }

template <typename T>
double iou(const Tensor<T>& logits, std::span<const std::int32_t> classes) {
    if (logits.rank() != 4) throw ShapeError("iou: logits must be (B,K,H,W), got " + shape_str(logits.shape()));
    const std::size_t B = logits.dim(0), K = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    if (classes.size() != B * hw) {
        throw ShapeError("iou: " + std::to_string(classes.size()) + " targets for " + std::to_string(B * hw) +
                         " pixels");
    }
    std::vector<std::size_t> inter(K, 0), uni(K, 0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k) {
                if (logits[(b * K + k) * hw + p] > logits[(b * K + best) * hw + p]) best = k;
            }
            const auto t = classes[b * hw + p];
            if (t < 0 || static_cast<std::size_t>(t) >= K) throw std::out_of_range("iou: class index out of range");
            const auto tc = static_cast<std::size_t>(t);
            if (tc == best) {
                ++inter[tc];
                ++uni[tc];
            } else {
                ++uni[tc];
                ++uni[best];
            }
        }
    }
    double sum = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < K; ++k) {
        if (uni[k] == 0) continue;
        sum += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
        ++present;
    }
    return present ? sum / static_cast<double>(present) : 1.0;
}

template <typename T>
double cosine_similarity_mean(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred.shape(), target.shape(), "cosine_similarity_mean");
    if (pred.rank() != 4) throw ShapeError("cosine_similarity_mean: expected (B,C,H,W)");
    const std::size_t B = pred.dim(0), C = pred.dim(1), hw = pred.dim(2) * pred.dim(3);
    double sum = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            double d = 0;
            for (std::size_t c = 0; c < C; ++c) {
                d += static_cast<double>(pred[(b * C + c) * hw + p]) * target[(b * C + c) * hw + p];
            }
            sum += d;
        }
    }
    return sum / static_cast<double>(B * hw);
}

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred.shape(), target.shape(), "mae");
    double sum = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) sum += std::abs(static_cast<double>(pred[i]) - target[i]);
    return sum / static_cast<double>(pred.numel());
}

template <typename T>
double accuracy(const Tensor<T>& logits, const Tensor<T>& targets) {
    require_same_shape(logits.shape(), targets.shape(), "accuracy");
    std::size_t right = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const int pred = logits[i] >= T{0} ? 1 : 0;
        if (pred == (targets[i] >= T{0.5} ? 1 : 0)) ++right;
    }
    return static_cast<double>(right) / static_cast<double>(logits.numel());
}

#define SPARSESHARE_INSTANTIATE_METRICS(T)                                       \
    template double iou(const Tensor<T>&, std::span<const std::int32_t>);        \
    template double cosine_similarity_mean(const Tensor<T>&, const Tensor<T>&);  \
    template double mae(const Tensor<T>&, const Tensor<T>&);                     \
    template double accuracy(const Tensor<T>&, const Tensor<T>&);

SPARSESHARE_INSTANTIATE_METRICS(float)
SPARSESHARE_INSTANTIATE_METRICS(double)

}  // namespace sparseshare
