#pragma once

// Physical removal of zeroed input channels from the shared backbone.
//
// Only input channels are pruned. Output widths stay intact so residual
// additions keep their shapes; a layer that keeps no input channel emits its
// bias broadcast.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparseshare/model.hpp"
#include "sparseshare/ops.hpp"
#include "sparseshare/sparsity.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

struct LayerPlan {
    std::string name;
    std::size_t param = 0;  ///< registry index of the dense weight
    Shape dense_shape;      ///< (F,C,Kh,Kw)
    std::vector<std::uint32_t> kept;  ///< ascending input channels with a nonzero slice
    std::size_t out_h = 0, out_w = 0;
};

struct CompactPlan {
    std::vector<LayerPlan> layers;  ///< backbone conv order
    std::size_t image_h = 0, image_w = 0;
    std::size_t dense_params = 0;    ///< backbone scalars before compaction
    std::size_t compact_params = 0;  ///< backbone scalars after compaction
    std::uint64_t dense_macs = 0;    ///< per image
    std::uint64_t compact_macs = 0;  ///< per image, input-channel pruning only
    std::uint64_t ideal_macs = 0;    ///< per image, if producers also dropped outputs every consumer ignores
};

/// `partition` must be channel_wise over the model's regularized convs.
/// MAC counts are for one image of size image_h x image_w.
template <typename T>
CompactPlan plan_compaction(const MultiTaskModel<T>& model, const GroupPartition& partition, std::size_t image_h = 32,
                            std::size_t image_w = 32);

template <typename T>
class CompactBackbone {
public:
    struct Layer {
        std::string name;
        Tensor<T> weight;  ///< (F,K',Kh,Kw)
        Tensor<T> bias;
        std::vector<std::uint32_t> channel_map;  ///< empty when every input channel is kept
        bool bias_only = false;                  ///< no input channel kept
        ops::ConvOptions options;
        std::optional<Tensor<T>> affine_scale, affine_shift;
    };

    CompactBackbone(std::vector<Layer> layers, std::vector<BlockLayers> blocks);

    Tensor<T> forward(const Tensor<T>& images) const;
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::size_t param_count() const;

private:
    std::vector<Layer> layers_;
    std::vector<BlockLayers> blocks_;
};

/// Throws std::invalid_argument when the plan does not describe this model.
template <typename T>
CompactBackbone<T> apply_compaction(const MultiTaskModel<T>& model, const CompactPlan& plan);

/// Scalars in the backbone (weights, biases, affine parameters).
template <typename T>
std::size_t backbone_param_count(const MultiTaskModel<T>& model);

struct BenchResult {
    Shape batch_shape;
    std::vector<double> timings_ms;
    double mean_ms = 0;
    double std_ms = 0;  ///< sample std, 0 for one rep
    double median_ms = 0;
};

/// Forward-only wall time on a seeded uniform batch, monotonic clock.
/// Throws std::invalid_argument when reps < 5.
template <typename T>
BenchResult benchmark_backbone(const MultiTaskModel<T>& model, const Shape& batch_shape, std::size_t warmup,
                               std::size_t reps);
template <typename T>
BenchResult benchmark_backbone(const CompactBackbone<T>& model, const Shape& batch_shape, std::size_t warmup,
                               std::size_t reps);

}  // namespace sparseshare
