#pragma once

// Hard-parameter-sharing multi-task network: a small dilated residual
// backbone shared by every task, plus one disjoint head per task.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparseshare/autograd.hpp"
#include "sparseshare/ops.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T> value;
    bool shared = false;
    bool regularized = false;
    std::string owner;  ///< "backbone" or the owning task's name
};

/// Named parameter store. Invariants: unique names; regularized entries are
/// shared rank-4 conv weights.
template <typename T>
class ParamRegistry {
public:
    std::size_t add(std::string name, Tensor<T> value, bool shared, bool regularized, std::string owner);

    std::size_t size() const noexcept { return entries_.size(); }
    ParamEntry<T>& at(std::size_t i) { return entries_.at(i); }
    const ParamEntry<T>& at(std::size_t i) const { return entries_.at(i); }
    std::optional<std::size_t> find(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t total_scalars() const;
    std::vector<std::size_t> regularized_indices() const;

private:
    std::vector<ParamEntry<T>> entries_;
};

struct BlockSpec {
    std::size_t in_channels = 16;
    std::size_t out_channels = 16;
    std::size_t stride = 1;
    std::size_t dilation = 1;
};

struct BackboneSpec {
    std::size_t in_channels = 3;
    std::size_t stem_channels = 16;
    std::vector<BlockSpec> blocks;
    /// Adds an unregularized per-channel scale/shift after each 3x3 conv.
    bool affine = false;

    /// stem 3->16, blocks 16->16 (d1), 16->32 (s2), 32->32 (d2), 32->64 (d2).
    static BackboneSpec desk_default();
    std::size_t output_channels() const;
    std::size_t output_stride() const;
    void validate() const;
};

enum class TaskKind { segmentation, depth, normals, binary_classification };

const char* task_kind_name(TaskKind kind);

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::depth;
    std::size_t outputs = 1;  ///< classes for segmentation, 1 depth, 3 normals, 1 logit
    std::string label;        ///< target label key for binary classification
    std::size_t hidden = 16;  ///< classification head width

    static TaskSpec segmentation(std::string name = "segmentation", std::size_t classes = 3);
    static TaskSpec depth(std::string name = "depth");
    static TaskSpec normals(std::string name = "normals");
    static TaskSpec classification(std::string name, std::string label);

    /// Canonical tasks: segmentation, depth, normals, classification_a
    /// (contains_sphere), classification_b (bright_scene).
    static TaskSpec from_name(std::string_view name);
};

struct ConvLayer {
    std::string name;  ///< e.g. "backbone.block2.conv1"
    std::size_t weight = 0;
    std::size_t bias = 0;
    ops::ConvOptions options;
    std::optional<std::size_t> affine_scale;
    std::optional<std::size_t> affine_shift;
};

struct BlockLayers {
    std::size_t conv1 = 0;
    std::size_t conv2 = 0;
    std::optional<std::size_t> proj;
};

struct HeadLayers {
    std::size_t conv_weight = 0, conv_bias = 0;
    ops::ConvOptions conv_options;
    std::size_t fc1_weight = 0, fc1_bias = 0, fc2_weight = 0, fc2_bias = 0;  // classification only
};

/// Evaluates the backbone graph with an executor that supplies conv(layer, x),
/// relu(x) and add(a, b). Shared by training, inference and compacted models.
template <class Exec, class X>
X run_backbone(std::size_t stem, std::span<const BlockLayers> blocks, Exec& ex, X x) {
    x = ex.relu(ex.conv(stem, x));
    for (const BlockLayers& b : blocks) {
        X h = ex.relu(ex.conv(b.conv1, x));
        h = ex.conv(b.conv2, h);
        X skip = b.proj ? ex.conv(*b.proj, x) : x;
        x = ex.relu(ex.add(h, skip));
    }
    return x;
}

template <typename T>
class MultiTaskModel {
public:
    /// He-uniform (fan-in) conv/linear weights, zero biases, unit affine scales.
    /// Throws std::invalid_argument on an empty task list.
    static MultiTaskModel build(const BackboneSpec& backbone, std::vector<TaskSpec> tasks, std::uint64_t seed);

    ParamRegistry<T>& params() noexcept { return params_; }
    const ParamRegistry<T>& params() const noexcept { return params_; }
    const BackboneSpec& backbone_spec() const noexcept { return backbone_; }
    const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
    std::size_t task_index(std::string_view name) const;

    /// Backbone convs in evaluation order: stem, then conv1, conv2[, proj] per block.
    const std::vector<ConvLayer>& backbone_convs() const noexcept { return convs_; }
    const std::vector<BlockLayers>& blocks() const noexcept { return blocks_; }
    const HeadLayers& head(std::size_t task) const { return heads_.at(task); }

    /// One tape leaf per registry entry, in registry order.
    std::vector<Var> bind(Tape<T>& tape, bool requires_grad) const;
    Var forward_shared(Tape<T>& tape, std::span<const Var> bound, Var images) const;
    Var forward_task(Tape<T>& tape, std::span<const Var> bound, std::size_t task, Var features, std::size_t out_h,
                     std::size_t out_w) const;

    Tensor<T> infer_shared(const Tensor<T>& images) const;
    Tensor<T> infer_task(std::size_t task, const Tensor<T>& features, std::size_t out_h, std::size_t out_w) const;

    void check_input(const Shape& images) const;

private:
    BackboneSpec backbone_;
    std::vector<TaskSpec> tasks_;
    ParamRegistry<T> params_;
    std::vector<ConvLayer> convs_;
    std::vector<BlockLayers> blocks_;
    std::vector<HeadLayers> heads_;
};

/// Head evaluation on eager tensors; used by inference on dense and compact backbones.
template <typename T>
Tensor<T> run_head(const ParamRegistry<T>& params, const TaskSpec& task, const HeadLayers& head,
                   const Tensor<T>& features, std::size_t out_h, std::size_t out_w);

extern template class ParamRegistry<float>;
extern template class ParamRegistry<double>;
extern template class MultiTaskModel<float>;
extern template class MultiTaskModel<double>;

}  // namespace sparseshare
