#pragma once

// Procedural multi-task scenes: spherical caps and boxes on a ground plane,
// rendered through a height field over the world square [0,2]^2.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparseshare/loss.hpp"
#include "sparseshare/model.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

/// Camera height; depth = kMaxHeight - height.
inline constexpr double kMaxHeight = 1.0;
inline constexpr double kWorldSize = 2.0;

struct Primitive {
    enum class Kind { sphere, box };
    Kind kind = Kind::sphere;
    double cx = 0, cy = 0;
    double radius = 0;         ///< sphere radius
    double sink = 0;           ///< sphere centre depth below the ground plane
    double half_x = 0, half_y = 0;  ///< box half extents
    double top = 0;            ///< box height
    double albedo[3] = {1, 1, 1};

    /// Height of this primitive's surface at (x, y), or a negative value outside it.
    double height_at(double x, double y) const;
};

struct DatasetConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t samples = 600;
    std::size_t min_primitives = 1;
    std::size_t max_primitives = 4;
    std::optional<std::size_t> force_primitives;
    std::uint64_t seed = 0;
    double noise = 0.02;
    double bright_threshold = 0.32;

    void validate() const;
};

struct SampleRecord {
    std::uint64_t seed = 0;
    Tensor<double> image;    ///< (3,H,W) in [0,1]
    std::vector<std::int32_t> seg;  ///< (H,W): 0 background, 1 sphere, 2 box
    Tensor<double> depth;    ///< (1,H,W)
    Tensor<double> normals;  ///< (3,H,W), unit length
    std::map<std::string, int> labels;  ///< "contains_sphere", "bright_scene"
    std::vector<Primitive> primitives;
    std::vector<std::int32_t> owner;  ///< (H,W): primitive index or -1 for ground
    double mean_luminance = 0;        ///< of the noiseless image

    std::size_t height() const { return depth.dim(1); }
    std::size_t width() const { return depth.dim(2); }
};

/// Height field over a primitive list: max over primitives, clamped at the
/// ground. `owner` receives the winning primitive or -1.
double scene_height(std::span<const Primitive> primitives, double x, double y, int* owner = nullptr);

/// Pixel (i, j) samples the world at ((j + 0.5) * pitch, (i + 0.5) * pitch).
double pixel_pitch(std::size_t extent);

SampleRecord generate_scene(std::uint64_t seed, const DatasetConfig& config);

struct Splits {
    std::vector<SampleRecord> train, val, test;
};

/// Sizes: round(0.6 n), round(0.2 n), remainder. Throws when n < 5.
Splits make_splits(const DatasetConfig& config);

template <typename T>
struct Batch {
    Tensor<T> images;                    ///< (B,3,H,W)
    std::vector<TaskTarget<T>> targets;  ///< one per task, in task order
    std::vector<std::size_t> indices;    ///< positions in the source split
    std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
};

/// Targets for `tasks` stacked from the records at `indices`.
template <typename T>
Batch<T> make_batch(std::span<const SampleRecord> split, std::span<const TaskSpec> tasks,
                    std::span<const std::size_t> indices);

/// One epoch of batches; Fisher-Yates order from `shuffle_seed`, last partial
/// batch kept. A `shuffle_seed` of nullopt keeps split order.
template <typename T>
std::vector<Batch<T>> iterate_batches(std::span<const SampleRecord> split, std::span<const TaskSpec> tasks,
                                      std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);

}  // namespace sparseshare
