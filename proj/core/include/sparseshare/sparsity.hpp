#pragma once

// Parameter grouping, the l1/l2 group penalty, its closed-form proximal
// operator, and sparsity accounting over the regularized backbone weights.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparseshare/model.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

enum class GroupScheme { channel_wise, singleton_l1 };

const char* scheme_name(GroupScheme scheme);
GroupScheme parse_scheme(std::string_view text);

/// Strided flat-index set: offset + o*outer_stride + i for o < outer_count, i < inner_len.
struct IndexSet {
    std::size_t offset = 0;
    std::size_t outer_count = 1;
    std::size_t outer_stride = 0;
    std::size_t inner_len = 1;

    std::size_t size() const noexcept { return outer_count * inner_len; }

    template <class F>
    void for_each(F&& f) const {
        for (std::size_t o = 0; o < outer_count; ++o) {
            const std::size_t base = offset + o * outer_stride;
            for (std::size_t i = 0; i < inner_len; ++i) f(base + i);
        }
    }
};

struct Group {
    std::size_t param = 0;  ///< registry index
    std::size_t slot = 0;   ///< input channel (channel_wise) or flat element (singleton_l1)
    IndexSet indices;
    std::size_t size() const noexcept { return indices.size(); }
};

/// Disjoint, exhaustive groups over every regularized tensor, ordered by
/// layer then slot.
struct GroupPartition {
    GroupScheme scheme = GroupScheme::channel_wise;
    std::vector<Group> groups;
    std::vector<std::size_t> params;
};

struct LayerChannels {
    std::string layer;
    std::size_t total = 0;
    std::size_t nonzero = 0;
};

struct SparsityReport {
    double group_sparsity_pct = 0;
    double param_sparsity_pct = 0;
    std::vector<LayerChannels> layers;
    std::size_t epoch = 0;
    std::size_t groups = 0, zero_groups = 0;
    std::size_t scalars = 0, zero_scalars = 0;
};

/// Throws std::invalid_argument when the registry has no regularized tensor
/// or (channel_wise) a regularized tensor is not rank 4.
template <typename T>
GroupPartition make_partition(const ParamRegistry<T>& registry, GroupScheme scheme);

/// lambda * sum_g sqrt(n_g) * ||theta_g||_2
template <typename T>
double group_penalty(const ParamRegistry<T>& registry, const GroupPartition& partition, double lambda);

/// Block soft-threshold with t = alpha_lambda * sqrt(n_g): zero when
/// ||theta|| <= t, otherwise (1 - t/||theta||) * theta.
template <typename T>
std::vector<T> prox_group(std::span<const T> theta, double alpha_lambda, std::size_t n_g);

template <typename T>
double group_norm(const Tensor<T>& tensor, const IndexSet& indices);

/// In-place block soft-threshold of one group with an absolute threshold.
/// Returns true when the group was zeroed.
template <typename T>
bool shrink_group(Tensor<T>& tensor, const IndexSet& indices, double threshold);

/// Applies the group prox to every group; leaves unregularized entries alone.
template <typename T>
void prox_all(ParamRegistry<T>& registry, const GroupPartition& partition, double alpha_lambda);

/// A group counts as eliminated only if all of its entries are exactly zero.
template <typename T>
SparsityReport measure_sparsity(const ParamRegistry<T>& registry, const GroupPartition& partition,
                                std::size_t epoch = 0);

/// Columns: epoch, group_sparsity_pct, param_sparsity_pct
void write_profile_csv(std::ostream& os, std::span<const SparsityReport> profile);
/// Columns: layer, total_channels, nonzero_channels
void write_layers_csv(std::ostream& os, const SparsityReport& report);

}  // namespace sparseshare
