#include "sparseshare/sparsity.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "sparseshare/format.hpp"

namespace sparseshare {

const char* scheme_name(GroupScheme scheme) {
    return scheme == GroupScheme::channel_wise ? "channel_wise" : "singleton_l1";
}

GroupScheme parse_scheme(std::string_view text) {
    if (text == "channel_wise") return GroupScheme::channel_wise;
    if (text == "singleton_l1") return GroupScheme::singleton_l1;
    throw std::invalid_argument("unknown grouping scheme: " + std::string(text));
}

namespace {

std::string layer_name(const std::string& param) {
    constexpr std::string_view suffix = ".weight";
    if (param.size() > suffix.size() && param.compare(param.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return param.substr(0, param.size() - suffix.size());
    }
    return param;
}

IndexSet channel_slice(const Shape& s, std::size_t c) {
    const std::size_t kk = s[2] * s[3];
    return {c * kk, s[0], s[1] * kk, kk};
}

}  // namespace

template <typename T>
GroupPartition make_partition(const ParamRegistry<T>& registry, GroupScheme scheme) {
    GroupPartition part;
    part.scheme = scheme;
    part.params = registry.regularized_indices();
    if (part.params.empty()) throw std::invalid_argument("make_partition: registry has no regularized tensor");
    for (std::size_t p : part.params) {
        const auto& e = registry.at(p);
        if (scheme == GroupScheme::channel_wise) {
            if (e.value.rank() != 4) {
                throw std::invalid_argument("make_partition: channel_wise grouping needs a rank-4 tensor, " + e.name +
                                            " has shape " + shape_str(e.value.shape()));
            }
            for (std::size_t c = 0; c < e.value.dim(1); ++c) {
                part.groups.push_back({p, c, channel_slice(e.value.shape(), c)});
            }
        } else {
            for (std::size_t j = 0; j < e.value.numel(); ++j) part.groups.push_back({p, j, IndexSet{j, 1, 0, 1}});
        }
    }
    return part;
}

template <typename T>
double group_norm(const Tensor<T>& tensor, const IndexSet& indices) {
    double sq = 0;
    indices.for_each([&](std::size_t i) { sq += static_cast<double>(tensor[i]) * tensor[i]; });
    return std::sqrt(sq);
}

template <typename T>
double group_penalty(const ParamRegistry<T>& registry, const GroupPartition& partition, double lambda) {
    if (lambda == 0) return 0;
    double total = 0;
    for (const Group& g : partition.groups) {
        total += std::sqrt(static_cast<double>(g.size())) * group_norm(registry.at(g.param).value, g.indices);
    }
    return lambda * total;
}

template <typename T>
std::vector<T> prox_group(std::span<const T> theta, double alpha_lambda, std::size_t n_g) {
    if (alpha_lambda < 0) throw std::invalid_argument("prox_group: alpha*lambda must be >= 0");
    std::vector<T> out(theta.begin(), theta.end());
    double sq = 0;
    for (T v : theta) sq += static_cast<double>(v) * v;
    const double r = std::sqrt(sq);
    const double t = alpha_lambda * std::sqrt(static_cast<double>(n_g));
    if (r <= t) {
        std::fill(out.begin(), out.end(), T{0});
    } else if (t > 0) {
        const double s = 1.0 - t / r;
        for (auto& v : out) v = static_cast<T>(s * v);
    }
    return out;
}

template <typename T>
bool shrink_group(Tensor<T>& tensor, const IndexSet& indices, double threshold) {
    const double r = group_norm(tensor, indices);
    if (r <= threshold) {
        indices.for_each([&](std::size_t i) { tensor[i] = T{0}; });
        return true;
    }
    if (threshold > 0) {
        const double s = 1.0 - threshold / r;
        indices.for_each([&](std::size_t i) { tensor[i] = static_cast<T>(s * tensor[i]); });
    }
    return false;
}

template <typename T>
void prox_all(ParamRegistry<T>& registry, const GroupPartition& partition, double alpha_lambda) {
    if (alpha_lambda < 0) throw std::invalid_argument("prox_all: alpha*lambda must be >= 0");
    if (alpha_lambda == 0) return;
    for (const Group& g : partition.groups) {
        shrink_group(registry.at(g.param).value, g.indices, alpha_lambda * std::sqrt(static_cast<double>(g.size())));
    }
}

template <typename T>
SparsityReport measure_sparsity(const ParamRegistry<T>& registry, const GroupPartition& partition,
                                std::size_t epoch) {
    SparsityReport r;
    r.epoch = epoch;
    for (const Group& g : partition.groups) {
        const Tensor<T>& t = registry.at(g.param).value;
        bool zero = true;
        g.indices.for_each([&](std::size_t i) { zero = zero && t[i] == T{0}; });
        ++r.groups;
        if (zero) ++r.zero_groups;
    }
    for (std::size_t p : partition.params) {
        const auto& e = registry.at(p);
        for (T v : e.value.data()) {
            ++r.scalars;
            if (v == T{0}) ++r.zero_scalars;
        }
        if (e.value.rank() == 4) {
            LayerChannels lc{layer_name(e.name), e.value.dim(1), 0};
            for (std::size_t c = 0; c < lc.total; ++c) {
                bool zero = true;
                channel_slice(e.value.shape(), c).for_each([&](std::size_t i) { zero = zero && e.value[i] == T{0}; });
                if (!zero) ++lc.nonzero;
            }
            r.layers.push_back(std::move(lc));
        }
    }
    r.group_sparsity_pct = r.groups ? 100.0 * static_cast<double>(r.zero_groups) / static_cast<double>(r.groups) : 0;
    r.param_sparsity_pct =
        r.scalars ? 100.0 * static_cast<double>(r.zero_scalars) / static_cast<double>(r.scalars) : 0;
    return r;
}

void write_profile_csv(std::ostream& os, std::span<const SparsityReport> profile) {
    os << "epoch,group_sparsity_pct,param_sparsity_pct\n";
    for (const auto& r : profile) {
        os << r.epoch << ',' << format_number(r.group_sparsity_pct) << ',' << format_number(r.param_sparsity_pct)
           << '\n';
    }
}

void write_layers_csv(std::ostream& os, const SparsityReport& report) {
    os << "layer,total_channels,nonzero_channels\n";
    for (const auto& l : report.layers) os << l.layer << ',' << l.total << ',' << l.nonzero << '\n';
}

#define SPARSESHARE_INSTANTIATE_SPARSITY(T)                                                           \
    template GroupPartition make_partition(const ParamRegistry<T>&, GroupScheme);                    \
    template double group_penalty(const ParamRegistry<T>&, const GroupPartition&, double);           \
    template std::vector<T> prox_group(std::span<const T>, double, std::size_t);                     \
    template double group_norm(const Tensor<T>&, const IndexSet&);                                   \
    template bool shrink_group(Tensor<T>&, const IndexSet&, double);                                 \
    template void prox_all(ParamRegistry<T>&, const GroupPartition&, double);                        \
    template SparsityReport measure_sparsity(const ParamRegistry<T>&, const GroupPartition&, std::size_t);

SPARSESHARE_INSTANTIATE_SPARSITY(float)
SPARSESHARE_INSTANTIATE_SPARSITY(double)

}  // namespace sparseshare
