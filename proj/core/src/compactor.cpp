#include "sparseshare/compactor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "sparseshare/rng.hpp"

namespace sparseshare {

namespace {

template <typename T>
std::size_t layer_extra_params(const ParamRegistry<T>& params, const ConvLayer& l) {
    std::size_t n = params.at(l.bias).value.numel();
    if (l.affine_scale) n += params.at(*l.affine_scale).value.numel() + params.at(*l.affine_shift).value.numel();
    return n;
}

/// Conv that reads each layer's output tensor, or nullopt when the output
/// leaves the backbone. Identity skips are ignored.
std::vector<std::optional<std::size_t>> consumers(std::size_t n_layers, std::span<const BlockLayers> blocks) {
    std::vector<std::optional<std::size_t>> out(n_layers);
    if (!blocks.empty()) out[0] = blocks[0].conv1;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::optional<std::size_t> next =
            b + 1 < blocks.size() ? std::optional<std::size_t>(blocks[b + 1].conv1) : std::nullopt;
        out[blocks[b].conv1] = blocks[b].conv2;
        out[blocks[b].conv2] = next;
        if (blocks[b].proj) out[*blocks[b].proj] = next;
    }
    return out;
}

template <typename T, class Forward>
BenchResult time_forward(const Shape& batch_shape, std::size_t warmup, std::size_t reps, Forward&& forward) {
    if (reps < 5) throw std::invalid_argument("benchmark_backbone: reps must be >= 5, got " + std::to_string(reps));
    Tensor<T> x(batch_shape);
    Rng rng(derive_seed(0, "benchmark/input"));
    for (T& v : x.data()) v = static_cast<T>(rng.uniform());
    for (std::size_t i = 0; i < warmup; ++i) forward(x);
    BenchResult r;
    r.batch_shape = batch_shape;
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor<T> y = forward(x);
        const auto t1 = std::chrono::steady_clock::now();
        if (y.empty()) throw std::logic_error("benchmark_backbone: empty output");
        r.timings_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    const double n = static_cast<double>(reps);
    r.mean_ms = std::accumulate(r.timings_ms.begin(), r.timings_ms.end(), 0.0) / n;
    double ss = 0;
    for (double t : r.timings_ms) ss += (t - r.mean_ms) * (t - r.mean_ms);
    r.std_ms = std::sqrt(ss / (n - 1));
    std::vector<double> sorted = r.timings_ms;
    std::sort(sorted.begin(), sorted.end());
    r.median_ms = reps % 2 ? sorted[reps / 2] : 0.5 * (sorted[reps / 2 - 1] + sorted[reps / 2]);
    return r;
}

template <typename T>
struct CompactExec {
    const std::vector<typename CompactBackbone<T>::Layer>& layers;

    Tensor<T> conv(std::size_t i, const Tensor<T>& x) {
        const auto& l = layers[i];
        Tensor<T> y;
        if (l.bias_only) {
            const auto [ho, wo] = ops::conv_output_hw(x.dim(2), x.dim(3), l.weight.dim(2), l.weight.dim(3), l.options);
            const std::size_t F = l.weight.dim(0), hw = ho * wo;
            y = Tensor<T>({x.dim(0), F, ho, wo});
            for (std::size_t b = 0; b < x.dim(0); ++b) {
                for (std::size_t f = 0; f < F; ++f) std::fill_n(y.raw() + (b * F + f) * hw, hw, l.bias[f]);
            }
        } else {
            y = ops::conv2d(x, l.weight, &l.bias, l.options, std::span<const std::uint32_t>(l.channel_map));
        }
        if (l.affine_scale) y = ops::channel_affine(y, *l.affine_scale, *l.affine_shift);
        return y;
    }
    Tensor<T> relu(const Tensor<T>& x) { return ops::relu(x); }
    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return ops::add(a, b); }
};

}  // namespace

template <typename T>
std::size_t backbone_param_count(const MultiTaskModel<T>& model) {
    std::size_t n = 0;
    for (const ConvLayer& l : model.backbone_convs()) {
        n += model.params().at(l.weight).value.numel() + layer_extra_params(model.params(), l);
    }
    return n;
}

template <typename T>
CompactPlan plan_compaction(const MultiTaskModel<T>& model, const GroupPartition& partition, std::size_t image_h,
                            std::size_t image_w) {
    if (partition.scheme != GroupScheme::channel_wise) {
        throw std::invalid_argument("plan_compaction: partition must be channel_wise");
    }
    model.check_input({1, model.backbone_spec().in_channels, image_h, image_w});
    const auto& params = model.params();
    const auto& convs = model.backbone_convs();

    CompactPlan plan;
    plan.image_h = image_h;
    plan.image_w = image_w;
    std::vector<std::size_t> in_h(convs.size()), in_w(convs.size());
    // Spatial size entering each conv follows the backbone graph.
    {
        std::size_t h = image_h, w = image_w;
        auto out = [&](std::size_t layer, std::size_t ih, std::size_t iw) {
            in_h[layer] = ih;
            in_w[layer] = iw;
            const Shape& s = params.at(convs[layer].weight).value.shape();
            return ops::conv_output_hw(ih, iw, s[2], s[3], convs[layer].options);
        };
        std::tie(h, w) = out(0, h, w);
        for (const BlockLayers& b : model.blocks()) {
            const auto [h1, w1] = out(b.conv1, h, w);
            if (b.proj) out(*b.proj, h, w);
            std::tie(h, w) = out(b.conv2, h1, w1);
        }
    }

    for (std::size_t li = 0; li < convs.size(); ++li) {
        const ConvLayer& l = convs[li];
        const Tensor<T>& wt = params.at(l.weight).value;
        LayerPlan lp;
        lp.name = l.name;
        lp.param = l.weight;
        lp.dense_shape = wt.shape();
        const auto [ho, wo] = ops::conv_output_hw(in_h[li], in_w[li], wt.dim(2), wt.dim(3), l.options);
        lp.out_h = ho;
        lp.out_w = wo;
        bool covered = false;
        for (const Group& g : partition.groups) {
            if (g.param != l.weight) continue;
            covered = true;
            bool zero = true;
            g.indices.for_each([&](std::size_t i) { zero = zero && wt[i] == T{0}; });
            if (!zero) lp.kept.push_back(static_cast<std::uint32_t>(g.slot));
        }
        if (!covered) {
            throw std::invalid_argument("plan_compaction: partition has no groups for " + l.name);
        }
        std::sort(lp.kept.begin(), lp.kept.end());
        const std::size_t F = wt.dim(0), kk = wt.dim(2) * wt.dim(3), extra = layer_extra_params(params, l);
        plan.dense_params += wt.numel() + extra;
        plan.compact_params += F * lp.kept.size() * kk + extra;
        const std::uint64_t spatial = static_cast<std::uint64_t>(ho) * wo;
        plan.dense_macs += spatial * F * wt.dim(1) * kk;
        plan.compact_macs += spatial * F * lp.kept.size() * kk;
        plan.layers.push_back(std::move(lp));
    }

    const auto next = consumers(convs.size(), model.blocks());
    for (std::size_t li = 0; li < convs.size(); ++li) {
        const LayerPlan& lp = plan.layers[li];
        const std::size_t kk = lp.dense_shape[2] * lp.dense_shape[3];
        const std::size_t live_out = next[li] ? plan.layers[*next[li]].kept.size() : lp.dense_shape[0];
        plan.ideal_macs += static_cast<std::uint64_t>(lp.out_h) * lp.out_w * live_out * lp.kept.size() * kk;
    }
    return plan;
}

template <typename T>
CompactBackbone<T>::CompactBackbone(std::vector<Layer> layers, std::vector<BlockLayers> blocks)
    : layers_(std::move(layers)), blocks_(std::move(blocks)) {}

template <typename T>
Tensor<T> CompactBackbone<T>::forward(const Tensor<T>& images) const {
    CompactExec<T> ex{layers_};
    return run_backbone(0, std::span<const BlockLayers>(blocks_), ex, images);
}

template <typename T>
std::size_t CompactBackbone<T>::param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) {
        n += (l.bias_only ? 0 : l.weight.numel()) + l.bias.numel();
        if (l.affine_scale) n += l.affine_scale->numel() + l.affine_shift->numel();
    }
    return n;
}

template <typename T>
CompactBackbone<T> apply_compaction(const MultiTaskModel<T>& model, const CompactPlan& plan) {
    const auto& params = model.params();
    const auto& convs = model.backbone_convs();
    if (plan.layers.size() != convs.size()) {
        throw std::invalid_argument("apply_compaction: plan has " + std::to_string(plan.layers.size()) +
                                    " layers, model has " + std::to_string(convs.size()));
    }
    std::vector<typename CompactBackbone<T>::Layer> layers;
    for (std::size_t li = 0; li < convs.size(); ++li) {
        const ConvLayer& l = convs[li];
        const LayerPlan& lp = plan.layers[li];
        const Tensor<T>& wt = params.at(l.weight).value;
        if (lp.name != l.name || lp.dense_shape != wt.shape()) {
            throw std::invalid_argument("apply_compaction: plan layer " + lp.name + " does not match " + l.name);
        }
        const std::size_t F = wt.dim(0), C = wt.dim(1), kk = wt.dim(2) * wt.dim(3);
        for (std::size_t i = 0; i < lp.kept.size(); ++i) {
            if (lp.kept[i] >= C || (i > 0 && lp.kept[i] <= lp.kept[i - 1])) {
                throw std::invalid_argument("apply_compaction: invalid kept channel list for " + lp.name);
            }
        }
        typename CompactBackbone<T>::Layer cl;
        cl.name = l.name;
        cl.options = l.options;
        cl.bias = params.at(l.bias).value;
        if (l.affine_scale) {
            cl.affine_scale = params.at(*l.affine_scale).value;
            cl.affine_shift = params.at(*l.affine_shift).value;
        }
        const std::size_t K = lp.kept.size();
        if (K == C) {
            cl.weight = wt;
        } else if (K > 0) {
            cl.weight = Tensor<T>({F, K, wt.dim(2), wt.dim(3)});
            for (std::size_t f = 0; f < F; ++f) {
                for (std::size_t k = 0; k < K; ++k) {
                    std::copy_n(wt.raw() + (f * C + lp.kept[k]) * kk, kk, cl.weight.raw() + (f * K + k) * kk);
                }
            }
            cl.channel_map = lp.kept;
        } else {
            cl.weight = Tensor<T>({F, 1, wt.dim(2), wt.dim(3)});
            cl.bias_only = true;
        }
        layers.push_back(std::move(cl));
    }
    return CompactBackbone<T>(std::move(layers), model.blocks());
}

template <typename T>
BenchResult benchmark_backbone(const MultiTaskModel<T>& model, const Shape& batch_shape, std::size_t warmup,
                               std::size_t reps) {
    model.check_input(batch_shape);
    return time_forward<T>(batch_shape, warmup, reps, [&](const Tensor<T>& x) { return model.infer_shared(x); });
}

template <typename T>
BenchResult benchmark_backbone(const CompactBackbone<T>& model, const Shape& batch_shape, std::size_t warmup,
                               std::size_t reps) {
    return time_forward<T>(batch_shape, warmup, reps, [&](const Tensor<T>& x) { return model.forward(x); });
}

#define SPARSESHARE_INSTANTIATE_COMPACTOR(T)                                                                   \
    template class CompactBackbone<T>;                                                                        \
    template std::size_t backbone_param_count(const MultiTaskModel<T>&);                                      \
    template CompactPlan plan_compaction(const MultiTaskModel<T>&, const GroupPartition&, std::size_t,        \
                                         std::size_t);                                                        \
    template CompactBackbone<T> apply_compaction(const MultiTaskModel<T>&, const CompactPlan&);               \
    template BenchResult benchmark_backbone(const MultiTaskModel<T>&, const Shape&, std::size_t, std::size_t); \
    template BenchResult benchmark_backbone(const CompactBackbone<T>&, const Shape&, std::size_t, std::size_t);

SPARSESHARE_INSTANTIATE_COMPACTOR(float)
SPARSESHARE_INSTANTIATE_COMPACTOR(double)

}  // namespace sparseshare
