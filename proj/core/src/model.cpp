#include "sparseshare/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sparseshare/rng.hpp"

namespace sparseshare {

template <typename T>
std::size_t ParamRegistry<T>::add(std::string name, Tensor<T> value, bool shared, bool regularized,
                                  std::string owner) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    if (regularized && (!shared || value.rank() != 4)) {
        throw std::invalid_argument("regularized parameter " + name + " must be a shared rank-4 conv weight");
    }
    entries_.push_back({std::move(name), std::move(value), shared, regularized, std::move(owner)});
    return entries_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParamRegistry<T>::find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    return std::nullopt;
}

template <typename T>
std::size_t ParamRegistry<T>::index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw std::out_of_range("unknown parameter: " + std::string(name));
}

template <typename T>
std::size_t ParamRegistry<T>::total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

template <typename T>
std::vector<std::size_t> ParamRegistry<T>::regularized_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].regularized) out.push_back(i);
    }
    return out;
}

BackboneSpec BackboneSpec::desk_default() {
    BackboneSpec s;
    s.in_channels = 3;
    s.stem_channels = 16;
    s.blocks = {{16, 16, 1, 1}, {16, 32, 2, 1}, {32, 32, 1, 2}, {32, 64, 1, 2}};
    return s;
}

std::size_t BackboneSpec::output_channels() const {
    return blocks.empty() ? stem_channels : blocks.back().out_channels;
}

std::size_t BackboneSpec::output_stride() const {
    std::size_t s = 1;
    for (const auto& b : blocks) s *= b.stride;
    return s;
}

void BackboneSpec::validate() const {
    if (in_channels == 0 || stem_channels == 0) throw std::invalid_argument("backbone: channel counts must be positive");
    std::size_t c = stem_channels;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.in_channels != c) {
            throw std::invalid_argument("backbone: block " + std::to_string(i + 1) + " expects " +
                                        std::to_string(b.in_channels) + " input channels but receives " +
                                        std::to_string(c));
        }
        if (b.out_channels == 0 || b.stride == 0 || b.dilation == 0) {
            throw std::invalid_argument("backbone: block " + std::to_string(i + 1) + " has a zero attribute");
        }
        c = b.out_channels;
    }
}

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::segmentation: return "segmentation";
        case TaskKind::depth: return "depth";
        case TaskKind::normals: return "normals";
        case TaskKind::binary_classification: return "binary_classification";
    }
    return "unknown";
}

TaskSpec TaskSpec::segmentation(std::string name, std::size_t classes) {
    return {std::move(name), TaskKind::segmentation, classes, "", 16};
}
TaskSpec TaskSpec::depth(std::string name) { return {std::move(name), TaskKind::depth, 1, "", 16}; }
TaskSpec TaskSpec::normals(std::string name) { return {std::move(name), TaskKind::normals, 3, "", 16}; }
TaskSpec TaskSpec::classification(std::string name, std::string label) {
    return {std::move(name), TaskKind::binary_classification, 1, std::move(label), 16};
}

TaskSpec TaskSpec::from_name(std::string_view name) {
    if (name == "segmentation") return segmentation();
    if (name == "depth") return depth();
    if (name == "normals") return normals();
    if (name == "classification_a") return classification("classification_a", "contains_sphere");
    if (name == "classification_b") return classification("classification_b", "bright_scene");
    throw std::invalid_argument("unknown task: " + std::string(name));
}

namespace {

template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

std::string head_seed_tag(const TaskSpec& t, std::string_view part) {
    // Excludes the task name: identical heads for identical task definitions.
    return "head:" + std::string(task_kind_name(t.kind)) + ":" + t.label + ":" + std::to_string(t.outputs) + ":" +
           std::to_string(t.hidden) + ":" + std::string(part);
}

// Executors for run_backbone and the heads.
template <typename T>
struct TapeExec {
    Tape<T>& tape;
    std::span<const Var> bound;
    const std::vector<ConvLayer>& convs;

    Var conv(std::size_t layer, Var x) {
        const ConvLayer& l = convs[layer];
        Var y = ad::conv2d(tape, x, bound[l.weight], bound[l.bias], l.options);
        if (l.affine_scale) y = ad::channel_affine(tape, y, bound[*l.affine_scale], bound[*l.affine_shift]);
        return y;
    }
    Var relu(Var x) { return ad::relu(tape, x); }
    Var add(Var a, Var b) { return ad::add(tape, a, b); }
};

template <typename T>
struct EagerExec {
    const ParamRegistry<T>& params;
    const std::vector<ConvLayer>& convs;

    Tensor<T> conv(std::size_t layer, const Tensor<T>& x) {
        const ConvLayer& l = convs[layer];
        Tensor<T> y = ops::conv2d(x, params.at(l.weight).value, &params.at(l.bias).value, l.options);
        if (l.affine_scale) {
            y = ops::channel_affine(y, params.at(*l.affine_scale).value, params.at(*l.affine_shift).value);
        }
        return y;
    }
    Tensor<T> relu(const Tensor<T>& x) { return ops::relu(x); }
    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return ops::add(a, b); }
};

}  // namespace

template <typename T>
MultiTaskModel<T> MultiTaskModel<T>::build(const BackboneSpec& backbone, std::vector<TaskSpec> tasks,
                                           std::uint64_t seed) {
    if (tasks.empty()) throw std::invalid_argument("build_model: at least one task is required");
    backbone.validate();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (tasks[i].name == tasks[j].name) throw std::invalid_argument("duplicate task name: " + tasks[i].name);
        }
    }

    MultiTaskModel m;
    m.backbone_ = backbone;
    m.tasks_ = std::move(tasks);
    auto& reg = m.params_;

    auto add_conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                        ops::ConvOptions opt, bool with_affine) {
        ConvLayer l;
        l.name = name;
        l.options = opt;
        l.weight = reg.add(name + ".weight", he_uniform<T>({out, in, k, k}, in * k * k, derive_seed(seed, name)),
                           true, true, "backbone");
        l.bias = reg.add(name + ".bias", Tensor<T>({out}), true, false, "backbone");
        if (with_affine) {
            l.affine_scale = reg.add(name + ".affine.scale", Tensor<T>({out}, T{1}), true, false, "backbone");
            l.affine_shift = reg.add(name + ".affine.shift", Tensor<T>({out}), true, false, "backbone");
        }
        m.convs_.push_back(l);
        return m.convs_.size() - 1;
    };

    add_conv("backbone.stem", backbone.in_channels, backbone.stem_channels, 3, {1, 1, 1}, backbone.affine);
    for (std::size_t i = 0; i < backbone.blocks.size(); ++i) {
        const BlockSpec& b = backbone.blocks[i];
        const std::string prefix = "backbone.block" + std::to_string(i + 1);
        BlockLayers bl;
        bl.conv1 = add_conv(prefix + ".conv1", b.in_channels, b.out_channels, 3, {b.stride, b.dilation, b.dilation},
                            backbone.affine);
        bl.conv2 = add_conv(prefix + ".conv2", b.out_channels, b.out_channels, 3, {1, b.dilation, b.dilation},
                            backbone.affine);
        if (b.in_channels != b.out_channels || b.stride != 1) {
            bl.proj = add_conv(prefix + ".proj", b.in_channels, b.out_channels, 1, {b.stride, 0, 1}, false);
        }
        m.blocks_.push_back(bl);
    }

    const std::size_t feat = backbone.output_channels();
    for (const TaskSpec& t : m.tasks_) {
        const std::string prefix = "heads." + t.name;
        HeadLayers h;
        auto param = [&](const std::string& part, Shape shape, std::size_t fan_in) {
            return reg.add(prefix + "." + part, he_uniform<T>(std::move(shape), fan_in, derive_seed(seed, head_seed_tag(t, part))),
                           false, false, t.name);
        };
        auto zeros = [&](const std::string& part, std::size_t n) {
            return reg.add(prefix + "." + part, Tensor<T>({n}), false, false, t.name);
        };
        if (t.kind == TaskKind::binary_classification) {
            h.conv_options = {1, 1, 1};
            h.conv_weight = param("conv.weight", {t.hidden, feat, 3, 3}, feat * 9);
            h.conv_bias = zeros("conv.bias", t.hidden);
            h.fc1_weight = param("fc1.weight", {t.hidden, t.hidden}, t.hidden);
            h.fc1_bias = zeros("fc1.bias", t.hidden);
            h.fc2_weight = param("fc2.weight", {1, t.hidden}, t.hidden);
            h.fc2_bias = zeros("fc2.bias", 1);
        } else {
            h.conv_options = {1, 0, 1};
            h.conv_weight = param("conv.weight", {t.outputs, feat, 1, 1}, feat);
            h.conv_bias = zeros("conv.bias", t.outputs);
        }
        m.heads_.push_back(h);
    }
    return m;
}

template <typename T>
std::size_t MultiTaskModel<T>::task_index(std::string_view name) const {
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (tasks_[i].name == name) return i;
    }
    throw std::out_of_range("unknown task: " + std::string(name));
}

template <typename T>
void MultiTaskModel<T>::check_input(const Shape& images) const {
    if (images.size() != 4 || images[1] != backbone_.in_channels) {
        throw ShapeError("forward_shared: expected images (B," + std::to_string(backbone_.in_channels) +
                         ",H,W), got " + shape_str(images));
    }
    const std::size_t s = backbone_.output_stride();
    if (images[2] % s != 0 || images[3] % s != 0) {
        throw ShapeError("forward_shared: H and W must be divisible by " + std::to_string(s) + ", got " +
                         shape_str(images));
    }
}

template <typename T>
std::vector<Var> MultiTaskModel<T>::bind(Tape<T>& tape, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& e : params_) vars.push_back(tape.leaf(e.value, requires_grad));
    return vars;
}

template <typename T>
Var MultiTaskModel<T>::forward_shared(Tape<T>& tape, std::span<const Var> bound, Var images) const {
    check_input(tape.value(images).shape());
    TapeExec<T> ex{tape, bound, convs_};
    return run_backbone(0, std::span<const BlockLayers>(blocks_), ex, images);
}

template <typename T>
Var MultiTaskModel<T>::forward_task(Tape<T>& tape, std::span<const Var> bound, std::size_t task, Var features,
                                    std::size_t out_h, std::size_t out_w) const {
    const TaskSpec& t = tasks_.at(task);
    const HeadLayers& h = heads_.at(task);
    Var y = ad::conv2d(tape, features, bound[h.conv_weight], bound[h.conv_bias], h.conv_options);
    switch (t.kind) {
        case TaskKind::segmentation:
        case TaskKind::depth:
            return ad::upsample_bilinear(tape, y, out_h, out_w);
        case TaskKind::normals:
            return ad::normalize_channels(tape, ad::upsample_bilinear(tape, y, out_h, out_w));
        case TaskKind::binary_classification: {
            Var z = ad::global_avg_pool(tape, ad::relu(tape, y));
            z = ad::relu(tape, ad::linear(tape, z, bound[h.fc1_weight], bound[h.fc1_bias]));
            return ad::linear(tape, z, bound[h.fc2_weight], bound[h.fc2_bias]);
        }
    }
    throw std::invalid_argument("forward_task: unknown task kind");
}

template <typename T>
Tensor<T> MultiTaskModel<T>::infer_shared(const Tensor<T>& images) const {
    check_input(images.shape());
    EagerExec<T> ex{params_, convs_};
    return run_backbone(0, std::span<const BlockLayers>(blocks_), ex, images);
}

template <typename T>
Tensor<T> MultiTaskModel<T>::infer_task(std::size_t task, const Tensor<T>& features, std::size_t out_h,
                                        std::size_t out_w) const {
    return run_head(params_, tasks_.at(task), heads_.at(task), features, out_h, out_w);
}

template <typename T>
Tensor<T> run_head(const ParamRegistry<T>& params, const TaskSpec& task, const HeadLayers& h,
                   const Tensor<T>& features, std::size_t out_h, std::size_t out_w) {
    Tensor<T> y = ops::conv2d(features, params.at(h.conv_weight).value, &params.at(h.conv_bias).value, h.conv_options);
    switch (task.kind) {
        case TaskKind::segmentation:
        case TaskKind::depth:
            return ops::upsample_bilinear(y, out_h, out_w);
        case TaskKind::normals:
            return ops::normalize_channels(ops::upsample_bilinear(y, out_h, out_w));
        case TaskKind::binary_classification: {
            Tensor<T> z = ops::global_avg_pool(ops::relu(y));
            z = ops::relu(ops::linear(z, params.at(h.fc1_weight).value, params.at(h.fc1_bias).value));
            return ops::linear(z, params.at(h.fc2_weight).value, params.at(h.fc2_bias).value);
        }
    }
    throw std::invalid_argument("run_head: unknown task kind");
}

template class ParamRegistry<float>;
template class ParamRegistry<double>;
template class MultiTaskModel<float>;
template class MultiTaskModel<double>;
template Tensor<float> run_head(const ParamRegistry<float>&, const TaskSpec&, const HeadLayers&, const Tensor<float>&,
                                std::size_t, std::size_t);
template Tensor<double> run_head(const ParamRegistry<double>&, const TaskSpec&, const HeadLayers&,
                                 const Tensor<double>&, std::size_t, std::size_t);

}  // namespace sparseshare
