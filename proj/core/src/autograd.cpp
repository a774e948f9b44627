#include "sparseshare/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace sparseshare {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::leaf: return "leaf";
        case OpKind::conv2d: return "conv2d";
        case OpKind::relu: return "relu";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::sum: return "sum";
        case OpKind::linear: return "linear";
        case OpKind::global_avg_pool: return "global_avg_pool";
        case OpKind::upsample_bilinear: return "upsample_bilinear";
        case OpKind::channel_affine: return "channel_affine";
        case OpKind::normalize_channels: return "normalize_channels";
        case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
        case OpKind::mse: return "mse";
        case OpKind::cosine_loss: return "cosine_loss";
        case OpKind::bce_with_logits: return "bce_with_logits";
        case OpKind::uncertainty_combine: return "uncertainty_combine";
    }
    return "unknown";
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = OpKind::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(OpKind op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.id >= nodes_.size()) throw std::out_of_range("tape: input variable not on this tape");
        n.inputs.push_back(v.id);
        n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
void Tape<T>::backward(Var loss) {
    const Node& target = nodes_.at(loss.id);
    if (target.value.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(target.value.shape()));
    }
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss.id] = Tensor<T>(target.value.shape(), T{1});
    std::vector<Tensor<T>*> slots;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (!grads_[i] || !n.backward) continue;
        slots.assign(n.inputs.size(), nullptr);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t in = n.inputs[k];
            if (!nodes_[in].requires_grad) continue;
            if (!grads_[in]) grads_[in] = Tensor<T>(nodes_[in].value.shape());
            slots[k] = &*grads_[in];
        }
        n.backward(*this, n.inputs, *grads_[i], slots);
    }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (v.id < grads_.size() && grads_[v.id]) return *grads_[v.id];
    return Tensor<T>(n.value.shape());
}

template class Tape<float>;
template class Tape<double>;

namespace ad {

template <typename T>
using Slots = std::span<Tensor<T>* const>;

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> bias, const ops::ConvOptions& opt) {
    const Tensor<T>* b = bias ? &tape.value(*bias) : nullptr;
    Tensor<T> y = ops::conv2d(tape.value(x), tape.value(w), b, opt);
    std::vector<Var> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return tape.record(OpKind::conv2d, std::move(inputs), std::move(y),
                       [opt](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           ops::conv2d_backward(t.node(in[0]).value, t.node(in[1]).value, g, opt, gin[0], gin[1],
                                                in.size() > 2 ? gin[2] : nullptr);
                       });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
    return tape.record(OpKind::relu, {x}, ops::relu(tape.value(x)),
                       [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T>& xv = t.node(in[0]).value;
                           Tensor<T>& gx = *gin[0];
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                               if (xv[i] > T{0}) gx[i] += g[i];
                           }
                       });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    return tape.record(OpKind::add, {a, b}, ops::add(tape.value(a), tape.value(b)),
                       [](const Tape<T>&, std::span<const std::size_t>, const Tensor<T>& g, Slots<T> gin) {
                           for (auto* slot : gin) {
                               if (!slot) continue;
                               for (std::size_t i = 0; i < g.numel(); ++i) (*slot)[i] += g[i];
                           }
                       });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    return tape.record(OpKind::mul, {a, b}, ops::mul(tape.value(a), tape.value(b)),
                       [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T>& av = t.node(in[0]).value;
                           const Tensor<T>& bv = t.node(in[1]).value;
                           if (gin[0]) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i] * bv[i];
                           }
                           if (gin[1]) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*gin[1])[i] += g[i] * av[i];
                           }
                       });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
    return tape.record(OpKind::scale, {a}, ops::scale(tape.value(a), factor),
                       [factor](const Tape<T>&, std::span<const std::size_t>, const Tensor<T>& g, Slots<T> gin) {
                           for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += factor * g[i];
                       });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
    T acc = 0;
    for (T v : tape.value(a).data()) acc += v;
    return tape.record(OpKind::sum, {a}, Tensor<T>::scalar(acc),
                       [](const Tape<T>&, std::span<const std::size_t>, const Tensor<T>& g, Slots<T> gin) {
                           for (auto& v : gin[0]->data()) v += g[0];
                       });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var bias) {
    return tape.record(
        OpKind::linear, {x, w, bias}, ops::linear(tape.value(x), tape.value(w), tape.value(bias)),
        [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
            const Tensor<T>& xv = t.node(in[0]).value;
            const Tensor<T>& wv = t.node(in[1]).value;
            const std::size_t batch = xv.dim(0), d = xv.dim(1), o = wv.dim(0);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < o; ++j) {
                    const T gv = g[b * o + j];
                    if (gin[2]) (*gin[2])[j] += gv;
                    for (std::size_t i = 0; i < d; ++i) {
                        if (gin[0]) (*gin[0])[b * d + i] += gv * wv[j * d + i];
                        if (gin[1]) (*gin[1])[j * d + i] += gv * xv[b * d + i];
                    }
                }
            }
        });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
    return tape.record(OpKind::global_avg_pool, {x}, ops::global_avg_pool(tape.value(x)),
                       [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T>& xv = t.node(in[0]).value;
                           const std::size_t hw = xv.dim(2) * xv.dim(3);
                           const T inv = T{1} / static_cast<T>(hw);
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                               T* p = gin[0]->raw() + i * hw;
                               for (std::size_t j = 0; j < hw; ++j) p[j] += g[i] * inv;
                           }
                       });
}

template <typename T>
Var upsample_bilinear(Tape<T>& tape, Var x, std::size_t out_h, std::size_t out_w) {
    return tape.record(OpKind::upsample_bilinear, {x}, ops::upsample_bilinear(tape.value(x), out_h, out_w),
                       [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T> gx = ops::upsample_bilinear_backward(g, t.node(in[0]).value.shape());
                           for (std::size_t i = 0; i < gx.numel(); ++i) (*gin[0])[i] += gx[i];
                       });
}

template <typename T>
Var channel_affine(Tape<T>& tape, Var x, Var scale, Var shift) {
    return tape.record(
        OpKind::channel_affine, {x, scale, shift},
        ops::channel_affine(tape.value(x), tape.value(scale), tape.value(shift)),
        [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
            const Tensor<T>& xv = t.node(in[0]).value;
            const Tensor<T>& sv = t.node(in[1]).value;
            const std::size_t c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
            for (std::size_t b = 0; b < xv.dim(0); ++b) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t base = (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const T gv = g[base + i];
                        if (gin[0]) (*gin[0])[base + i] += gv * sv[ch];
                        if (gin[1]) (*gin[1])[ch] += gv * xv[base + i];
                        if (gin[2]) (*gin[2])[ch] += gv;
                    }
                }
            }
        });
}

template <typename T>
Var normalize_channels(Tape<T>& tape, Var x) {
    return tape.record(
        OpKind::normalize_channels, {x}, ops::normalize_channels(tape.value(x)),
        [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
            const Tensor<T>& xv = t.node(in[0]).value;
            const std::size_t c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
            for (std::size_t b = 0; b < xv.dim(0); ++b) {
                const std::size_t base = b * c * hw;
                for (std::size_t p = 0; p < hw; ++p) {
                    double sq = 0;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double v = xv[base + ch * hw + p];
                        sq += v * v;
                    }
                    const double norm = std::sqrt(sq);
                    if (norm <= 1e-12) continue;
                    // d(v/|v|) = (I - y y^T) / |v|
                    double dot = 0;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        dot += static_cast<double>(g[base + ch * hw + p]) * xv[base + ch * hw + p] / norm;
                    }
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t k = base + ch * hw + p;
                        const double y = xv[k] / norm;
                        (*gin[0])[k] += static_cast<T>((g[k] - y * dot) / norm);
                    }
                }
            }
        });
}

#define SPARSESHARE_INSTANTIATE_AD(T)                                                                 \
    template Var conv2d(Tape<T>&, Var, Var, std::optional<Var>, const ops::ConvOptions&);           \
    template Var relu(Tape<T>&, Var);                                                                 \
    template Var add(Tape<T>&, Var, Var);                                                             \
    template Var mul(Tape<T>&, Var, Var);                                                             \
    template Var scale(Tape<T>&, Var, T);                                                             \
    template Var sum(Tape<T>&, Var);                                                                  \
    template Var linear(Tape<T>&, Var, Var, Var);                                                     \
    template Var global_avg_pool(Tape<T>&, Var);                                                      \
    template Var upsample_bilinear(Tape<T>&, Var, std::size_t, std::size_t);                          \
    template Var channel_affine(Tape<T>&, Var, Var, Var);                                             \
    template Var normalize_channels(Tape<T>&, Var);

SPARSESHARE_INSTANTIATE_AD(float)
SPARSESHARE_INSTANTIATE_AD(double)

}  // namespace ad

namespace {

struct Probe {
    double value;
    std::vector<bool> relu_pattern;
};

Probe evaluate(const ScalarBuilder& f, const Tensor<double>& x, bool record_pattern) {
    Tape<double> tape;
    const Var in = tape.leaf(x, false);
    const Var out = f(tape, in);
    Probe p{tape.value(out).item(), {}};
    if (record_pattern) {
        for (std::size_t i = 0; i < tape.size(); ++i) {
            const auto& n = tape.node(i);
            if (n.op != OpKind::relu) continue;
            for (double v : tape.node(n.inputs[0]).value.data()) p.relu_pattern.push_back(v > 0);
        }
    }
    return p;
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarBuilder& f, const Tensor<double>& x,
                                        const GradCheckOptions& options) {
    Tape<double> tape;
    const Var in = tape.leaf(x, true);
    const Var out = f(tape, in);
    tape.backward(out);
    const Tensor<double> analytic = tape.grad(in);

    std::vector<std::size_t> coords = options.coordinates;
    if (coords.empty()) {
        coords.resize(x.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }
    GradCheckResult result;
    Tensor<double> probe = x;
    for (std::size_t i : coords) {
        const double orig = probe[i];
        probe[i] = orig + options.epsilon;
        const Probe plus = evaluate(f, probe, options.skip_relu_kinks);
        probe[i] = orig - options.epsilon;
        const Probe minus = evaluate(f, probe, options.skip_relu_kinks);
        probe[i] = orig;
        if (options.skip_relu_kinks && plus.relu_pattern != minus.relu_pattern) {
            ++result.skipped;
            continue;
        }
        const double numeric = (plus.value - minus.value) / (2 * options.epsilon);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        ++result.checked;
        if (!(err <= result.max_rel_error)) {
            result.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
            result.worst_coordinate = i;
        }
    }
    return result;
}

}  // namespace sparseshare
