#include "sparseshare/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sparseshare {

namespace loss {

namespace {

template <typename T>
using Slots = std::span<Tensor<T>* const>;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_classes(const Shape& logits, std::span<const std::int32_t> classes) {
    if (logits.size() != 4) throw ShapeError("cross-entropy: logits must be (B,K,H,W), got " + shape_str(logits));
    const std::size_t pixels = logits[0] * logits[2] * logits[3];
    if (classes.size() != pixels) {
        throw ShapeError("cross-entropy: " + std::to_string(classes.size()) + " targets for " + std::to_string(pixels) +
                         " pixels");
    }
    const auto k = static_cast<std::int32_t>(logits[1]);
    for (auto c : classes) {
        if (c < 0 || c >= k) {
            throw std::out_of_range("cross-entropy: class index " + std::to_string(c) + " outside [0, " +
                                    std::to_string(k) + ")");
        }
    }
}

// Returns the mean loss and, when `grad` is non-null, writes dL/dlogits.
template <typename T>
double cross_entropy_eval(const Tensor<T>& z, std::span<const std::int32_t> classes, Tensor<T>* grad, T upstream) {
    const std::size_t batch = z.dim(0), k = z.dim(1), hw = z.dim(2) * z.dim(3);
    const double inv = 1.0 / static_cast<double>(batch * hw);
    double total = 0;
    std::vector<double> e(k);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* base = z.raw() + b * k * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            double mx = base[p];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(base[c * hw + p]));
            double s = 0;
            for (std::size_t c = 0; c < k; ++c) {
                e[c] = std::exp(static_cast<double>(base[c * hw + p]) - mx);
                s += e[c];
            }
            const auto target = static_cast<std::size_t>(classes[b * hw + p]);
            total += std::log(s) + mx - static_cast<double>(base[target * hw + p]);
            if (grad) {
                T* g = grad->raw() + b * k * hw;
                for (std::size_t c = 0; c < k; ++c) {
                    const double d = e[c] / s - (c == target ? 1.0 : 0.0);
                    g[c * hw + p] += static_cast<T>(upstream * d * inv);
                }
            }
        }
    }
    return total * inv;
}

template <typename T>
double mse_eval(const Tensor<T>& p, const Tensor<T>& t) {
    require_same_shape(p.shape(), t.shape(), "mse");
    double acc = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double d = static_cast<double>(p[i]) - t[i];
        acc += d * d;
    }
    return acc / static_cast<double>(p.numel());
}

template <typename T>
double cosine_eval(const Tensor<T>& p, const Tensor<T>& t) {
    require_same_shape(p.shape(), t.shape(), "cosine loss");
    if (p.rank() != 4) throw ShapeError("cosine loss: expected (B,C,H,W), got " + shape_str(p.shape()));
    double acc = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) acc += static_cast<double>(p[i]) * t[i];
    const double pixels = static_cast<double>(p.dim(0) * p.dim(2) * p.dim(3));
    return 1.0 - acc / pixels;
}

template <typename T>
double bce_eval(const Tensor<T>& z, const Tensor<T>& y) {
    require_same_shape(z.shape(), y.shape(), "binary cross-entropy");
    double acc = 0;
    for (std::size_t i = 0; i < z.numel(); ++i) acc += softplus(z[i]) - static_cast<double>(y[i]) * z[i];
    return acc / static_cast<double>(z.numel());
}

}  // namespace

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::int32_t> classes) {
    check_classes(tape.value(logits).shape(), classes);
    const double value = cross_entropy_eval<T>(tape.value(logits), classes, nullptr, T{0});
    std::vector<std::int32_t> saved(classes.begin(), classes.end());
    return tape.record(OpKind::softmax_cross_entropy, {logits}, Tensor<T>::scalar(static_cast<T>(value)),
                       [saved = std::move(saved)](const Tape<T>& t, std::span<const std::size_t> in,
                                                  const Tensor<T>& g, Slots<T> gin) {
                           cross_entropy_eval<T>(t.node(in[0]).value, saved, gin[0], g[0]);
                       });
}

template <typename T>
Var mse(Tape<T>& tape, Var pred, const Tensor<T>& target) {
    const double value = mse_eval(tape.value(pred), target);
    return tape.record(OpKind::mse, {pred}, Tensor<T>::scalar(static_cast<T>(value)),
                       [target](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T>& p = t.node(in[0]).value;
                           const T k = T{2} * g[0] / static_cast<T>(p.numel());
                           for (std::size_t i = 0; i < p.numel(); ++i) (*gin[0])[i] += k * (p[i] - target[i]);
                       });
}

template <typename T>
Var cosine_loss(Tape<T>& tape, Var pred, const Tensor<T>& target) {
    const double value = cosine_eval(tape.value(pred), target);
    return tape.record(OpKind::cosine_loss, {pred}, Tensor<T>::scalar(static_cast<T>(value)),
                       [target](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T>& p = t.node(in[0]).value;
                           const T k = -g[0] / static_cast<T>(p.dim(0) * p.dim(2) * p.dim(3));
                           for (std::size_t i = 0; i < p.numel(); ++i) (*gin[0])[i] += k * target[i];
                       });
}

template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, const Tensor<T>& target) {
    const double value = bce_eval(tape.value(logits), target);
    return tape.record(OpKind::bce_with_logits, {logits}, Tensor<T>::scalar(static_cast<T>(value)),
                       [target](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const Tensor<T>& z = t.node(in[0]).value;
                           const double k = static_cast<double>(g[0]) / static_cast<double>(z.numel());
                           for (std::size_t i = 0; i < z.numel(); ++i) {
                               (*gin[0])[i] += static_cast<T>(k * (sigmoid(z[i]) - target[i]));
                           }
                       });
}

template <typename T>
Var task_loss(Tape<T>& tape, TaskKind kind, Var prediction, const TaskTarget<T>& target) {
    switch (kind) {
        case TaskKind::segmentation: return softmax_cross_entropy(tape, prediction, std::span(target.classes));
        case TaskKind::depth: return mse(tape, prediction, target.values);
        case TaskKind::normals: return cosine_loss(tape, prediction, target.values);
        case TaskKind::binary_classification: return bce_with_logits(tape, prediction, target.values);
    }
    throw std::invalid_argument("task_loss: unknown task kind");
}

template <typename T>
Var combine_uncertainty(Tape<T>& tape, std::span<const Var> losses, Var eta) {
    const Tensor<T>& ev = tape.value(eta);
    if (losses.empty()) throw std::invalid_argument("combine_uncertainty: no losses");
    if (ev.numel() != losses.size()) {
        throw ShapeError("combine_uncertainty: " + std::to_string(losses.size()) + " losses but eta has shape " +
                         shape_str(ev.shape()));
    }
    std::vector<double> l(losses.size()), e(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) {
        l[i] = tape.value(losses[i]).item();
        e[i] = ev[i];
    }
    const double value = combine_uncertainty(std::span<const double>(l), std::span<const double>(e));
    std::vector<Var> inputs(losses.begin(), losses.end());
    inputs.push_back(eta);
    return tape.record(OpKind::uncertainty_combine, std::move(inputs), Tensor<T>::scalar(static_cast<T>(value)),
                       [](const Tape<T>& t, std::span<const std::size_t> in, const Tensor<T>& g, Slots<T> gin) {
                           const std::size_t n = in.size() - 1;
                           const Tensor<T>& ev = t.node(in[n]).value;
                           for (std::size_t i = 0; i < n; ++i) {
                               const double w = 0.5 * std::exp(-static_cast<double>(ev[i]));
                               const double li = t.node(in[i]).value[0];
                               if (gin[i]) (*gin[i])[0] += static_cast<T>(g[0] * w);
                               if (gin[n]) (*gin[n])[i] += static_cast<T>(g[0] * (0.5 - w * li));
                           }
                       });
}

template <typename T>
double task_loss(TaskKind kind, const Tensor<T>& prediction, const TaskTarget<T>& target) {
    switch (kind) {
        case TaskKind::segmentation:
            check_classes(prediction.shape(), target.classes);
            return cross_entropy_eval<T>(prediction, target.classes, nullptr, T{0});
        case TaskKind::depth: return mse_eval(prediction, target.values);
        case TaskKind::normals: return cosine_eval(prediction, target.values);
        case TaskKind::binary_classification: return bce_eval(prediction, target.values);
    }
    throw std::invalid_argument("task_loss: unknown task kind");
}

double combine_uncertainty(std::span<const double> losses, std::span<const double> eta) {
    if (losses.empty() || losses.size() != eta.size()) {
        throw std::invalid_argument("combine_uncertainty: need N >= 1 losses and N log-variances");
    }
    double total = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) total += 0.5 * std::exp(-eta[i]) * losses[i] + 0.5 * eta[i];
    return total;
}

#define SPARSESHARE_INSTANTIATE_LOSS(T)                                                                 \
    template Var softmax_cross_entropy(Tape<T>&, Var, std::span<const std::int32_t>);                  \
    template Var mse(Tape<T>&, Var, const Tensor<T>&);                                                  \
    template Var cosine_loss(Tape<T>&, Var, const Tensor<T>&);                                          \
    template Var bce_with_logits(Tape<T>&, Var, const Tensor<T>&);                                      \
    template Var task_loss(Tape<T>&, TaskKind, Var, const TaskTarget<T>&);                              \
    template Var combine_uncertainty(Tape<T>&, std::span<const Var>, Var);                              \
    template double task_loss(TaskKind, const Tensor<T>&, const TaskTarget<T>&);

SPARSESHARE_INSTANTIATE_LOSS(float)
SPARSESHARE_INSTANTIATE_LOSS(double)

}  // namespace loss

template <typename T>
ParamRegistry<T> make_uncertainty_weights(std::size_t tasks) {
    if (tasks == 0) throw std::invalid_argument("uncertainty weights: need at least one task");
    ParamRegistry<T> reg;
    reg.add("uncertainty.eta", Tensor<T>({tasks}), false, false, "loss");
    return reg;
}

template ParamRegistry<float> make_uncertainty_weights(std::size_t);
template ParamRegistry<double> make_uncertainty_weights(std::size_t);

}  // namespace sparseshare
