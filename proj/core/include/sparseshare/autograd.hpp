#pragma once

// Reverse-mode differentiation over a linear tape.
//
// Nodes are appended in evaluation order, so the tape is topologically sorted
// by construction and backward() is a single reverse sweep.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "sparseshare/ops.hpp"
#include "sparseshare/tensor.hpp"

namespace sparseshare {

enum class OpKind : std::uint8_t {
    leaf,
    conv2d,
    relu,
    add,
    mul,
    scale,
    sum,
    linear,
    global_avg_pool,
    upsample_bilinear,
    channel_affine,
    normalize_channels,
    softmax_cross_entropy,
    mse,
    cosine_loss,
    bce_with_logits,
    uncertainty_combine,
};

const char* op_name(OpKind op);

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const noexcept { return id != npos; }
};

template <typename T>
class Tape {
public:
    /// Receives the node's upstream gradient and one slot per input; a slot is
    /// null when that input does not require a gradient. Slots accumulate.
    using BackwardFn = std::function<void(const Tape& tape, std::span<const std::size_t> inputs,
                                          const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

    struct Node {
        OpKind op = OpKind::leaf;
        std::vector<std::size_t> inputs;
        Tensor<T> value;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var leaf(Tensor<T> value, bool requires_grad = true);
    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
    Var record(OpKind op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward);

    const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
    /// Throws ShapeError unless `loss` holds exactly one element.
    void backward(Var loss);

    /// Gradient of the last backward() target w.r.t. `v`; zeros when `v` is
    /// disconnected from it.
    Tensor<T> grad(Var v) const;

private:
    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor<T>>> grads_;
};

namespace ad {

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> bias, const ops::ConvOptions& opt);
template <typename T>
Var relu(Tape<T>& tape, Var x);
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);
template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);
template <typename T>
Var sum(Tape<T>& tape, Var a);
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var bias);
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);
template <typename T>
Var upsample_bilinear(Tape<T>& tape, Var x, std::size_t out_h, std::size_t out_w);
template <typename T>
Var channel_affine(Tape<T>& tape, Var x, Var scale, Var shift);
template <typename T>
Var normalize_channels(Tape<T>& tape, Var x);

}  // namespace ad

struct GradCheckOptions {
    double epsilon = 1e-5;
    /// Flat coordinates to probe; empty means every coordinate.
    std::vector<std::size_t> coordinates;
    /// Skip coordinates whose +eps/-eps evaluations see a different relu
    /// activation pattern (a kink lies inside the probe interval).
    bool skip_relu_kinks = true;
};

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t worst_coordinate = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

/// Builds a scalar on a fresh tape from a leaf holding the input.
using ScalarBuilder = std::function<Var(Tape<double>&, Var)>;

/// Central differences (f(x+eps e)-f(x-eps e))/(2 eps) against the tape
/// gradient; error is |analytic-numeric| / max(1, |numeric|).
GradCheckResult finite_difference_check(const ScalarBuilder& f, const Tensor<double>& x,
                                        const GradCheckOptions& options = {});

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace sparseshare
