#pragma once

// Eager kernels shared by the tape (training) and the inference paths.

#include <cstdint>
#include <span>
#include <type_traits>
#include <utility>

#include "sparseshare/tensor.hpp"

namespace sparseshare::ops {

struct ConvOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

/// Output (H', W') of a convolution; throws ShapeError if non-positive.
std::pair<std::size_t, std::size_t> conv_output_hw(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                                   const ConvOptions& opt);

/// Cross-correlation of x (B,C,H,W) with w (F,C',Kh,Kw).
///
/// When `channel_map` is non-empty, weight channel c reads input channel
/// channel_map[c] (C' = channel_map.size()); otherwise C' must equal C.
/// `bias` may be null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias, const ConvOptions& opt,
                 std::span<const std::uint32_t> channel_map = {});

/// Accumulates (+=) into any non-null gradient output.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out, const ConvOptions& opt,
                     Tensor<T>* grad_x, Tensor<T>* grad_w, Tensor<T>* grad_b);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// y[b,o] = sum_d x[b,d] w[o,d] + bias[o]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// (B,C,H,W) -> (B,C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Bilinear resize, half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, const Shape& input_shape);

/// y[b,c,h,w] = x[b,c,h,w] * scale[c] + shift[c]
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);

/// Unit-normalizes the channel vector at every pixel. A zero vector maps to
/// the last basis vector (0,..,0,1).
template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& x);

}  // namespace sparseshare::ops
