#include "sparseshare/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace sparseshare::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    std::size_t batch, in_c, h, w;   // input
    std::size_t filters, taps, kh, kw;  // taps = weight channels
    std::size_t oh, ow;
};

void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
    }
}

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const ConvOptions& opt,
                           std::span<const std::uint32_t> channel_map) {
    require_rank(x.shape(), 4, "conv2d input");
    require_rank(w.shape(), 4, "conv2d weight");
    if (opt.stride < 1 || opt.dilation < 1) throw ShapeError("conv2d: stride and dilation must be >= 1");
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.in_c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.filters = w.dim(0);
    g.taps = w.dim(1);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    if (channel_map.empty()) {
        if (g.taps != g.in_c) {
            throw ShapeError("conv2d: input channels C=" + std::to_string(g.in_c) + " do not match weight C=" +
                             std::to_string(g.taps) + " (input " + shape_str(x.shape()) + ", weight " +
                             shape_str(w.shape()) + ")");
        }
    } else {
        if (channel_map.size() != g.taps) {
            throw ShapeError("conv2d: channel map has " + std::to_string(channel_map.size()) +
                             " entries but weight has C=" + std::to_string(g.taps));
        }
        for (auto c : channel_map) {
            if (c >= g.in_c) throw ShapeError("conv2d: channel map entry " + std::to_string(c) + " out of range");
        }
    }
    auto [oh, ow] = conv_output_hw(g.h, g.w, g.kh, g.kw, opt);
    g.oh = oh;
    g.ow = ow;
    return g;
}

// col is (taps*kh*kw) x (oh*ow), row-major.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, const ConvOptions& opt, std::span<const std::uint32_t> channel_map,
            T* col) {
    const std::size_t n = g.oh * g.ow;
    const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
    for (std::size_t c = 0; c < g.taps; ++c) {
        const std::size_t src_c = channel_map.empty() ? c : channel_map[c];
        const T* plane = img + src_c * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((c * g.kh + ky) * g.kw + kx) * n;
                const auto dy = static_cast<std::ptrdiff_t>(ky * opt.dilation) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(kx * opt.dilation) - pad;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride) + dy;
                    T* out = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(out, out + g.ow, T{0});
                        continue;
                    }
                    const T* src = plane + iy * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride) + dx;
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, const ConvOptions& opt, T* img) {
    const std::size_t n = g.oh * g.ow;
    const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
    for (std::size_t c = 0; c < g.taps; ++c) {
        T* plane = img + c * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((c * g.kh + ky) * g.kw + kx) * n;
                const auto dy = static_cast<std::ptrdiff_t>(ky * opt.dilation) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(kx * opt.dilation) - pad;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride) + dy;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = plane + iy * g.w;
                    const T* in = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride) + dx;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

std::pair<std::size_t, std::size_t> conv_output_hw(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                                   const ConvOptions& opt) {
    const auto span_h = static_cast<std::ptrdiff_t>(opt.dilation * (kh - 1) + 1);
    const auto span_w = static_cast<std::ptrdiff_t>(opt.dilation * (kw - 1) + 1);
    const auto ph = static_cast<std::ptrdiff_t>(h + 2 * opt.padding);
    const auto pw = static_cast<std::ptrdiff_t>(w + 2 * opt.padding);
    if (ph < span_h || pw < span_w) {
        throw ShapeError("conv2d: kernel span " + std::to_string(span_h) + "x" + std::to_string(span_w) +
                         " exceeds padded input " + std::to_string(ph) + "x" + std::to_string(pw));
    }
    const auto s = static_cast<std::ptrdiff_t>(opt.stride);
    return {static_cast<std::size_t>((ph - span_h) / s + 1), static_cast<std::size_t>((pw - span_w) / s + 1)};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias, const ConvOptions& opt,
                 std::span<const std::uint32_t> channel_map) {
    const ConvGeometry g = conv_geometry(x, w, opt, channel_map);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.filters)) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) + " does not match F=" +
                         std::to_string(g.filters));
    }
    const std::size_t k = g.taps * g.kh * g.kw;
    const std::size_t n = g.oh * g.ow;
    Tensor<T> y({g.batch, g.filters, g.oh, g.ow});
    std::vector<T> col(k * n);
    Eigen::Map<const RowMat<T>> wm(w.raw(), static_cast<Eigen::Index>(g.filters), static_cast<Eigen::Index>(k));
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(x.raw() + b * g.in_c * g.h * g.w, g, opt, channel_map, col.data());
        Eigen::Map<const RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        T* out = y.raw() + b * g.filters * n;
        Eigen::Map<RowMat<T>> om(out, static_cast<Eigen::Index>(g.filters), static_cast<Eigen::Index>(n));
        om.noalias() = wm * cm;
        if (bias) {
            for (std::size_t f = 0; f < g.filters; ++f) {
                const T bv = (*bias)[f];
                T* row = out + f * n;
                for (std::size_t i = 0; i < n; ++i) row[i] += bv;
            }
        }
    }
    return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out, const ConvOptions& opt,
                     Tensor<T>* grad_x, Tensor<T>* grad_w, Tensor<T>* grad_b) {
    const ConvGeometry g = conv_geometry(x, w, opt, {});
    const std::size_t k = g.taps * g.kh * g.kw;
    const std::size_t n = g.oh * g.ow;
    require_same_shape(grad_out.shape(), Shape{g.batch, g.filters, g.oh, g.ow}, "conv2d backward");
    std::vector<T> col(k * n);
    const auto ki = static_cast<Eigen::Index>(k);
    const auto ni = static_cast<Eigen::Index>(n);
    const auto fi = static_cast<Eigen::Index>(g.filters);
    Eigen::Map<const RowMat<T>> wm(w.raw(), fi, ki);
    for (std::size_t b = 0; b < g.batch; ++b) {
        const T* go = grad_out.raw() + b * g.filters * n;
        Eigen::Map<const RowMat<T>> gm(go, fi, ni);
        if (grad_w) {
            im2col(x.raw() + b * g.in_c * g.h * g.w, g, opt, {}, col.data());
            Eigen::Map<const RowMat<T>> cm(col.data(), ki, ni);
            Eigen::Map<RowMat<T>> gw(grad_w->raw(), fi, ki);
            gw.noalias() += gm * cm.transpose();
        }
        if (grad_b) {
            for (std::size_t f = 0; f < g.filters; ++f) {
                T acc = 0;
                const T* row = go + f * n;
                for (std::size_t i = 0; i < n; ++i) acc += row[i];
                (*grad_b)[f] += acc;
            }
        }
        if (grad_x) {
            Eigen::Map<RowMat<T>> cm(col.data(), ki, ni);
            cm.noalias() = wm.transpose() * gm;
            col2im_add(col.data(), g, opt, grad_x->raw() + b * g.in_c * g.h * g.w);
        }
    }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data()) v = v > T{0} ? v : T{0};
    return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> y = a;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b[i];
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> y = a;
    for (auto& v : y.data()) v *= factor;
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> y = a;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b[i];
    return y;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    require_rank(x.shape(), 2, "linear input");
    require_rank(w.shape(), 2, "linear weight");
    const std::size_t batch = x.dim(0), d = x.dim(1), o = w.dim(0);
    if (w.dim(1) != d) {
        throw ShapeError("linear: input D=" + std::to_string(d) + " does not match weight " + shape_str(w.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != o) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match O=" + std::to_string(o));
    }
    Tensor<T> y({batch, o});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < o; ++j) {
            T acc = 0;
            for (std::size_t i = 0; i < d; ++i) acc += x[b * d + i] * w[j * d + i];
            y[b * o + j] = acc + bias[j];
        }
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "global_avg_pool");
    const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({batch, c});
    for (std::size_t i = 0; i < batch * c; ++i) {
        T acc = 0;
        const T* p = x.raw() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) acc += p[j];
        y[i] = acc / static_cast<T>(hw);
    }
    return y;
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double w0, w1;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = i0 + (i0 < in - 1 ? 1 : 0);
        const double l1 = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

void check_upsample(const Shape& in, std::size_t out_h, std::size_t out_w) {
    require_rank(in, 4, "upsample_bilinear");
    if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: degenerate target size 0");
    if (out_h < in[2] || out_w < in[3]) {
        throw ShapeError("upsample_bilinear: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " smaller than input " + shape_str(in));
    }
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    check_upsample(x.shape(), out_h, out_w);
    const std::size_t planes = x.dim(0) * x.dim(1), ih = x.dim(2), iw = x.dim(3);
    const auto ty = bilinear_taps(ih, out_h);
    const auto tx = bilinear_taps(iw, out_w);
    Tensor<T> y({x.dim(0), x.dim(1), out_h, out_w});
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.raw() + p * ih * iw;
        T* dst = y.raw() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Tap& a = ty[oy];
            const T* r0 = src + a.i0 * iw;
            const T* r1 = src + a.i1 * iw;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Tap& b = tx[ox];
                const T top = static_cast<T>(b.w0) * r0[b.i0] + static_cast<T>(b.w1) * r0[b.i1];
                const T bot = static_cast<T>(b.w0) * r1[b.i0] + static_cast<T>(b.w1) * r1[b.i1];
                dst[oy * out_w + ox] = static_cast<T>(a.w0) * top + static_cast<T>(a.w1) * bot;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
    const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
    check_upsample(input_shape, out_h, out_w);
    const std::size_t planes = input_shape[0] * input_shape[1], ih = input_shape[2], iw = input_shape[3];
    const auto ty = bilinear_taps(ih, out_h);
    const auto tx = bilinear_taps(iw, out_w);
    Tensor<T> gx(input_shape);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* g = grad_out.raw() + p * out_h * out_w;
        T* dst = gx.raw() + p * ih * iw;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Tap& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Tap& b = tx[ox];
                const T v = g[oy * out_w + ox];
                const T top = static_cast<T>(a.w0) * v;
                const T bot = static_cast<T>(a.w1) * v;
                dst[a.i0 * iw + b.i0] += static_cast<T>(b.w0) * top;
                dst[a.i0 * iw + b.i1] += static_cast<T>(b.w1) * top;
                dst[a.i1 * iw + b.i0] += static_cast<T>(b.w0) * bot;
                dst[a.i1 * iw + b.i1] += static_cast<T>(b.w1) * bot;
            }
        }
    }
    return gx;
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
    require_rank(x.shape(), 4, "channel_affine");
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (scale.numel() != c || shift.numel() != c) {
        throw ShapeError("channel_affine: scale/shift length must equal C=" + std::to_string(c));
    }
    Tensor<T> y = x;
    for (std::size_t b = 0; b < x.dim(0); ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* p = y.raw() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = p[i] * scale[ch] + shift[ch];
        }
    }
    return y;
}

template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "normalize_channels");
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y(x.shape());
    for (std::size_t b = 0; b < x.dim(0); ++b) {
        const T* src = x.raw() + b * c * hw;
        T* dst = y.raw() + b * c * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            double sq = 0;
            for (std::size_t ch = 0; ch < c; ++ch) sq += static_cast<double>(src[ch * hw + p]) * src[ch * hw + p];
            const double norm = std::sqrt(sq);
            if (norm > 1e-12) {
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch * hw + p] = static_cast<T>(src[ch * hw + p] / norm);
            } else {
                dst[(c - 1) * hw + p] = T{1};
            }
        }
    }
    return y;
}

#define SPARSESHARE_INSTANTIATE_OPS(T)                                                                         \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvOptions&,        \
                              std::span<const std::uint32_t>);                                                 \
    template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvOptions&,    \
                                  Tensor<T>*, Tensor<T>*, Tensor<T>*);                                         \
    template Tensor<T> relu(const Tensor<T>&);                                                                 \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> scale(const Tensor<T>&, T);                                                             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                      \
    template Tensor<T> upsample_bilinear(const Tensor<T>&, std::size_t, std::size_t);                          \
    template Tensor<T> upsample_bilinear_backward(const Tensor<T>&, const Shape&);                             \
    template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> normalize_channels(const Tensor<T>&);

SPARSESHARE_INSTANTIATE_OPS(float)
SPARSESHARE_INSTANTIATE_OPS(double)

}  // namespace sparseshare::ops
