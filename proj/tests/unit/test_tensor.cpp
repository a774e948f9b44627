#include <cmath>

#include "doctest.h"
#include "sparseshare/ops.hpp"
#include "sparseshare/tensor.hpp"
#include "test_util.hpp"

using namespace sparseshare;
using testutil::random_tensor;

namespace {

// Direct-loop cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                          std::size_t stride, std::size_t pad, std::size_t dil) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t HO = (H + 2 * pad - dil * (KH - 1) - 1) / stride + 1;
    const std::size_t WO = (W + 2 * pad - dil * (KW - 1) - 1) / stride + 1;
    Tensor<double> y({B, F, HO, WO});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < HO; ++i)
                for (std::size_t j = 0; j < WO; ++j) {
                    double s = bias ? (*bias)[f] : 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ki = 0; ki < KH; ++ki)
                            for (std::size_t kj = 0; kj < KW; ++kj) {
                                const long r = static_cast<long>(i * stride + ki * dil) - static_cast<long>(pad);
                                const long q = static_cast<long>(j * stride + kj * dil) - static_cast<long>(pad);
                                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                                s += x.at4(b, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)) *
                                     w.at4(f, c, ki, kj);
                            }
                    y.at4(b, f, i, j) = s;
                }
    return y;
}

double bilinear_ref(const Tensor<double>& x, std::size_t b, std::size_t c, std::size_t oi, std::size_t oj,
                    std::size_t OH, std::size_t OW) {
    const double H = static_cast<double>(x.dim(2)), W = static_cast<double>(x.dim(3));
    auto src = [](double o, double in, double out) {
        return std::clamp((o + 0.5) * in / out - 0.5, 0.0, in - 1.0);
    };
    const double sy = src(static_cast<double>(oi), H, static_cast<double>(OH));
    const double sx = src(static_cast<double>(oj), W, static_cast<double>(OW));
    const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, x.dim(2) - 1), x1 = std::min(x0 + 1, x.dim(3) - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    return (1 - fy) * ((1 - fx) * x.at4(b, c, y0, x0) + fx * x.at4(b, c, y0, x1)) +
           fy * ((1 - fx) * x.at4(b, c, y1, x0) + fx * x.at4(b, c, y1, x1));
}

}  // namespace

TEST_CASE("tensor construction validates shape and data length") {
    CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor<double> t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
    t[4] = std::nan("");
    CHECK_FALSE(t.all_finite());
    t[4] = INFINITY;
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("conv2d identity kernel returns the input") {
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> w({1, 1, 1, 1}, {1});
    CHECK(ops::conv2d(x, w, nullptr, {}) == x);
}

TEST_CASE("conv2d 2x2 diagonal kernel sums the diagonal") {
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> w({1, 1, 2, 2}, {1, 0, 0, 1});
    const auto y = ops::conv2d(x, w, nullptr, {});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 1.0 * 1 + 4.0 * 1);
}

TEST_CASE("conv2d with zero weight gives zero output") {
    const auto x = random_tensor({2, 3, 5, 5}, 1);
    Tensor<double> w({4, 3, 3, 3});
    const auto y = ops::conv2d(x, w, nullptr, {1, 1, 1});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches direct loops across stride, padding and dilation") {
    struct Case {
        std::size_t stride, pad, dil, k, h;
    };
    const Case cases[] = {{1, 0, 1, 3, 6}, {1, 1, 1, 3, 6}, {2, 1, 1, 3, 7}, {1, 2, 2, 3, 8}, {2, 0, 1, 1, 6},
                          {1, 0, 1, 2, 5}, {3, 2, 2, 3, 9}};
    std::uint64_t seed = 10;
    for (const auto& c : cases) {
        const auto x = random_tensor({2, 3, c.h, c.h + 1}, ++seed);
        const auto w = random_tensor({4, 3, c.k, c.k}, ++seed);
        const auto b = random_tensor({4}, ++seed);
        const auto got = ops::conv2d(x, w, &b, {c.stride, c.pad, c.dil});
        const auto want = naive_conv(x, w, &b, c.stride, c.pad, c.dil);
        REQUIRE(got.shape() == want.shape());
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d output size follows the floor formula") {
    // H' = floor((H + 2p - d(K-1) - 1)/s) + 1
    const auto [h, w] = ops::conv_output_hw(32, 17, 3, 3, {2, 1, 1});
    CHECK(h == (32 + 2 - 2 - 1) / 2 + 1);
    CHECK(w == (17 + 2 - 2 - 1) / 2 + 1);
    CHECK_THROWS_AS(ops::conv_output_hw(2, 2, 3, 3, {1, 0, 1}), ShapeError);
}

TEST_CASE("conv2d rejects mismatched channels with a message naming the dims") {
    const auto x = random_tensor({1, 3, 4, 4}, 1);
    const auto w = random_tensor({2, 4, 3, 3}, 2);
    try {
        (void)ops::conv2d(x, w, nullptr, {});
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find('3') != std::string::npos);
        CHECK(msg.find('4') != std::string::npos);
    }
    CHECK_THROWS_AS(ops::conv2d(x, random_tensor({2, 3, 3, 3}, 3), nullptr, {0, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(ops::conv2d(x, random_tensor({2, 3, 3, 3}, 3), nullptr, {1, 0, 0}), std::invalid_argument);
}

TEST_CASE("conv2d is linear in the weight") {
    const auto x = random_tensor({2, 3, 6, 6}, 4);
    const auto w1 = random_tensor({5, 3, 3, 3}, 5);
    const auto w2 = random_tensor({5, 3, 3, 3}, 6);
    const double a = 0.7, b = -1.3;
    Tensor<double> mix(w1.shape());
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * w1[i] + b * w2[i];
    const ops::ConvOptions opt{1, 2, 2};
    const auto lhs = ops::conv2d(x, mix, nullptr, opt);
    const auto y1 = ops::conv2d(x, w1, nullptr, opt), y2 = ops::conv2d(x, w2, nullptr, opt);
    double err = 0;
    for (std::size_t i = 0; i < lhs.numel(); ++i) err = std::max(err, std::abs(lhs[i] - (a * y1[i] + b * y2[i])));
    CHECK(err < 1e-10);
}

TEST_CASE("conv2d channel map gathers the listed input channels") {
    const auto x = random_tensor({2, 5, 6, 6}, 7);
    const auto w = random_tensor({3, 2, 3, 3}, 8);
    const std::uint32_t map[] = {1, 4};
    const auto got = ops::conv2d(x, w, nullptr, {1, 1, 1}, map);
    Tensor<double> wide({3, 5, 3, 3});
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t i = 0; i < 9; ++i) wide[(f * 5 + map[k]) * 9 + i] = w[(f * 2 + k) * 9 + i];
    CHECK(max_abs_diff(got, naive_conv(x, wide, nullptr, 1, 1, 1)) < 1e-12);
    const std::uint32_t bad[] = {1, 5};
    CHECK_THROWS_AS(ops::conv2d(x, w, nullptr, {1, 1, 1}, bad), std::invalid_argument);
}

TEST_CASE("elementwise ops") {
    CHECK(ops::relu(Tensor<double>({3}, {-1, 0, 2})) == Tensor<double>({3}, {0, 0, 2}));
    CHECK(ops::add(Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {3, 4})) == Tensor<double>({2}, {4, 6}));
    CHECK(ops::scale(Tensor<double>({2}, {1, 2}), 0.5) == Tensor<double>({2}, {0.5, 1}));
    CHECK_THROWS_AS(ops::add(Tensor<double>({2}), Tensor<double>({3})), ShapeError);
}

TEST_CASE("linear") {
    Tensor<double> x({1, 2}, {1, 2});
    CHECK(ops::linear(x, Tensor<double>({1, 2}, {3, 4}), Tensor<double>({1}, {1}))[0] == 1 * 3 + 2 * 4 + 1);
    const auto xr = random_tensor({4, 3}, 9);
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
    CHECK(ops::linear(xr, eye, Tensor<double>({3})) == xr);
    const Tensor<double> bias({2}, {0.25, -2});
    const auto y = ops::linear(xr, Tensor<double>({2, 3}), bias);
    for (std::size_t b = 0; b < 4; ++b) {
        CHECK(y[b * 2] == 0.25);
        CHECK(y[b * 2 + 1] == -2);
    }
    CHECK_THROWS_AS(ops::linear(xr, Tensor<double>({2, 4}), bias), ShapeError);
}

TEST_CASE("global average pool") {
    CHECK(ops::global_avg_pool(Tensor<double>({1, 1, 2, 2}, {1, 3, 5, 7}))[0] == (1.0 + 3 + 5 + 7) / 4);
    const auto p = ops::global_avg_pool(Tensor<double>({2, 3, 4, 5}, 2.5));
    CHECK(p.shape() == Shape{2, 3});
    for (double v : p.data()) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("bilinear upsample with half-pixel centers") {
    const auto c = ops::upsample_bilinear(Tensor<double>({1, 2, 3, 3}, 0.75), 7, 11);
    CHECK(c.shape() == Shape{1, 2, 7, 11});
    for (double v : c.data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));

    const auto x = random_tensor({2, 2, 4, 3}, 11);
    const auto y = ops::upsample_bilinear(x, 8, 7);
    double err = 0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t ch = 0; ch < 2; ++ch)
            for (std::size_t i = 0; i < 8; ++i)
                for (std::size_t j = 0; j < 7; ++j)
                    err = std::max(err, std::abs(y.at4(b, ch, i, j) - bilinear_ref(x, b, ch, i, j, 8, 7)));
    CHECK(err < 1e-14);
    CHECK(ops::upsample_bilinear(x, 4, 3) == x);
    CHECK_THROWS_AS(ops::upsample_bilinear(x, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(ops::upsample_bilinear(x, 2, 3), std::invalid_argument);
}

TEST_CASE("normalize_channels yields unit vectors and maps zero to the last axis") {
    auto x = random_tensor({2, 3, 4, 4}, 12);
    for (std::size_t c = 0; c < 3; ++c) x.at4(0, c, 1, 2) = 0;
    const auto y = ops::normalize_channels(x);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                double n = 0;
                for (std::size_t c = 0; c < 3; ++c) n += y.at4(b, c, i, j) * y.at4(b, c, i, j);
                CHECK(std::abs(std::sqrt(n) - 1) < 1e-12);
            }
    CHECK(y.at4(0, 2, 1, 2) == 1.0);
}

TEST_CASE("float and double conv agree to single precision") {
    const auto x = random_tensor({1, 4, 8, 8}, 13);
    const auto w = random_tensor({6, 4, 3, 3}, 14);
    const auto yd = ops::conv2d(x, w, nullptr, {1, 1, 1});
    const auto yf = ops::conv2d(x.cast<float>(), w.cast<float>(), nullptr, {1, 1, 1});
    CHECK(max_abs_diff(yd, yf.cast<double>()) < 1e-5);
}
