#pragma once

#include <cstdint>

#include "sparseshare/model.hpp"
#include "sparseshare/rng.hpp"
#include "sparseshare/tensor.hpp"

namespace testutil {

template <typename T = double>
sparseshare::Tensor<T> random_tensor(sparseshare::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    sparseshare::Tensor<T> t(std::move(shape));
    sparseshare::Rng rng(seed);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

/// Same as random_tensor but every entry has |x| >= margin.
inline sparseshare::Tensor<double> away_from_zero(sparseshare::Shape shape, std::uint64_t seed, double margin = 0.05) {
    auto t = random_tensor(std::move(shape), seed);
    for (auto& v : t.data()) v = v < 0 ? v - margin : v + margin;
    return t;
}

/// A reduced backbone (stem 3->4, three blocks up to 6 channels) keeps model tests fast.
inline sparseshare::BackboneSpec small_backbone() {
    sparseshare::BackboneSpec s;
    s.in_channels = 3;
    s.stem_channels = 4;
    s.blocks = {{4, 4, 1, 1}, {4, 6, 2, 1}, {6, 6, 1, 2}};
    return s;
}

}  // namespace testutil
