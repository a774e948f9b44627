#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "sparseshare/model.hpp"
#include "test_util.hpp"

using namespace sparseshare;
using testutil::random_tensor;
using testutil::small_backbone;

namespace {

std::vector<TaskSpec> dense_tasks() { return {TaskSpec::segmentation(), TaskSpec::depth(), TaskSpec::normals()}; }

std::vector<TaskSpec> all_tasks() {
    return {TaskSpec::segmentation(), TaskSpec::depth(), TaskSpec::normals(),
            TaskSpec::classification("sphere", "contains_sphere")};
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_CASE("same seed builds bitwise identical parameters") {
    const auto a = MultiTaskModel<double>::build(small_backbone(), all_tasks(), 11);
    const auto b = MultiTaskModel<double>::build(small_backbone(), all_tasks(), 11);
    const auto c = MultiTaskModel<double>::build(small_backbone(), all_tasks(), 12);
    REQUIRE(a.params().size() == b.params().size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params().at(i).name == b.params().at(i).name);
        CHECK(a.params().at(i).value == b.params().at(i).value);
        any_diff = any_diff || !(a.params().at(i).value == c.params().at(i).value);
    }
    CHECK(any_diff);
}

TEST_CASE("default backbone registers one regularized weight per conv layer") {
    const auto spec = BackboneSpec::desk_default();
    // stem + conv1/conv2 of 4 blocks + projections on 16->32 (stride 2) and 32->64.
    const std::size_t expected = 1 + 2 * 4 + 2;
    const auto m = MultiTaskModel<float>::build(spec, dense_tasks(), 0);
    const auto reg = m.params().regularized_indices();
    CHECK(reg.size() == expected);
    CHECK(m.backbone_convs().size() == expected);
    std::set<std::string> names;
    for (std::size_t i : reg) names.insert(m.params().at(i).name);
    for (const char* n : {"backbone.stem.weight", "backbone.block1.conv1.weight", "backbone.block1.conv2.weight",
                          "backbone.block2.proj.weight", "backbone.block4.proj.weight"})
        CHECK(names.count(n) == 1);
    CHECK(names.count("backbone.block1.proj.weight") == 0);
    CHECK(names.count("backbone.block3.proj.weight") == 0);
    CHECK(spec.output_channels() == 64);
    CHECK(spec.output_stride() == 2);
}

TEST_CASE("registry partitions shared and task parameters") {
    for (bool affine : {false, true}) {
        auto spec = small_backbone();
        spec.affine = affine;
        const auto m = MultiTaskModel<double>::build(spec, all_tasks(), 3);
        std::set<std::string> names;
        for (const auto& e : m.params()) {
            CHECK(names.insert(e.name).second);
            if (e.shared) {
                CHECK(starts_with(e.name, "backbone."));
                CHECK(e.owner == "backbone");
            } else {
                CHECK(starts_with(e.name, "heads." + e.owner + "."));
                CHECK_FALSE(e.regularized);
            }
            if (e.regularized) {
                CHECK(e.shared);
                CHECK(e.value.rank() == 4);
                CHECK(starts_with(e.name, "backbone."));
                CHECK(e.name.substr(e.name.size() - 7) == ".weight");
            }
            const bool is_backbone_conv_weight =
                starts_with(e.name, "backbone.") && e.name.substr(e.name.size() - 7) == ".weight";
            CHECK(e.regularized == is_backbone_conv_weight);
        }
    }
}

TEST_CASE("initialization is he uniform with zero biases") {
    const auto m = MultiTaskModel<double>::build(BackboneSpec::desk_default(), all_tasks(), 5);
    for (const auto& e : m.params()) {
        const auto& v = e.value;
        const bool is_bias = e.name.substr(e.name.size() - 5) == ".bias";
        if (is_bias) {
            for (double x : v.data()) CHECK(x == 0.0);
            continue;
        }
        // fan-in: C*Kh*Kw for conv, in-features for linear.
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < v.rank(); ++d) fan_in *= v.dim(d);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        double max_abs = 0, sum_sq = 0;
        for (double x : v.data()) {
            max_abs = std::max(max_abs, std::abs(x));
            sum_sq += x * x;
        }
        INFO(e.name);
        CHECK(max_abs <= bound);
        // Uniform(-b, b) has variance b^2/3; large tensors land close to it.
        if (v.numel() >= 2000) CHECK(std::abs(sum_sq / static_cast<double>(v.numel()) / (bound * bound / 3) - 1) < 0.1);
    }
}

TEST_CASE("classification head carries exactly one parameter set") {
    const auto m = MultiTaskModel<double>::build(small_backbone(), {TaskSpec::classification("cls", "contains_sphere")}, 1);
    std::set<std::string> head;
    for (const auto& e : m.params())
        if (!e.shared) head.insert(e.name);
    const std::set<std::string> expected{"heads.cls.conv.weight", "heads.cls.conv.bias", "heads.cls.fc1.weight",
                                         "heads.cls.fc1.bias",   "heads.cls.fc2.weight", "heads.cls.fc2.bias"};
    CHECK(head == expected);
}

TEST_CASE("construction rejects bad inputs") {
    CHECK_THROWS_AS(MultiTaskModel<double>::build(small_backbone(), {}, 0), std::invalid_argument);
    CHECK_THROWS_AS(MultiTaskModel<double>::build(small_backbone(), {TaskSpec::depth(), TaskSpec::depth()}, 0),
                    std::invalid_argument);
    auto spec = small_backbone();
    spec.blocks[1].in_channels = 5;
    CHECK_THROWS_AS(MultiTaskModel<double>::build(spec, dense_tasks(), 0), std::invalid_argument);
    CHECK_THROWS_AS(TaskSpec::from_name("nope"), std::invalid_argument);
}

TEST_CASE("desk default feature and prediction shapes") {
    const auto m = MultiTaskModel<float>::build(BackboneSpec::desk_default(), all_tasks(), 2);
    const auto images = random_tensor<float>({8, 3, 32, 32}, 1, 0, 1);
    const auto feat = m.infer_shared(images);
    CHECK(feat.shape() == Shape{8, 64, 16, 16});
    CHECK(m.infer_task(0, feat, 32, 32).shape() == Shape{8, 3, 32, 32});
    CHECK(m.infer_task(1, feat, 32, 32).shape() == Shape{8, 1, 32, 32});
    const auto normals = m.infer_task(2, feat, 32, 32);
    CHECK(normals.shape() == Shape{8, 3, 32, 32});
    const std::size_t plane = 32 * 32;
    for (std::size_t b = 0; b < 8; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
            double s = 0;
            for (std::size_t c = 0; c < 3; ++c) s += double(normals[(b * 3 + c) * plane + p]) * normals[(b * 3 + c) * plane + p];
            CHECK(std::abs(std::sqrt(s) - 1) < 1e-6);
        }
    CHECK(m.infer_task(3, feat, 32, 32).shape() == Shape{8, 1});
}

TEST_CASE("input validation") {
    const auto m = MultiTaskModel<double>::build(small_backbone(), dense_tasks(), 2);
    CHECK_THROWS_AS(m.infer_shared(random_tensor({1, 4, 8, 8}, 1)), ShapeError);
    CHECK_THROWS_AS(m.infer_shared(random_tensor({1, 3, 7, 8}, 1)), ShapeError);
    CHECK_THROWS_AS(m.infer_shared(random_tensor({3, 8, 8}, 1)), ShapeError);
}

TEST_CASE("zero backbone gives zero features") {
    auto m = MultiTaskModel<double>::build(small_backbone(), dense_tasks(), 4);
    for (auto& e : m.params())
        if (e.shared) e.value = Tensor<double>(e.value.shape());
    const auto feat = m.infer_shared(random_tensor({2, 3, 8, 8}, 9));
    for (double v : feat.data()) CHECK(v == 0.0);
}

TEST_CASE("features depend only on shared parameters and heads are local") {
    auto m = MultiTaskModel<double>::build(small_backbone(), all_tasks(), 6);
    const auto images = random_tensor({2, 3, 8, 8}, 7, 0, 1);
    const auto feat = m.infer_shared(images);
    std::vector<Tensor<double>> before;
    for (std::size_t t = 0; t < m.tasks().size(); ++t) before.push_back(m.infer_task(t, feat, 8, 8));

    for (std::size_t target = 0; target < m.tasks().size(); ++target) {
        auto perturbed = m;
        for (auto& e : perturbed.params())
            if (e.owner == m.tasks()[target].name)
                for (auto& v : e.value.data()) v += 0.1;
        CHECK(perturbed.infer_shared(images) == feat);
        for (std::size_t t = 0; t < m.tasks().size(); ++t) {
            const auto out = perturbed.infer_task(t, feat, 8, 8);
            if (t == target)
                CHECK_FALSE(out == before[t]);
            else
                CHECK(out == before[t]);
        }
    }
}

TEST_CASE("tape forward equals eager inference") {
    for (bool affine : {false, true}) {
        auto spec = small_backbone();
        spec.affine = affine;
        auto m = MultiTaskModel<double>::build(spec, all_tasks(), 8);
        if (affine)
            for (auto& e : m.params())
                if (e.name.find(".affine.") != std::string::npos)
                    e.value = random_tensor(e.value.shape(), 40 + e.value.numel(), 0.5, 1.5);
        const auto images = random_tensor({2, 3, 8, 8}, 3, 0, 1);
        Tape<double> tape;
        const auto bound = m.bind(tape, false);
        CHECK(bound.size() == m.params().size());
        const Var feat = m.forward_shared(tape, bound, tape.constant(images));
        const auto eager = m.infer_shared(images);
        CHECK(tape.value(feat) == eager);
        for (std::size_t t = 0; t < m.tasks().size(); ++t)
            CHECK(tape.value(m.forward_task(tape, bound, t, feat, 8, 8)) == m.infer_task(t, eager, 8, 8));
    }
}

TEST_CASE("identical task definitions get identical heads") {
    const auto m = MultiTaskModel<double>::build(
        small_backbone(), {TaskSpec::depth("depth_a"), TaskSpec::depth("depth_b")}, 10);
    CHECK(m.params().at(m.params().index_of("heads.depth_a.conv.weight")).value ==
          m.params().at(m.params().index_of("heads.depth_b.conv.weight")).value);
}
