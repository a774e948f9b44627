#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "doctest.h"
#include "sparseshare/data.hpp"

using namespace sparseshare;

namespace {

DatasetConfig small_config(std::size_t samples = 40) {
    DatasetConfig cfg;
    cfg.samples = samples;
    cfg.seed = 3;
    return cfg;
}

/// Cap or box height at (x, y) straight from the primitive's parameters.
double oracle_height(const Primitive& p, double x, double y) {
    if (p.kind == Primitive::Kind::sphere) {
        const double r2 = p.radius * p.radius - (x - p.cx) * (x - p.cx) - (y - p.cy) * (y - p.cy);
        return r2 >= 0 ? std::sqrt(r2) - p.sink : -1.0;
    }
    return std::abs(x - p.cx) <= p.half_x && std::abs(y - p.cy) <= p.half_y ? p.top : -1.0;
}

}  // namespace

TEST_CASE("same seed gives a bitwise identical record") {
    const auto cfg = small_config();
    const auto a = generate_scene(77, cfg), b = generate_scene(77, cfg);
    CHECK(a.image == b.image);
    CHECK(a.depth == b.depth);
    CHECK(a.normals == b.normals);
    CHECK(a.seg == b.seg);
    CHECK(a.labels == b.labels);
    CHECK_FALSE(generate_scene(78, cfg).image == a.image);
}

TEST_CASE("an empty scene is a flat ground plane") {
    auto cfg = small_config();
    cfg.force_primitives = 0;
    const auto r = generate_scene(5, cfg);
    for (auto c : r.seg) CHECK(c == 0);
    for (double d : r.depth.data()) CHECK(d == kMaxHeight);
    const std::size_t plane = 32 * 32;
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(r.normals[p] == 0.0);
        CHECK(r.normals[plane + p] == 0.0);
        CHECK(r.normals[2 * plane + p] == 1.0);
    }
    CHECK(r.labels.at("contains_sphere") == 0);
}

TEST_CASE("record invariants hold across many scenes") {
    const auto cfg = small_config();
    const double pitch = pixel_pitch(32);
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto r = generate_scene(seed, cfg);
        REQUIRE(r.image.shape() == Shape{3, 32, 32});
        CHECK(r.primitives.size() >= cfg.min_primitives);
        CHECK(r.primitives.size() <= cfg.max_primitives);
        for (double v : r.image.data()) CHECK((v >= 0.0 && v <= 1.0));
        const std::size_t plane = 32 * 32;
        for (std::size_t i = 0; i < 32; ++i)
            for (std::size_t j = 0; j < 32; ++j) {
                const std::size_t p = i * 32 + j;
                const double x = (j + 0.5) * pitch, y = (i + 0.5) * pitch;
                const double n = std::sqrt(r.normals[p] * r.normals[p] + r.normals[plane + p] * r.normals[plane + p] +
                                           r.normals[2 * plane + p] * r.normals[2 * plane + p]);
                CHECK(std::abs(n - 1) < 1e-6);
                CHECK(r.depth[p] >= 0.0);
                // The highest primitive owns the pixel; the ground owns the rest.
                double best = 0;
                int who = -1;
                for (std::size_t k = 0; k < r.primitives.size(); ++k) {
                    const double h = oracle_height(r.primitives[k], x, y);
                    if (h > best) {
                        best = h;
                        who = static_cast<int>(k);
                    }
                }
                CHECK(r.owner[p] == who);
                CHECK(std::abs(r.depth[p] - (kMaxHeight - best)) < 1e-15);
                const int want_class =
                    who < 0 ? 0 : (r.primitives[static_cast<std::size_t>(who)].kind == Primitive::Kind::sphere ? 1 : 2);
                CHECK(r.seg[p] == want_class);
                if (r.seg[p] == 1) CHECK(r.depth[p] < kMaxHeight);
            }
        CHECK(r.labels.at("contains_sphere") == (std::count(r.seg.begin(), r.seg.end(), 1) > 0 ? 1 : 0));
        CHECK(r.labels.at("bright_scene") == (r.mean_luminance > cfg.bright_threshold ? 1 : 0));
    }
}

TEST_CASE("normals agree with finite differences of depth") {
    const auto cfg = small_config();
    const double pitch = pixel_pitch(32);
    double total_deg = 0;
    std::size_t count = 0;
    for (std::uint64_t seed = 100; seed < 160; ++seed) {
        const auto r = generate_scene(seed, cfg);
        const std::size_t plane = 32 * 32;
        for (std::size_t i = 1; i + 1 < 32; ++i)
            for (std::size_t j = 1; j + 1 < 32; ++j) {
                const std::size_t p = i * 32 + j;
                bool interior = true;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj)
                        interior = interior && r.owner[(i + di) * 32 + (j + dj)] == r.owner[p];
                if (!interior) continue;
                // height = max_height - depth, normal = (-dh/dx, -dh/dy, 1) = (dd/dx, dd/dy, 1).
                const double gx = (r.depth[p + 1] - r.depth[p - 1]) / (2 * pitch);
                const double gy = (r.depth[p + 32] - r.depth[p - 32]) / (2 * pitch);
                const double len = std::sqrt(gx * gx + gy * gy + 1);
                const double dot =
                    (gx * r.normals[p] + gy * r.normals[plane + p] + r.normals[2 * plane + p]) / len;
                total_deg += std::acos(std::clamp(dot, -1.0, 1.0)) * 180 / std::numbers::pi;
                ++count;
            }
    }
    REQUIRE(count > 10000);
    CHECK(total_deg / static_cast<double>(count) < 2.0);
}

TEST_CASE("binary labels are balanced and linearly separable on oracle features") {
    const auto cfg = small_config();
    struct Probe {
        const char* label;
        double (*feature)(const SampleRecord&);
    };
    const Probe probes[] = {
        {"contains_sphere", [](const SampleRecord& r) { return static_cast<double>(std::count(r.seg.begin(), r.seg.end(), 1)); }},
        {"bright_scene", [](const SampleRecord& r) { return r.mean_luminance; }},
    };
    std::vector<SampleRecord> records;
    for (std::uint64_t seed = 0; seed < 200; ++seed) records.push_back(generate_scene(1000 + seed, cfg));
    for (const auto& probe : probes) {
        // In one dimension a linear separator exists iff the classes do not interleave.
        double max_neg = -INFINITY, min_pos = INFINITY;
        std::size_t pos = 0;
        for (const auto& r : records) {
            const double f = probe.feature(r);
            if (r.labels.at(probe.label)) {
                min_pos = std::min(min_pos, f);
                ++pos;
            } else {
                max_neg = std::max(max_neg, f);
            }
        }
        INFO(probe.label << " positives " << pos);
        CHECK(max_neg < min_pos);
        CHECK(pos >= 40);
        CHECK(pos <= 160);
    }
}

TEST_CASE("split sizes follow 60/20/20") {
    auto cfg = small_config(100);
    auto s = make_splits(cfg);
    CHECK(s.train.size() == 60);
    CHECK(s.val.size() == 20);
    CHECK(s.test.size() == 20);
    cfg.samples = 10;
    s = make_splits(cfg);
    CHECK(s.train.size() == 6);
    CHECK(s.val.size() == 2);
    CHECK(s.test.size() == 2);
    cfg.samples = 4;
    CHECK_THROWS_AS(make_splits(cfg), std::invalid_argument);
}

TEST_CASE("splits are deterministic and disjoint") {
    const auto cfg = small_config(30);
    const auto a = make_splits(cfg), b = make_splits(cfg);
    std::set<std::uint64_t> seeds;
    for (const auto* part : {&a.train, &a.val, &a.test})
        for (const auto& r : *part) seeds.insert(r.seed);
    CHECK(seeds.size() == 30);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].seed == b.train[i].seed);
        CHECK(a.train[i].image == b.train[i].image);
    }
    auto other = cfg;
    other.seed = 4;
    CHECK(make_splits(other).train[0].seed != a.train[0].seed);
}

TEST_CASE("batches cover the split once per epoch") {
    const auto s = make_splits(small_config(40));
    const std::vector<TaskSpec> tasks{TaskSpec::segmentation(), TaskSpec::depth()};
    for (std::optional<std::uint64_t> seed : {std::optional<std::uint64_t>{}, std::optional<std::uint64_t>{9}}) {
        const auto batches = iterate_batches<double>(s.train, tasks, 5, seed);
        std::vector<std::size_t> seen;
        for (const auto& b : batches) {
            CHECK(b.size() <= 5);
            CHECK(b.size() == b.indices.size());
            seen.insert(seen.end(), b.indices.begin(), b.indices.end());
        }
        CHECK(batches.back().size() == 24 % 5);
        std::vector<std::size_t> sorted = seen;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
        if (!seed) CHECK(seen == sorted);
    }
    auto order = [&](std::uint64_t seed) {
        std::vector<std::size_t> out;
        for (const auto& b : iterate_batches<double>(s.train, tasks, 5, seed)) out.insert(out.end(), b.indices.begin(), b.indices.end());
        return out;
    };
    CHECK(order(9) == order(9));
    CHECK(order(9) != order(10));
    CHECK_THROWS_AS(iterate_batches<double>(s.train, tasks, 0, std::nullopt), std::invalid_argument);
}

TEST_CASE("batch targets are stacked per task") {
    const auto s = make_splits(small_config(20));
    const std::vector<TaskSpec> tasks{TaskSpec::segmentation(), TaskSpec::depth(), TaskSpec::normals(),
                                      TaskSpec::classification("sphere", "contains_sphere")};
    const std::size_t idx[] = {3, 1};
    const auto b = make_batch<float>(s.train, tasks, idx);
    REQUIRE(b.targets.size() == 4);
    CHECK(b.images.shape() == Shape{2, 3, 32, 32});
    const std::size_t plane = 32 * 32;
    for (std::size_t k = 0; k < 2; ++k) {
        const auto& r = s.train[idx[k]];
        for (std::size_t p = 0; p < plane; ++p) {
            CHECK(b.targets[0].classes[k * plane + p] == r.seg[p]);
            CHECK(b.targets[1].values[k * plane + p] == static_cast<float>(r.depth[p]));
            CHECK(b.targets[2].values[(k * 3 + 1) * plane + p] == static_cast<float>(r.normals[plane + p]));
            CHECK(b.images[(k * 3 + 2) * plane + p] == static_cast<float>(r.image[2 * plane + p]));
        }
        CHECK(b.targets[3].values[k] == static_cast<float>(r.labels.at("contains_sphere")));
    }
    const std::vector<TaskSpec> bad{TaskSpec::classification("nope", "no_such_label")};
    CHECK_THROWS_AS(make_batch<float>(s.train, bad, idx), std::invalid_argument);
}
