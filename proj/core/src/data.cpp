#include "sparseshare/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sparseshare/rng.hpp"

namespace sparseshare {

double Primitive::height_at(double x, double y) const {
    if (kind == Kind::sphere) {
        const double dx = x - cx, dy = y - cy;
        const double s = radius * radius - dx * dx - dy * dy;
        return s < 0 ? -1.0 : std::sqrt(s) - sink;
    }
    return (std::abs(x - cx) <= half_x && std::abs(y - cy) <= half_y) ? top : -1.0;
}

void DatasetConfig::validate() const {
    if (height == 0 || width == 0) throw std::invalid_argument("dataset: image size must be positive");
    if (min_primitives > max_primitives) throw std::invalid_argument("dataset: min_primitives > max_primitives");
    if (noise < 0) throw std::invalid_argument("dataset: noise must be >= 0");
}

double scene_height(std::span<const Primitive> primitives, double x, double y, int* owner) {
    double best = 0;
    int who = -1;
    for (std::size_t k = 0; k < primitives.size(); ++k) {
        const double h = primitives[k].height_at(x, y);
        if (h > best) {
            best = h;
            who = static_cast<int>(k);
        }
    }
    if (owner) *owner = who;
    return best;
}

double pixel_pitch(std::size_t extent) { return kWorldSize / static_cast<double>(extent); }

SampleRecord generate_scene(std::uint64_t seed, const DatasetConfig& config) {
    config.validate();
    Rng rng(seed);
    const std::size_t H = config.height, W = config.width;

    const std::size_t count =
        config.force_primitives ? *config.force_primitives
                                : config.min_primitives + rng.below(config.max_primitives - config.min_primitives + 1);
    std::vector<Primitive> prims(count);
    for (auto& p : prims) {
        p.kind = rng.uniform() < 0.5 ? Primitive::Kind::sphere : Primitive::Kind::box;
        p.cx = rng.uniform(0.3, kWorldSize - 0.3);
        p.cy = rng.uniform(0.3, kWorldSize - 0.3);
        if (p.kind == Primitive::Kind::sphere) {
            p.radius = rng.uniform(0.25, 0.45);
            p.sink = p.radius * rng.uniform(0.2, 0.5);
        } else {
            p.half_x = rng.uniform(0.15, 0.35);
            p.half_y = rng.uniform(0.15, 0.35);
            p.top = rng.uniform(0.15, 0.4);
        }
        for (double& a : p.albedo) a = rng.uniform(0.2, 1.0);
    }
    const double ground = rng.uniform(0.1, 0.6);
    const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double elevation = rng.uniform(30.0, 75.0) * std::numbers::pi / 180.0;
    const double light[3] = {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                             std::sin(elevation)};

    SampleRecord r;
    r.seed = seed;
    r.image = Tensor<double>({3, H, W});
    r.depth = Tensor<double>({1, H, W});
    r.normals = Tensor<double>({3, H, W});
    r.seg.assign(H * W, 0);
    r.owner.assign(H * W, -1);

    const double py = pixel_pitch(H), px = pixel_pitch(W);
    const std::size_t plane = H * W;
    double lum = 0;
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            const std::size_t p = i * W + j;
            const double x = (static_cast<double>(j) + 0.5) * px;
            const double y = (static_cast<double>(i) + 0.5) * py;
            int who = -1;
            const double h = scene_height(prims, x, y, &who);
            double n[3] = {0, 0, 1};
            double albedo[3] = {ground, ground, ground};
            if (who >= 0) {
                const Primitive& q = prims[static_cast<std::size_t>(who)];
                r.seg[p] = q.kind == Primitive::Kind::sphere ? 1 : 2;
                if (q.kind == Primitive::Kind::sphere) {
                    n[0] = (x - q.cx) / q.radius;
                    n[1] = (y - q.cy) / q.radius;
                    n[2] = (h + q.sink) / q.radius;
                    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
                    for (double& v : n) v /= len;
                }
                std::copy(std::begin(q.albedo), std::end(q.albedo), albedo);
            }
            r.owner[p] = who;
            r.depth[p] = kMaxHeight - h;
            for (std::size_t c = 0; c < 3; ++c) r.normals[c * plane + p] = n[c];
            const double shade = 0.25 + 0.75 * std::max(0.0, n[0] * light[0] + n[1] * light[1] + n[2] * light[2]);
            for (std::size_t c = 0; c < 3; ++c) {
                const double clean = std::clamp(albedo[c] * shade, 0.0, 1.0);
                lum += clean;
                r.image[c * plane + p] = clean;
            }
        }
    }
    if (config.noise > 0) {
        for (double& v : r.image.data()) v = std::clamp(v + config.noise * rng.normal(), 0.0, 1.0);
    }
    r.mean_luminance = lum / static_cast<double>(3 * plane);
    r.labels["contains_sphere"] = std::find(r.seg.begin(), r.seg.end(), 1) != r.seg.end() ? 1 : 0;
    r.labels["bright_scene"] = r.mean_luminance > config.bright_threshold ? 1 : 0;
    r.primitives = std::move(prims);
    return r;
}

Splits make_splits(const DatasetConfig& config) {
    config.validate();
    const std::size_t n = config.samples;
    if (n < 5) throw std::invalid_argument("make_splits: need at least 5 samples, got " + std::to_string(n));
    const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
    Splits s;
    for (std::size_t i = 0; i < n; ++i) {
        SampleRecord rec = generate_scene(derive_seed(config.seed, "sample/" + std::to_string(i)), config);
        if (i < n_train) {
            s.train.push_back(std::move(rec));
        } else if (i < n_train + n_val) {
            s.val.push_back(std::move(rec));
        } else {
            s.test.push_back(std::move(rec));
        }
    }
    return s;
}

template <typename T>
Batch<T> make_batch(std::span<const SampleRecord> split, std::span<const TaskSpec> tasks,
                    std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const SampleRecord& first = split[indices.front()];
    const std::size_t H = first.height(), W = first.width(), B = indices.size(), plane = H * W;
    Batch<T> b;
    b.indices.assign(indices.begin(), indices.end());
    b.images = Tensor<T>({B, 3, H, W});
    for (std::size_t k = 0; k < B; ++k) {
        const SampleRecord& rec = split[indices[k]];
        if (rec.height() != H || rec.width() != W) throw ShapeError("make_batch: mixed image sizes in one split");
        for (std::size_t i = 0; i < 3 * plane; ++i) b.images[k * 3 * plane + i] = static_cast<T>(rec.image[i]);
    }
    for (const TaskSpec& t : tasks) {
        TaskTarget<T> tt;
        switch (t.kind) {
            case TaskKind::segmentation:
                tt.classes.reserve(B * plane);
                for (std::size_t k = 0; k < B; ++k) {
                    const auto& seg = split[indices[k]].seg;
                    tt.classes.insert(tt.classes.end(), seg.begin(), seg.end());
                }
                break;
            case TaskKind::depth:
            case TaskKind::normals: {
                const std::size_t ch = t.kind == TaskKind::depth ? 1 : 3;
                tt.values = Tensor<T>({B, ch, H, W});
                for (std::size_t k = 0; k < B; ++k) {
                    const auto& src = t.kind == TaskKind::depth ? split[indices[k]].depth : split[indices[k]].normals;
                    for (std::size_t i = 0; i < ch * plane; ++i) tt.values[k * ch * plane + i] = static_cast<T>(src[i]);
                }
                break;
            }
            case TaskKind::binary_classification:
                tt.values = Tensor<T>({B, 1});
                for (std::size_t k = 0; k < B; ++k) {
                    const auto& labels = split[indices[k]].labels;
                    const auto it = labels.find(t.label);
                    if (it == labels.end()) throw std::invalid_argument("make_batch: sample has no label " + t.label);
                    tt.values[k] = static_cast<T>(it->second);
                }
                break;
        }
        b.targets.push_back(std::move(tt));
    }
    return b;
}

template <typename T>
std::vector<Batch<T>> iterate_batches(std::span<const SampleRecord> split, std::span<const TaskSpec> tasks,
                                      std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed) {
    if (batch_size == 0) throw std::invalid_argument("iterate_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(split.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    std::vector<Batch<T>> out;
    for (std::size_t s = 0; s < order.size(); s += batch_size) {
        const std::size_t e = std::min(order.size(), s + batch_size);
        out.push_back(make_batch<T>(split, tasks, std::span<const std::size_t>(order.data() + s, e - s)));
    }
    return out;
}

template Batch<float> make_batch(std::span<const SampleRecord>, std::span<const TaskSpec>,
                                 std::span<const std::size_t>);
template Batch<double> make_batch(std::span<const SampleRecord>, std::span<const TaskSpec>,
                                  std::span<const std::size_t>);
template std::vector<Batch<float>> iterate_batches(std::span<const SampleRecord>, std::span<const TaskSpec>,
                                                   std::size_t, std::optional<std::uint64_t>);
template std::vector<Batch<double>> iterate_batches(std::span<const SampleRecord>, std::span<const TaskSpec>,
                                                    std::size_t, std::optional<std::uint64_t>);

}  // namespace sparseshare
