#include "sparseshare/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "sparseshare/rng.hpp"

namespace sparseshare {

namespace {

constexpr std::size_t kParams = 0, kOptim = 1, kEta = 2;
constexpr std::size_t kEvalBatch = 32;

template <typename T>
Optimizer<T> make_optimizer(const ExperimentConfig& c, double lambda) {
    if (c.optimizer == "sgd") return ProxSgd<T>(c.lr, lambda);
    AdamConfig a;
    a.lr = c.lr;
    return ProxAdam<T>(a, lambda, c.prox_step);
}

template <typename T>
TrainingState<T> make_state(const ExperimentConfig& c, std::uint64_t seed) {
    auto model = MultiTaskModel<T>::build(BackboneSpec::desk_default(), c.task_specs(), seed);
    auto partition = make_partition(model.params(), c.scheme);
    auto channels = make_partition(model.params(), GroupScheme::channel_wise);
    auto weights = make_uncertainty_weights<T>(c.tasks.size());
    return TrainingState<T>{std::move(model),       std::move(weights),         std::move(partition),
                            std::move(channels),    make_optimizer<T>(c, c.lambda), make_optimizer<T>(c, 0.0),
                            c.freeze_eta,           0};
}

double mean_of(const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

std::optional<double> std_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return std::nullopt;
    const double m = mean_of(xs);
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::string run_id_for(const ExperimentConfig& c) {
    return c.experiment + "_" + scheme_name(c.scheme) + "_lambda" + exact_number(c.lambda);
}

template <typename T>
void append_moments(Container& c, const std::string& prefix, const ParamRegistry<T>& reg, const Optimizer<T>& opt) {
    std::visit(
        [&](const auto& o) {
            c.sections[kOptim].push_back(
                Record::from(prefix + ".step", Tensor<double>::scalar(static_cast<double>(o.steps()))));
            if constexpr (std::is_same_v<std::decay_t<decltype(o)>, ProxAdam<T>>) {
                for (std::size_t i = 0; i < o.first_moments().size(); ++i) {
                    c.sections[kOptim].push_back(Record::from(prefix + ".m." + reg.at(i).name, o.first_moments()[i]));
                    c.sections[kOptim].push_back(Record::from(prefix + ".v." + reg.at(i).name, o.second_moments()[i]));
                }
            }
        },
        opt);
}

template <typename T>
void restore_moments(const Container& c, const std::string& prefix, const ParamRegistry<T>& reg, Optimizer<T>& opt) {
    const double steps = c.get(kOptim, prefix + ".step").as<double>().item();
    if (auto* adam = std::get_if<ProxAdam<T>>(&opt)) {
        std::vector<Tensor<T>> m, v;
        if (steps > 0) {
            for (const auto& e : reg) {
                m.push_back(c.get(kOptim, prefix + ".m." + e.name).template as<T>());
                v.push_back(c.get(kOptim, prefix + ".v." + e.name).template as<T>());
                if (m.back().shape() != e.value.shape() || v.back().shape() != e.value.shape()) {
                    throw CheckpointError("checkpoint moment shape mismatch for " + e.name);
                }
            }
        }
        adam->restore(static_cast<std::size_t>(steps), std::move(m), std::move(v));
    } else {
        std::get<ProxSgd<T>>(opt).restore(static_cast<std::size_t>(steps));
    }
}

template <typename T>
RunResult run_typed(const ExperimentConfig& config, std::shared_ptr<const Splits> data) {
    RunResult result;
    result.config = config;
    result.run_id = run_id_for(config);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t s = 0; s < config.seeds; ++s) {
        const std::uint64_t seed = config.seed + s;
        SeedResult sr;
        sr.seed = seed;
        try {
            SeedSession<T> session(config, seed, data);
            for (std::size_t e = 0; e < config.epochs; ++e) sr.epochs.push_back(session.run_epoch());
            sr.profile = session.profile();
            sr.final_sparsity = sr.profile.empty() ? measure_sparsity(session.state().model.params(),
                                                                      session.state().channels, 0)
                                                   : sr.profile.back();
            sr.val = session.evaluate(data->val, "val");
            sr.test = session.evaluate(data->test, "test");
            if (config.benchmark) {
                const auto& model = session.state().model;
                const Shape shape{config.bench_batch, 3, config.dataset.height, config.dataset.width};
                const CompactPlan plan =
                    plan_compaction(model, session.state().channels, config.dataset.height, config.dataset.width);
                const CompactBackbone<T> compact = apply_compaction(model, plan);
                const BenchResult dense = benchmark_backbone(model, shape, config.bench_warmup, config.bench_reps);
                const BenchResult comp = benchmark_backbone(compact, shape, config.bench_warmup, config.bench_reps);
                auto row = [&](const char* name, const BenchResult& b, std::size_t params, std::uint64_t macs) {
                    TimingRow t;
                    t.model = name;
                    t.lambda = config.lambda;
                    t.group_sparsity_pct = sr.final_sparsity.group_sparsity_pct;
                    t.batch_shape = shape;
                    t.mean_ms = b.mean_ms;
                    t.std_ms = b.std_ms;
                    t.median_ms = b.median_ms;
                    t.speedup_vs_dense = dense.mean_ms / b.mean_ms;
                    t.params = params;
                    t.macs = macs;
                    return t;
                };
                sr.timing.push_back(row("dense", dense, plan.dense_params, plan.dense_macs));
                sr.timing.push_back(row("compact", comp, compact.param_count(), plan.compact_macs));
            }
            if (config.checkpoint) {
                const auto dir = std::filesystem::path(output_root(config.out)) / result.run_id;
                std::filesystem::create_directories(dir);
                session.save((dir / ("seed" + std::to_string(seed) + ".gspr")).string());
            }
            sr.ok = true;
        } catch (const TrainingDiverged& e) {
            sr.ok = false;
            sr.error = e.what();
        }
        result.seeds.push_back(std::move(sr));
    }
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    aggregate(result);
    return result;
}

}  // namespace

const MetricSummary& RunResult::metric(std::string_view task) const {
    for (const auto& m : metrics) {
        if (m.task == task) return m;
    }
    throw std::out_of_range("run " + run_id + " has no task " + std::string(task));
}

void aggregate(RunResult& r) {
    r.metrics.clear();
    r.seeds_ok = 0;
    std::vector<double> gs, ps;
    for (const auto& s : r.seeds) {
        if (!s.ok) continue;
        ++r.seeds_ok;
        gs.push_back(s.final_sparsity.group_sparsity_pct);
        ps.push_back(s.final_sparsity.param_sparsity_pct);
    }
    r.group_sparsity_pct = gs.empty() ? 0 : mean_of(gs);
    r.param_sparsity_pct = ps.empty() ? 0 : mean_of(ps);
    for (std::size_t ti = 0; ti < r.config.tasks.size(); ++ti) {
        MetricSummary m;
        m.task = r.config.tasks[ti];
        m.kind = metric_for(TaskSpec::from_name(m.task).kind);
        std::vector<double> val, test;
        for (const auto& s : r.seeds) {
            if (!s.ok) continue;
            val.push_back(s.val.at(ti).value);
            test.push_back(s.test.at(ti).value);
        }
        if (!val.empty()) {
            m.val_mean = mean_of(val);
            m.test_mean = mean_of(test);
        }
        m.val_std = std_of(val);
        m.test_std = std_of(test);
        r.metrics.push_back(std::move(m));
    }
}

template <typename T>
SeedSession<T>::SeedSession(const ExperimentConfig& config, std::uint64_t seed, std::shared_ptr<const Splits> data)
    : config_(config), seed_(seed), data_(std::move(data)), state_(make_state<T>(config, seed)) {
    config_.validate();
    if (!data_) data_ = std::make_shared<const Splits>(make_splits(config_.dataset));
}

template <typename T>
EpochLog SeedSession<T>::run_epoch() {
    const auto tasks = config_.task_specs();
    const auto batches = iterate_batches<T>(data_->train, tasks, config_.batch_size,
                                            derive_seed(seed_, "shuffle/" + std::to_string(state_.epoch)));
    const EpochStats st = train_epoch(state_, std::span<const Batch<T>>(batches));
    profile_.push_back(st.sparsity);
    return EpochLog{st.epoch, st.mean_combined_loss, st.mean_task_loss, st.penalty, st.eta};
}

template <typename T>
std::vector<MetricRecord> SeedSession<T>::evaluate(std::span<const SampleRecord> split,
                                                   const std::string& split_name) const {
    const auto tasks = config_.task_specs();
    const auto& model = state_.model;
    const auto batches = iterate_batches<T>(split, tasks, kEvalBatch, std::nullopt);
    std::vector<std::vector<T>> preds(tasks.size()), vals(tasks.size());
    std::vector<std::vector<std::int32_t>> classes(tasks.size());
    std::vector<Shape> pred_shape(tasks.size());
    for (const auto& b : batches) {
        const Tensor<T> features = model.infer_shared(b.images);
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            const Tensor<T> p = model.infer_task(ti, features, b.images.dim(2), b.images.dim(3));
            preds[ti].insert(preds[ti].end(), p.data().begin(), p.data().end());
            vals[ti].insert(vals[ti].end(), b.targets[ti].values.data().begin(), b.targets[ti].values.data().end());
            classes[ti].insert(classes[ti].end(), b.targets[ti].classes.begin(), b.targets[ti].classes.end());
            pred_shape[ti] = p.shape();
        }
    }
    std::vector<MetricRecord> out;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        Shape s = pred_shape[ti];
        s[0] = split.size();
        const Tensor<T> pred(s, std::move(preds[ti]));
        MetricRecord m;
        m.task = tasks[ti].name;
        m.kind = metric_for(tasks[ti].kind);
        m.split = split_name;
        m.epoch = state_.epoch;
        switch (tasks[ti].kind) {
            case TaskKind::segmentation: m.value = iou(pred, std::span<const std::int32_t>(classes[ti])); break;
            case TaskKind::depth: m.value = mae(pred, Tensor<T>(s, std::move(vals[ti]))); break;
            case TaskKind::normals: m.value = cosine_similarity_mean(pred, Tensor<T>(s, std::move(vals[ti]))); break;
            case TaskKind::binary_classification: m.value = accuracy(pred, Tensor<T>(s, std::move(vals[ti]))); break;
        }
        out.push_back(std::move(m));
    }
    return out;
}

template <typename T>
void SeedSession<T>::save(const std::string& path) const {
    Container c;
    c.digest = config_digest(config_);
    for (const auto& e : state_.model.params()) c.sections[kParams].push_back(Record::from(e.name, e.value));
    append_moments(c, "optim", state_.model.params(), state_.model_optimizer);
    append_moments(c, "eta_optim", state_.loss_weights, state_.eta_optimizer);
    c.sections[kOptim].push_back(
        Record::from("train.epoch", Tensor<double>::scalar(static_cast<double>(state_.epoch))));
    c.sections[kOptim].push_back(Record::from("train.seed", Tensor<double>::scalar(static_cast<double>(seed_))));
    for (const auto& e : state_.loss_weights) c.sections[kEta].push_back(Record::from(e.name, e.value));
    write_container(path, c);
}

template <typename T>
void SeedSession<T>::load(const std::string& path) {
    const Container c = read_container(path);
    if (c.digest != config_digest(config_)) {
        throw CheckpointError(path + ": checkpoint was written under a different configuration");
    }
    TrainingState<T> next = make_state<T>(config_, seed_);
    for (auto& e : next.model.params()) {
        Tensor<T> t = c.get(kParams, e.name).template as<T>();
        if (t.shape() != e.value.shape()) throw CheckpointError("checkpoint shape mismatch for " + e.name);
        e.value = std::move(t);
    }
    for (auto& e : next.loss_weights) {
        Tensor<T> t = c.get(kEta, e.name).template as<T>();
        if (t.shape() != e.value.shape()) throw CheckpointError("checkpoint shape mismatch for " + e.name);
        e.value = std::move(t);
    }
    restore_moments(c, "optim", next.model.params(), next.model_optimizer);
    restore_moments(c, "eta_optim", next.loss_weights, next.eta_optimizer);
    next.epoch = static_cast<std::size_t>(c.get(kOptim, "train.epoch").as<double>().item());
    state_ = std::move(next);
    profile_.clear();
}

template class SeedSession<float>;
template class SeedSession<double>;

RunResult run_experiment(const ExperimentConfig& config, std::shared_ptr<const Splits> data) {
    config.validate();
    if (!data) data = std::make_shared<const Splits>(make_splits(config.dataset));
    return config.precision == "f64" ? run_typed<double>(config, data) : run_typed<float>(config, data);
}

std::vector<RunResult> sweep_lambda(const ExperimentConfig& base, std::span<const double> grid,
                                    const RunObserver& observer) {
    if (grid.empty()) throw std::invalid_argument("sweep_lambda: empty grid");
    base.validate();
    auto data = std::make_shared<const Splits>(make_splits(base.dataset));
    std::vector<RunResult> out;
    for (double lambda : grid) {
        ExperimentConfig c = base;
        c.lambda = lambda;
        out.push_back(run_experiment(c, data));
        if (observer) observer(out.back());
    }
    return out;
}

Comparison compare_structured_unstructured(const ExperimentConfig& config, const RunObserver& observer) {
    config.validate();
    auto data = std::make_shared<const Splits>(make_splits(config.dataset));
    Comparison cmp;
    ExperimentConfig sc = config;
    sc.scheme = GroupScheme::channel_wise;
    sc.lambda = config.compare_lambda_struct;
    cmp.structured = run_experiment(sc, data);
    if (observer) observer(cmp.structured);
    const double target = cmp.structured.param_sparsity_pct;

    ExperimentConfig uc = config;
    uc.scheme = GroupScheme::singleton_l1;
    double lo = std::log10(config.compare_lambda_min), hi = std::log10(config.compare_lambda_max);
    std::optional<RunResult> best;
    for (std::size_t it = 0; it < config.compare_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        uc.lambda = std::pow(10.0, mid);
        RunResult r = run_experiment(uc, data);
        if (observer) observer(r);
        ++cmp.iterations;
        cmp.trace.emplace_back(uc.lambda, r.param_sparsity_pct);
        const double gap = r.param_sparsity_pct - target;
        if (!best || std::abs(gap) < std::abs(best->param_sparsity_pct - target)) best = r;
        if (std::abs(gap) <= config.compare_tolerance) break;
        (gap < 0 ? lo : hi) = mid;
    }
    cmp.unstructured = std::move(*best);
    cmp.matched = std::abs(cmp.unstructured.param_sparsity_pct - target) <= config.compare_tolerance;
    return cmp;
}

template <typename T>
double full_sparsity_lambda(const MultiTaskModel<T>& model, const GroupPartition& partition, double lr) {
    // After one Adam step every coordinate moves by at most lr, and later
    // steps by at most ~7.3 lr; both bounds are covered with margin.
    double worst = 0;
    for (const Group& g : partition.groups) {
        const double ratio = group_norm(model.params().at(g.param).value, g.indices) /
                             (lr * std::sqrt(static_cast<double>(g.size())));
        worst = std::max(worst, ratio);
    }
    return 1.5 * std::max(worst + 1.0, 8.0);
}

template double full_sparsity_lambda(const MultiTaskModel<float>&, const GroupPartition&, double);
template double full_sparsity_lambda(const MultiTaskModel<double>&, const GroupPartition&, double);

void export_dataset(const std::string& path, const Splits& splits, const DatasetConfig& config) {
    Container c;
    c.digest = fnv1a64(std::to_string(config.seed) + "/" + std::to_string(config.samples));
    auto put = [&](const std::string& split, const std::vector<SampleRecord>& rs) {
        for (std::size_t i = 0; i < rs.size(); ++i) {
            const std::string p = split + "." + std::to_string(i) + ".";
            const SampleRecord& r = rs[i];
            Tensor<double> seg({r.height(), r.width()});
            for (std::size_t k = 0; k < r.seg.size(); ++k) seg[k] = r.seg[k];
            c.sections[kParams].push_back(Record::from(p + "image", r.image));
            c.sections[kParams].push_back(Record::from(p + "seg", seg));
            c.sections[kParams].push_back(Record::from(p + "depth", r.depth));
            c.sections[kParams].push_back(Record::from(p + "normals", r.normals));
            c.sections[kParams].push_back(Record::from(
                p + "labels", Tensor<double>({2}, {static_cast<double>(r.labels.at("contains_sphere")),
                                                   static_cast<double>(r.labels.at("bright_scene"))})));
            c.sections[kParams].push_back(
                Record::from(p + "meta", Tensor<double>({3}, {static_cast<double>(r.seed >> 32),
                                                           static_cast<double>(r.seed & 0xffffffffULL),
                                                           r.mean_luminance})));
        }
    };
    put("train", splits.train);
    put("val", splits.val);
    put("test", splits.test);
    write_container(path, c);
}

Splits import_dataset(const std::string& path) {
    const Container c = read_container(path);
    Splits s;
    auto take = [&](const std::string& split, std::vector<SampleRecord>& out) {
        for (std::size_t i = 0;; ++i) {
            const std::string p = split + "." + std::to_string(i) + ".";
            if (!c.find(kParams, p + "image")) break;
            SampleRecord r;
            r.image = c.get(kParams, p + "image").as<double>();
            r.depth = c.get(kParams, p + "depth").as<double>();
            r.normals = c.get(kParams, p + "normals").as<double>();
            const auto seg = c.get(kParams, p + "seg").as<double>();
            for (double v : seg.data()) r.seg.push_back(static_cast<std::int32_t>(v));
            const auto labels = c.get(kParams, p + "labels").as<double>();
            r.labels["contains_sphere"] = static_cast<int>(labels[0]);
            r.labels["bright_scene"] = static_cast<int>(labels[1]);
            const auto meta = c.get(kParams, p + "meta").as<double>();
            r.seed = (static_cast<std::uint64_t>(meta[0]) << 32) | static_cast<std::uint64_t>(meta[1]);
            r.mean_luminance = meta[2];
            out.push_back(std::move(r));
        }
    };
    take("train", s.train);
    take("val", s.val);
    take("test", s.test);
    return s;
}

std::string output_root(const std::string& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* env = std::getenv("SPARSESHARE_OUT"); env && *env) return env;
    return "results";
}

}  // namespace sparseshare
