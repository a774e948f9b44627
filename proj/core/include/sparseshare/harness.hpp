#pragma once

// Seeded training runs, lambda sweeps, structured-vs-unstructured
// comparison and checkpoint persistence.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sparseshare/checkpoint.hpp"
#include "sparseshare/compactor.hpp"
#include "sparseshare/config.hpp"
#include "sparseshare/data.hpp"
#include "sparseshare/metrics.hpp"
#include "sparseshare/optim.hpp"

namespace sparseshare {

struct EpochLog {
    std::size_t epoch = 0;
    double combined_loss = 0;
    std::vector<double> task_loss;
    double penalty = 0;
    std::vector<double> eta;
};

struct TimingRow {
    std::string model;  ///< "dense" or "compact"
    double lambda = 0;
    double group_sparsity_pct = 0;
    Shape batch_shape;
    double mean_ms = 0;
    double std_ms = 0;
    double median_ms = 0;
    double speedup_vs_dense = 1;
    std::size_t params = 0;
    std::uint64_t macs = 0;  ///< per image
};

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<MetricRecord> val, test;
    SparsityReport final_sparsity;
    std::vector<SparsityReport> profile;
    std::vector<EpochLog> epochs;
    std::vector<TimingRow> timing;
};

struct MetricSummary {
    std::string task;
    MetricKind kind = MetricKind::mae;
    double val_mean = 0, test_mean = 0;
    std::optional<double> val_std, test_std;  ///< absent with fewer than two successful seeds
};

struct RunResult {
    std::string run_id;
    ExperimentConfig config;
    std::vector<SeedResult> seeds;
    std::vector<MetricSummary> metrics;  ///< config task order
    double group_sparsity_pct = 0;       ///< mean over successful seeds
    double param_sparsity_pct = 0;
    std::size_t seeds_ok = 0;
    double wall_seconds = 0;  ///< excluded from determinism guarantees

    const MetricSummary& metric(std::string_view task) const;
};

/// Recomputes `metrics` and the sparsity means from `seeds`.
void aggregate(RunResult& result);

/// One seed's training state, independent of other seeds.
template <typename T>
class SeedSession {
public:
    SeedSession(const ExperimentConfig& config, std::uint64_t seed, std::shared_ptr<const Splits> data);

    EpochLog run_epoch();
    std::size_t epoch() const noexcept { return state_.epoch; }
    const std::vector<SparsityReport>& profile() const noexcept { return profile_; }
    TrainingState<T>& state() noexcept { return state_; }
    const TrainingState<T>& state() const noexcept { return state_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::vector<MetricRecord> evaluate(std::span<const SampleRecord> split, const std::string& split_name) const;

    /// Parameters, optimizer moments, epoch counter and eta.
    void save(const std::string& path) const;
    /// Throws CheckpointError on a digest or layout mismatch; the session is untouched on failure.
    void load(const std::string& path);

private:
    ExperimentConfig config_;
    std::uint64_t seed_;
    std::shared_ptr<const Splits> data_;
    TrainingState<T> state_;
    std::vector<SparsityReport> profile_;
};

/// Trains every seed; a diverging seed is recorded as failed and the rest continue.
RunResult run_experiment(const ExperimentConfig& config, std::shared_ptr<const Splits> data = nullptr);

using RunObserver = std::function<void(const RunResult&)>;

/// One run per grid value, in grid order, duplicates kept.
std::vector<RunResult> sweep_lambda(const ExperimentConfig& base, std::span<const double> grid,
                                    const RunObserver& observer = {});

struct Comparison {
    RunResult structured;
    RunResult unstructured;
    bool matched = false;  ///< |param sparsity gap| <= tolerance
    std::size_t iterations = 0;
    std::vector<std::pair<double, double>> trace;  ///< (lambda, param_sparsity_pct) per unstructured probe
};

/// channel_wise at compare_lambda_struct, then bisection in log(lambda) for singleton_l1
/// until parameter sparsity matches within compare_tolerance points.
Comparison compare_structured_unstructured(const ExperimentConfig& config, const RunObserver& observer = {});

/// Group norm threshold above which one first prox-Adam step (base_lr) zeroes every group.
template <typename T>
double full_sparsity_lambda(const MultiTaskModel<T>& model, const GroupPartition& partition, double lr);

/// Dataset export/import through the container format.
void export_dataset(const std::string& path, const Splits& splits, const DatasetConfig& config);
Splits import_dataset(const std::string& path);

/// Output root: explicit value, else $SPARSESHARE_OUT, else "results".
std::string output_root(const std::string& explicit_dir);

}  // namespace sparseshare
