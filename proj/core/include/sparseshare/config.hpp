#pragma once

// Experiment configuration: flat `key = value` text, `#` comments,
// comma-separated lists. Every key can be overridden individually.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sparseshare/data.hpp"
#include "sparseshare/optim.hpp"
#include "sparseshare/sparsity.hpp"

namespace sparseshare {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::string experiment = "run";
    std::vector<std::string> tasks{"segmentation", "depth", "normals"};
    GroupScheme scheme = GroupScheme::channel_wise;
    double lambda = 0;
    std::vector<double> lambda_grid{1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
    std::size_t seeds = 5;
    std::uint64_t seed = 0;  ///< first seed; seed i of a run is seed + i
    std::size_t epochs = 40;
    std::size_t batch_size = 8;
    double lr = 1e-4;
    std::string optimizer = "adam";  ///< adam | sgd
    ProxStep prox_step = ProxStep::base_lr;
    bool freeze_eta = false;
    std::string precision = "f32";  ///< f32 | f64
    DatasetConfig dataset{};
    bool benchmark = false;
    std::size_t bench_batch = 8;
    std::size_t bench_warmup = 2;
    std::size_t bench_reps = 5;
    double compare_lambda_struct = 1e-3;
    double compare_lambda_min = 1e-6;
    double compare_lambda_max = 1e-1;
    std::size_t compare_iters = 8;
    double compare_tolerance = 5.0;  ///< percentage points of parameter sparsity
    bool checkpoint = false;
    std::string out = "";

    void validate() const;
    std::vector<TaskSpec> task_specs() const;
};

/// Every recognised key, in canonical order.
const std::vector<std::string>& config_keys();

/// Throws ConfigError naming the key on an unknown key or malformed value.
void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const ExperimentConfig& config, std::string_view key);

/// Throws ConfigError with the line number on malformed input.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

/// One `key = value` line per key in canonical order; parse_config inverts it.
/// `out` is excluded so the digest does not depend on where results land.
std::string canonical_config(const ExperimentConfig& config);
std::uint64_t config_digest(const ExperimentConfig& config);

/// Round-trip exact decimal text for a double.
std::string exact_number(double v);

}  // namespace sparseshare
