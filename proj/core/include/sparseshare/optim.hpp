#pragma once

// Proximal optimizers and the multi-task training epoch.
//
// Gradients cover the differentiable loss only; the group penalty enters
// exclusively through the proximal step on regularized groups.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sparseshare/data.hpp"
#include "sparseshare/loss.hpp"
#include "sparseshare/model.hpp"
#include "sparseshare/sparsity.hpp"

namespace sparseshare {

/// How the Adam step feeds the closed-form prox.
///   base_lr:    threshold alpha * lambda * sqrt(n_g)
///   group_mean: threshold (alpha / mean_g(sqrt(v_hat) + eps)) * lambda * sqrt(n_g)
enum class ProxStep { base_lr, group_mean };

const char* prox_step_name(ProxStep step);
ProxStep parse_prox_step(std::string_view text);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// theta <- theta - alpha * g; regularized groups then take prox with alpha*lambda.
/// Throws std::invalid_argument if a gradient is missing or mis-shaped.
template <typename T>
void step_prox_sgd(ParamRegistry<T>& registry, const GroupPartition* partition, std::span<const Tensor<T>> grads,
                   double alpha, double lambda);

template <typename T>
class ProxSgd {
public:
    ProxSgd(double alpha, double lambda) : alpha_(alpha), lambda_(lambda) {}
    void step(ParamRegistry<T>& registry, const GroupPartition* partition, std::span<const Tensor<T>> grads) {
        step_prox_sgd(registry, partition, grads, alpha_, lambda_);
        ++steps_;
    }
    std::size_t steps() const noexcept { return steps_; }
    double lambda() const noexcept { return lambda_; }
    void restore(std::size_t steps) noexcept { steps_ = steps; }

private:
    double alpha_;
    double lambda_;
    std::size_t steps_ = 0;
};

/// Adam with bias correction followed by a per-group proximal step.
template <typename T>
class ProxAdam {
public:
    ProxAdam(AdamConfig config, double lambda, ProxStep prox_step = ProxStep::base_lr);

    void step(ParamRegistry<T>& registry, const GroupPartition* partition, std::span<const Tensor<T>> grads);

    std::size_t steps() const noexcept { return t_; }
    double lambda() const noexcept { return lambda_; }
    const AdamConfig& config() const noexcept { return config_; }
    ProxStep prox_step() const noexcept { return prox_step_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

    /// Replaces the moment state (checkpoint resume).
    void restore(std::size_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

private:
    AdamConfig config_;
    double lambda_;
    ProxStep prox_step_;
    std::size_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

template <typename T>
using Optimizer = std::variant<ProxAdam<T>, ProxSgd<T>>;

/// Raised when a task loss or the combined loss stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t batch, std::string task);
    std::size_t batch;
    std::string task;
};

template <typename T>
struct TrainingState {
    MultiTaskModel<T> model;
    ParamRegistry<T> loss_weights;  ///< "uncertainty.eta"
    GroupPartition partition;       ///< groups the prox acts on
    GroupPartition channels;        ///< channel-wise groups used for reporting
    Optimizer<T> model_optimizer;
    Optimizer<T> eta_optimizer;     ///< same rule with lambda = 0
    bool freeze_eta = false;
    std::size_t epoch = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_combined_loss = 0;
    std::vector<double> mean_task_loss;
    std::vector<double> batch_losses;
    double penalty = 0;  ///< lambda * sum sqrt(n_g) ||theta_g|| after the epoch, logged only
    std::vector<double> eta;
    SparsityReport sparsity;
};

/// One pass over `batches`: forward every task, combine, backward, step.
template <typename T>
EpochStats train_epoch(TrainingState<T>& state, std::span<const Batch<T>> batches);

template <typename T>
double optimizer_lambda(const Optimizer<T>& opt);

}  // namespace sparseshare
