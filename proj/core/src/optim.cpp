#include "sparseshare/optim.hpp"

#include <cmath>

#include "sparseshare/autograd.hpp"

namespace sparseshare {

const char* prox_step_name(ProxStep step) { return step == ProxStep::base_lr ? "base_lr" : "group_mean"; }

ProxStep parse_prox_step(std::string_view text) {
    if (text == "base_lr") return ProxStep::base_lr;
    if (text == "group_mean") return ProxStep::group_mean;
    throw std::invalid_argument("unknown prox_step: " + std::string(text));
}

namespace {

template <typename T>
void check_grads(const ParamRegistry<T>& registry, std::span<const Tensor<T>> grads) {
    if (grads.size() != registry.size()) {
        throw std::invalid_argument("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(registry.size()) + " parameters");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].shape() != registry.at(i).value.shape()) {
            throw std::invalid_argument("optimizer: missing or mis-shaped gradient for " + registry.at(i).name);
        }
    }
}

}  // namespace

template <typename T>
void step_prox_sgd(ParamRegistry<T>& registry, const GroupPartition* partition, std::span<const Tensor<T>> grads,
                   double alpha, double lambda) {
    if (!(alpha > 0)) throw std::invalid_argument("step_prox_sgd: alpha must be > 0");
    check_grads(registry, grads);
    const T a = static_cast<T>(alpha);
    for (std::size_t i = 0; i < registry.size(); ++i) {
        auto& theta = registry.at(i).value;
        for (std::size_t j = 0; j < theta.numel(); ++j) theta[j] -= a * grads[i][j];
    }
    if (partition && lambda > 0) prox_all(registry, *partition, alpha * lambda);
}

template <typename T>
ProxAdam<T>::ProxAdam(AdamConfig config, double lambda, ProxStep prox_step)
    : config_(config), lambda_(lambda), prox_step_(prox_step) {
    if (lambda < 0) throw std::invalid_argument("ProxAdam: lambda must be >= 0");
    if (!(config.lr > 0)) throw std::invalid_argument("ProxAdam: learning rate must be > 0");
}

template <typename T>
void ProxAdam<T>::restore(std::size_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
    if (m.size() != v.size()) throw std::invalid_argument("ProxAdam::restore: moment count mismatch");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

template <typename T>
void ProxAdam<T>::step(ParamRegistry<T>& registry, const GroupPartition* partition,
                       std::span<const Tensor<T>> grads) {
    check_grads(registry, grads);
    if (m_.empty()) {
        for (const auto& e : registry) {
            m_.emplace_back(e.value.shape());
            v_.emplace_back(e.value.shape());
        }
    } else if (m_.size() != registry.size()) {
        throw std::invalid_argument("ProxAdam: registry changed size between steps");
    }
    ++t_;
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(config_.lr);
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < registry.size(); ++i) {
        auto& theta = registry.at(i).value;
        auto& m = m_[i];
        auto& v = v_[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < theta.numel(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            const T mh = m[j] / c1;
            const T vh = v[j] / c2;
            theta[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
    if (!partition || lambda_ == 0) return;
    for (const Group& grp : partition->groups) {
        double step = config_.lr;
        if (prox_step_ == ProxStep::group_mean) {
            const auto& v = v_[grp.param];
            double denom = 0;
            grp.indices.for_each([&](std::size_t j) {
                const T vh = v[j] / c2;
                denom += static_cast<double>(std::sqrt(vh) + eps);
            });
            step = config_.lr / (denom / static_cast<double>(grp.size()));
        }
        shrink_group(registry.at(grp.param).value, grp.indices,
                     step * lambda_ * std::sqrt(static_cast<double>(grp.size())));
    }
}

template <typename T>
double optimizer_lambda(const Optimizer<T>& opt) {
    return std::visit([](const auto& o) { return o.lambda(); }, opt);
}

TrainingDiverged::TrainingDiverged(std::size_t batch_index, std::string task_name)
    : std::runtime_error("non-finite loss at batch " + std::to_string(batch_index) + " (task " + task_name + ")"),
      batch(batch_index),
      task(std::move(task_name)) {}

template <typename T>
EpochStats train_epoch(TrainingState<T>& state, std::span<const Batch<T>> batches) {
    if (batches.empty()) throw std::invalid_argument("train_epoch: no batches");
    const auto& model = state.model;
    const std::size_t n_tasks = model.tasks().size();
    EpochStats stats;
    stats.mean_task_loss.assign(n_tasks, 0.0);
    std::size_t seen = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const Batch<T>& batch = batches[bi];
        if (batch.targets.size() != n_tasks) {
            throw std::invalid_argument("train_epoch: batch has " + std::to_string(batch.targets.size()) +
                                        " targets for " + std::to_string(n_tasks) + " tasks");
        }
        Tape<T> tape;
        const std::vector<Var> bound = model.bind(tape, true);
        const Var eta = tape.leaf(state.loss_weights.at(0).value, !state.freeze_eta);
        const Var images = tape.constant(batch.images);
        const Var features = model.forward_shared(tape, bound, images);
        const std::size_t h = batch.images.dim(2), w = batch.images.dim(3);

        std::vector<Var> losses;
        for (std::size_t ti = 0; ti < n_tasks; ++ti) {
            const Var pred = model.forward_task(tape, bound, ti, features, h, w);
            const Var l = loss::task_loss(tape, model.tasks()[ti].kind, pred, batch.targets[ti]);
            const double lv = tape.value(l).item();
            if (!std::isfinite(lv)) throw TrainingDiverged(bi, model.tasks()[ti].name);
            stats.mean_task_loss[ti] += lv * static_cast<double>(batch.size());
            losses.push_back(l);
        }
        const Var combined = loss::combine_uncertainty(tape, std::span<const Var>(losses), eta);
        const double cv = tape.value(combined).item();
        if (!std::isfinite(cv)) throw TrainingDiverged(bi, "combined");
        stats.batch_losses.push_back(cv);
        stats.mean_combined_loss += cv * static_cast<double>(batch.size());
        seen += batch.size();

        tape.backward(combined);
        std::vector<Tensor<T>> grads;
        grads.reserve(bound.size());
        for (const Var& v : bound) grads.push_back(tape.grad(v));
        std::visit([&](auto& opt) { opt.step(state.model.params(), &state.partition, std::span<const Tensor<T>>(grads)); },
                   state.model_optimizer);
        if (!state.freeze_eta) {
            std::vector<Tensor<T>> eg{tape.grad(eta)};
            std::visit([&](auto& opt) { opt.step(state.loss_weights, nullptr, std::span<const Tensor<T>>(eg)); },
                       state.eta_optimizer);
        }
    }

    ++state.epoch;
    stats.epoch = state.epoch;
    stats.mean_combined_loss /= static_cast<double>(seen);
    for (auto& l : stats.mean_task_loss) l /= static_cast<double>(seen);
    stats.penalty = group_penalty(model.params(), state.partition, optimizer_lambda(state.model_optimizer));
    for (T e : state.loss_weights.at(0).value.data()) stats.eta.push_back(static_cast<double>(e));
    stats.sparsity = measure_sparsity(model.params(), state.channels, state.epoch);
    return stats;
}

template void step_prox_sgd(ParamRegistry<float>&, const GroupPartition*, std::span<const Tensor<float>>, double,
                            double);
template void step_prox_sgd(ParamRegistry<double>&, const GroupPartition*, std::span<const Tensor<double>>, double,
                            double);
template class ProxAdam<float>;
template class ProxAdam<double>;
template double optimizer_lambda(const Optimizer<float>&);
template double optimizer_lambda(const Optimizer<double>&);
template EpochStats train_epoch(TrainingState<float>&, std::span<const Batch<float>>);
template EpochStats train_epoch(TrainingState<double>&, std::span<const Batch<double>>);

}  // namespace sparseshare
