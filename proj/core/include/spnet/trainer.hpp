#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/model.hpp"

namespace spnet {

enum class LossKind { cross_entropy, mse };

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 64;
    double lr = 0.01;
    double lr_decay_factor = 0.1;
    std::vector<std::size_t> lr_decay_epochs;  // 1-based, strictly increasing
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::cross_entropy;
    bool verbose = false;
};

void validate_config(const TrainConfig& cfg);

/// Table-style presets (train phase).
TrainConfig lenet300_train_config();
TrainConfig lenet5_train_config();
/// Fine-tune phases reuse the train settings with their own epoch counts
/// and decay schedules.
TrainConfig lenet300_finetune_config();
TrainConfig lenet5_finetune_config();

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // classification error rate, or MSE for mse loss
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

/// Per-weighted-layer gradient tensors, ordered like weighted_layer_indices.
struct GradSet {
    std::vector<DenseTensor> weights;
    std::vector<DenseTensor> bias;
};

/// Batch loss and its gradients; chunked deterministically (results do not
/// depend on the worker count). Exposed for finite-difference checks.
double compute_gradients(const NetworkModel& model, const Dataset& batch, LossKind loss, GradSet& grads);

/// SGD with momentum and L2 weight decay, seeded shuffles, step LR decay.
/// Throws on divergence (non-finite loss).
NetworkModel train(const NetworkModel& model, const Dataset& train_ds, const Dataset& val_ds,
                   const TrainConfig& cfg, TrainHistory* history = nullptr);

/// Same as train; with frozen_support, exactly-zero parameters stay zero
/// (their gradients are masked), so pruned channels cannot regrow.
NetworkModel finetune(const NetworkModel& model, const Dataset& train_ds, const Dataset& val_ds,
                      const TrainConfig& cfg, bool frozen_support, TrainHistory* history = nullptr);

/// Mean loss over a dataset.
double evaluate_loss(const NetworkModel& model, const Dataset& ds, LossKind loss);
/// Classification error rate (argmax vs label).
double evaluate_error(const NetworkModel& model, const Dataset& ds);

}  // namespace spnet
