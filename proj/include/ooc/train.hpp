// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "ooc/dataset.hpp"
#include "ooc/model.hpp"

namespace ooc {

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
    int batch_size = 64;
    double lr_init = 9e-5;
    double lr_max = 5e-4;
    double lr_rescale = 1.0; // 1/sqrt(3) for the single-device recipe
    int cycle_epochs = 4;    // half-cycle length in epochs
    int patience = 5;
    int max_epochs = 30;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;

    void validate() const;
};

struct EpochStats {
    int epoch = 0; // 1-based
    double train_loss = 0;
    double val_loss = 0;
    double val_accuracy = 0;
    double lr_end = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int stopped_epoch = 0;
    int best_epoch = 0;
};

/// Triangular cyclic learning rate: linear ascent from lr_init to lr_max over
/// one half-cycle, then linear descent, repeating. Both bounds are multiplied
/// by lr_rescale.
double cyclic_lr(long long global_step, int steps_per_epoch, const TrainConfig& config);

/// Tracks strict improvements of the best-so-far validation loss; `update`
/// returns true once `patience` consecutive epochs brought no improvement.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    bool update(double val_loss);
    int best_epoch() const { return best_epoch_; } // 1-based
    double best_loss() const { return best_loss_; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int since_best_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

/// Adam with bias correction (or plain SGD), stepping every trainable tensor.
class Optimizer {
public:
    Optimizer(const TrainConfig& config, ModelParams& params);
    void step(ModelParams& params, double lr);

private:
    OptimizerKind kind_;
    double beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

struct TrainResult {
    ModelParams params; // parameters from the best-validation-loss epoch
    TrainHistory history;
};

/// Mini-batch BCE training with per-epoch shuffling, cyclic learning rate and
/// early stopping. The final short batch is kept if it has at least two
/// samples and merged into the previous batch otherwise.
TrainResult train(const Dataset& train_set, const Dataset& val_set,
                  const ModelConfig& model_config, const TrainConfig& train_config);

/// Mean BCE loss and accuracy of eval-mode predictions over a dataset.
struct EvalStats {
    double loss = 0;
    double accuracy = 0;
};
EvalStats evaluate_split(const Dataset& data, const ModelParams& params,
                         const ModelConfig& config);

} // namespace ooc
