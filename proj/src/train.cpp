// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/train.hpp"

#include <cmath>
#include <numeric>

namespace ooc {

void TrainConfig::validate() const {
    if (batch_size < 2) throw Error("train config: batch_size must be >= 2 (batch norm)");
    if (lr_init <= 0 || lr_max < lr_init)
        throw Error("train config: requires 0 < lr_init <= lr_max");
    if (lr_rescale <= 0) throw Error("train config: lr_rescale must be positive");
    if (cycle_epochs < 1) throw Error("train config: cycle_epochs must be >= 1");
    if (patience < 1) throw Error("train config: patience must be >= 1");
    if (max_epochs < 1) throw Error("train config: max_epochs must be >= 1");
}

double cyclic_lr(long long global_step, int steps_per_epoch, const TrainConfig& config) {
    if (steps_per_epoch < 1) throw Error("cyclic_lr: steps_per_epoch must be >= 1");
    double lo = config.lr_init * config.lr_rescale;
    double hi = config.lr_max * config.lr_rescale;
    long long half = static_cast<long long>(config.cycle_epochs) * steps_per_epoch;
    long long pos = global_step % (2 * half);
    if (pos <= half) return lo + (hi - lo) * static_cast<double>(pos) / static_cast<double>(half);
    return hi - (hi - lo) * static_cast<double>(pos - half) / static_cast<double>(half);
}

bool EarlyStopper::update(double val_loss) {
    ++epoch_;
    if (val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch_;
        since_best_ = 0;
        return false;
    }
    ++since_best_;
    return since_best_ >= patience_;
}

Optimizer::Optimizer(const TrainConfig& config, ModelParams& params)
    : kind_(config.optimizer),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps) {
    if (kind_ == OptimizerKind::Adam) {
        params.for_each_param([&](ParamTensor& p) {
            m_.emplace_back(p.value.rows(), p.value.cols());
            v_.emplace_back(p.value.rows(), p.value.cols());
        });
    }
}

void Optimizer::step(ModelParams& params, double lr) {
    if (kind_ == OptimizerKind::Sgd) {
        params.for_each_param(
            [&](ParamTensor& p) { add_scaled(p.value, p.grad, Scalar(-lr)); });
        return;
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    size_t idx = 0;
    params.for_each_param([&](ParamTensor& p) {
        Matrix& m = m_[idx];
        Matrix& v = v_[idx];
        ++idx;
        for (size_t i = 0; i < p.size(); ++i) {
            Scalar g = p.grad.values()[i];
            Scalar& mi = m.values()[i];
            Scalar& vi = v.values()[i];
            mi = Scalar(beta1_) * mi + Scalar(1.0 - beta1_) * g;
            vi = Scalar(beta2_) * vi + Scalar(1.0 - beta2_) * g * g;
            Scalar m_hat = mi / Scalar(bc1);
            Scalar v_hat = vi / Scalar(bc2);
            p.value.values()[i] -= Scalar(lr) * m_hat / (std::sqrt(v_hat) + Scalar(eps_));
        }
    });
}

namespace {

void check_dataset_dims(const Dataset& ds, const ModelConfig& config, const char* which) {
    if (ds.samples.empty()) throw Error(std::string("train: empty ") + which + " split");
    if (ds.manifest.d_v != config.d_v || ds.manifest.d_t != config.d_t ||
        ds.manifest.d_mm != config.d_mm)
        throw Error(std::string("train: ") + which +
                    " split dimensions do not match the model config");
}

/// Partitions n shuffled indices into contiguous batches. A final remainder
/// of one sample is merged into the previous batch.
std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n, int batch_size) {
    std::vector<std::pair<size_t, size_t>> ranges;
    size_t start = 0;
    while (start < n) {
        size_t end = std::min(n, start + static_cast<size_t>(batch_size));
        if (n - end == 1) end = n; // absorb the orphan sample
        ranges.emplace_back(start, end);
        start = end;
    }
    if (!ranges.empty()) {
        auto [s, e] = ranges.front();
        if (e - s < 2) throw Error("train: batch assembly yielded a batch of size 1");
    }
    return ranges;
}

Matrix labels_of(const std::vector<const Sample*>& batch) {
    Matrix y(static_cast<int>(batch.size()), 1);
    for (size_t i = 0; i < batch.size(); ++i) y(static_cast<int>(i), 0) = Scalar(batch[i]->label);
    return y;
}

} // namespace

EvalStats evaluate_split(const Dataset& data, const ModelParams& params,
                         const ModelConfig& config) {
    if (data.samples.empty()) throw Error("evaluate_split: empty dataset");
    std::vector<const Sample*> all;
    all.reserve(data.samples.size());
    for (const Sample& s : data.samples) all.push_back(&s);
    BatchOutput out = forward_batch(all, params, config);
    Matrix y = labels_of(all);
    EvalStats stats;
    stats.loss = ops::bce_loss(out.probs, y);
    int correct = 0;
    for (size_t i = 0; i < all.size(); ++i) {
        bool predicted = out.probs(static_cast<int>(i), 0) >= Scalar(config.threshold);
        if (predicted == (all[i]->label == 1)) ++correct;
    }
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(all.size());
    return stats;
}

TrainResult train(const Dataset& train_set, const Dataset& val_set,
                  const ModelConfig& model_config, const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    check_dataset_dims(train_set, model_config, "train");
    check_dataset_dims(val_set, model_config, "validation");

    size_t n = train_set.samples.size();
    auto ranges = batch_ranges(n, train_config.batch_size);
    int steps_per_epoch = static_cast<int>(ranges.size());

    ModelParams params = ModelParams::init(model_config, train_config.seed);
    Optimizer optimizer(train_config, params);
    EarlyStopper stopper(train_config.patience);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    TrainResult result;
    result.params = params;
    long long global_step = 0;

    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(train_config.seed, "train/shuffle", epoch));
        shuffle(order, shuffle_rng);

        double epoch_loss = 0;
        for (auto [start, end] : ranges) {
            std::vector<const Sample*> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(&train_set.samples[order[i]]);

            double lr = cyclic_lr(global_step, steps_per_epoch, train_config);
            params.zero_grads();
            BatchTrace trace;
            uint64_t step_seed = derive_seed(train_config.seed, "train/step", global_step);
            BatchOutput out =
                forward_batch(batch, params, model_config, Mode::Train, step_seed, &trace);
            Matrix y = labels_of(batch);
            epoch_loss += ops::bce_loss(out.probs, y) * static_cast<double>(batch.size());
            backward_batch(ops::bce_backward(out.probs, y), trace, params, model_config);
            optimizer.step(params, lr);
            ++global_step;
        }

        EvalStats val = evaluate_split(val_set, params, model_config);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(n);
        stats.val_loss = val.loss;
        stats.val_accuracy = val.accuracy;
        stats.lr_end = cyclic_lr(global_step, steps_per_epoch, train_config);
        result.history.epochs.push_back(stats);
        result.history.stopped_epoch = epoch;

        bool improved_to_best = val.loss < stopper.best_loss();
        bool stop = stopper.update(val.loss);
        if (improved_to_best) result.params = params;
        if (stop) break;
    }
    result.history.best_epoch = stopper.best_epoch();
    return result;
}

} // namespace ooc
