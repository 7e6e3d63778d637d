#pragma once

#include "dqmil/data.hpp"
#include "dqmil/loss.hpp"
#include "dqmil/model.hpp"
#include "dqmil/optim.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace dqmil {

struct TrainConfig {
    std::size_t epochs = 30;
    std::uint64_t seed = 7;
    OptimConfig optim;
    LossWeights loss;
    /// Stop after this many epochs without a better validation score; 0 disables.
    std::size_t patience = 0;
    /// Reload the best-validation parameters when training ends.
    bool restore_best = true;
    /// Where train_log.csv, epochs.csv, last.dqml and best.dqml go; unset writes nothing.
    std::optional<std::filesystem::path> out_dir;
    std::size_t eval_workers = 1;
    /// Called after every epoch.
    std::function<void(const struct EpochLog&)> on_epoch;
};

struct StepLog {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    std::string bag_id;
    LossBreakdown loss;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    /// NaN without a validation set (or when AUC is undefined on it).
    double val_auc = 0.0;
    double val_accuracy = 0.0;
    double val_loss = 0.0;
    bool best = false;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
    std::optional<std::size_t> best_epoch;
    std::uint64_t step_count = 0;
};

/// Value-level loss of one finished forward pass.
LossBreakdown loss_from_output(const BagOutput& out, std::size_t label, const LossWeights& weights, Variant variant);

/// One bag per step: forward, loss, backward, RAdam, lookahead. Bag order is
/// reshuffled every epoch from the seed. Throws TrainingAbort on a non-finite
/// loss or gradient, naming the step.
template <typename T>
TrainResult train(DQModel<T>& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& config);

} // namespace dqmil
