#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "segqa/metrics.hpp"
#include "segqa/unet.hpp"

namespace segqa {

/// One preprocessed study ready for the network.
struct TrainingSample {
    std::string study_id;
    Tensor input;    // (in_channels, nz, ny, nx)
    LabelMap label;  // ground truth on the same grid
};

struct FoldPlan {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> folds;

    /// Indices not in fold `f`, ascending.
    std::vector<std::size_t> complement(std::size_t f) const;
};

/// Seeded shuffle then balanced partition: the first n % k folds get ceil(n/k).
FoldPlan kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

/// True iff the last `patience` epoch-over-epoch changes of `val_dice` are all
/// below `delta`. Fewer than patience + 1 values never stop.
bool early_stop_check(std::span<const double> val_dice, double delta = 0.001,
                      std::size_t patience = 4);

enum class StopReason { kMaxEpochs, kEarlyStop };
std::string to_string(StopReason reason);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_dice = 0.0;
};

struct TrainHistory {
    double initial_val_dice = 0.0;
    std::vector<EpochRecord> epochs;
    StopReason stop_reason = StopReason::kMaxEpochs;
    int best_epoch = 0;  // epoch of the returned weights under restore_best
};

struct TrainOptions {
    int max_epochs = 150;
    double lr = 0.01;
    std::uint64_t seed = 0;
    double delta = 0.001;
    std::size_t patience = 4;
    // The stop rule is not consulted before this epoch.
    int min_epochs = 0;
    // Return the weights of the epoch with the highest validation Dice
    // instead of the last epoch's.
    bool restore_best = false;
    // Rescale a step whose gradient L2 norm exceeds this; 0 disables.
    double clip_norm = 0.0;
    // Organs for validation Dice; all foreground classes when empty.
    std::vector<std::uint16_t> organs;
};

/// Validation Dice for `weights` after `epoch` (0 = before training).
using Evaluator =
    std::function<double(const ModelWeights&, std::span<const TrainingSample>, int epoch)>;
using EpochObserver = std::function<void(int epoch, const ModelWeights&)>;

std::vector<std::uint16_t> foreground_organs(std::size_t num_classes);

/// L2 norm over every parameter.
double gradient_norm(const ModelWeights& gradients);

/// Mean over samples of the mean foreground Dice of the model's prediction.
double mean_dice(const ModelWeights& weights, std::span<const TrainingSample> samples,
                 std::span<const std::uint16_t> organs);

struct TrainResult {
    ModelWeights weights;
    TrainHistory history;
};

/// Per-sample SGD over a freshly shuffled order each epoch. Validation Dice
/// is taken on `val`, or on `train` when `val` is empty.
TrainResult train_model(const ModelWeights& init, std::span<const TrainingSample> train,
                        std::span<const TrainingSample> val, const TrainOptions& options,
                        const Evaluator& evaluator = {}, const EpochObserver& observer = {});

using Predictor = std::function<LabelMap(const TrainingSample&)>;
using FoldModelFactory =
    std::function<Predictor(std::span<const std::size_t> train_indices, std::size_t fold)>;

struct HeldOutResult {
    std::size_t index = 0;
    std::size_t fold = 0;
    std::string study_id;
    DiceReport dice;
};

struct CrossValidationResult {
    FoldPlan plan;
    std::vector<std::vector<HeldOutResult>> folds;
    std::vector<double> fold_means;
    double pooled_mean = 0.0;  // over every held-out scan
};

CrossValidationResult run_cross_validation(std::span<const TrainingSample> dataset, std::size_t k,
                                           std::uint64_t seed,
                                           std::span<const std::uint16_t> organs,
                                           const FoldModelFactory& factory);

/// Factory that transfer-trains `init` on each fold's complement.
FoldModelFactory unet_fold_factory(ModelWeights init, TrainOptions options,
                                   std::span<const TrainingSample> dataset);

}  // namespace segqa
