#include "segqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "segqa/layers.hpp"
#include "segqa/rng.hpp"

namespace segqa {

std::vector<std::size_t> FoldPlan::complement(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < folds.size(); ++g)
        if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
    std::sort(out.begin(), out.end());
    return out;
}

FoldPlan kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2 || k > n)
        throw InvalidArgument("kfold_split: need 2 <= k <= n, got k=" + std::to_string(k) +
                              ", n=" + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(seed);
    shuffle(order.begin(), order.end(), rng);

    FoldPlan plan{k, seed, std::vector<std::vector<std::size_t>>(k)};
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        plan.folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                             order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(plan.folds[f].begin(), plan.folds[f].end());
        pos += size;
    }
    return plan;
}

bool early_stop_check(std::span<const double> val_dice, double delta, std::size_t patience) {
    if (patience == 0 || val_dice.size() < patience + 1) return false;
    for (std::size_t e = val_dice.size() - patience; e < val_dice.size(); ++e)
        if (!(val_dice[e] - val_dice[e - 1] < delta)) return false;
    return true;
}

std::string to_string(StopReason reason) {
    return reason == StopReason::kEarlyStop ? "early_stop" : "max_epochs";
}

std::vector<std::uint16_t> foreground_organs(std::size_t num_classes) {
    std::vector<std::uint16_t> out;
    for (std::size_t c = 1; c < num_classes; ++c) out.push_back(static_cast<std::uint16_t>(c));
    return out;
}

double mean_dice(const ModelWeights& weights, std::span<const TrainingSample> samples,
                 std::span<const std::uint16_t> organs) {
    if (samples.empty()) throw EmptyInputError("mean_dice: no samples");
    double sum = 0.0;
    for (const auto& s : samples) {
        const LabelMap pred = predict_labels(weights, s.input, s.label.spacing(), s.label.origin());
        sum += dice_per_organ(pred, s.label, organs).mean_foreground;
    }
    return sum / static_cast<double>(samples.size());
}

double gradient_norm(const ModelWeights& gradients) {
    double ss = 0.0;
    for (const auto& p : gradients.params)
        for (const auto v : p.value.data()) ss += static_cast<double>(v) * v;
    return std::sqrt(ss);
}

TrainResult train_model(const ModelWeights& init, std::span<const TrainingSample> train,
                        std::span<const TrainingSample> val, const TrainOptions& options,
                        const Evaluator& evaluator, const EpochObserver& observer) {
    if (train.empty()) throw EmptyInputError("train_model: empty training set");
    if (options.max_epochs < 0) throw InvalidArgument("train_model: max_epochs must be >= 0");
    check_structure(init);

    const auto organs =
        options.organs.empty() ? foreground_organs(init.config.num_classes) : options.organs;
    const auto val_set = val.empty() ? train : val;
    const Evaluator eval = evaluator ? evaluator
                                     : Evaluator([&](const ModelWeights& w,
                                                     std::span<const TrainingSample> s, int) {
                                           return mean_dice(w, s, organs);
                                       });

    // One-hot targets are reused every epoch.
    std::vector<Tensor> targets;
    targets.reserve(train.size());
    for (const auto& s : train) targets.push_back(nn::one_hot(s.label, init.config.num_classes));

    TrainResult result{init, {}};
    if (options.max_epochs == 0) return result;
    result.history.initial_val_dice = eval(init, val_set, 0);
    ModelWeights best = init;
    double best_dice = result.history.initial_val_dice;
    result.history.best_epoch = 0;

    std::vector<double> dice_trace;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const CounterRng base_rng(options.seed);
    for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
        CounterRng rng = base_rng.derive(static_cast<std::uint64_t>(epoch));
        shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t i : order) {
            auto step = backward(result.weights, train[i].input, targets[i]);
            loss_sum += step.loss;
            double lr = options.lr;
            if (options.clip_norm > 0.0) {
                const double g = gradient_norm(step.gradients);
                if (g > options.clip_norm) lr *= options.clip_norm / g;
            }
            result.weights = sgd_step(result.weights, step.gradients, lr);
        }
        const double vd = eval(result.weights, val_set, epoch);
        result.history.epochs.push_back(
            {epoch, loss_sum / static_cast<double>(train.size()), vd});
        dice_trace.push_back(vd);
        if (observer) observer(epoch, result.weights);
        if (options.restore_best && vd > best_dice) {
            best = result.weights;
            best_dice = vd;
            result.history.best_epoch = epoch;
        }
        if (epoch >= options.min_epochs &&
            early_stop_check(dice_trace, options.delta, options.patience)) {
            result.history.stop_reason = StopReason::kEarlyStop;
            break;
        }
    }
    if (options.restore_best) result.weights = std::move(best);
    return result;
}

CrossValidationResult run_cross_validation(std::span<const TrainingSample> dataset, std::size_t k,
                                           std::uint64_t seed,
                                           std::span<const std::uint16_t> organs,
                                           const FoldModelFactory& factory) {
    CrossValidationResult cv;
    cv.plan = kfold_split(dataset.size(), k, seed);
    double pooled = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const auto train_idx = cv.plan.complement(f);
        const Predictor predict = factory(train_idx, f);
        std::vector<HeldOutResult> fold;
        double fold_sum = 0.0;
        for (std::size_t idx : cv.plan.folds[f]) {
            const auto& sample = dataset[idx];
            HeldOutResult r{idx, f, sample.study_id,
                            dice_per_organ(predict(sample), sample.label, organs)};
            fold_sum += r.dice.mean_foreground;
            fold.push_back(std::move(r));
        }
        pooled += fold_sum;
        count += fold.size();
        cv.fold_means.push_back(fold_sum / static_cast<double>(fold.size()));
        cv.folds.push_back(std::move(fold));
    }
    cv.pooled_mean = pooled / static_cast<double>(count);
    return cv;
}

FoldModelFactory unet_fold_factory(ModelWeights init, TrainOptions options,
                                   std::span<const TrainingSample> dataset) {
    return [init = std::move(init), options, dataset](std::span<const std::size_t> train_idx,
                                                      std::size_t fold) -> Predictor {
        std::vector<TrainingSample> train;
        train.reserve(train_idx.size());
        for (auto i : train_idx) train.push_back(dataset[i]);
        TrainOptions fold_opts = options;
        fold_opts.seed = CounterRng(options.seed).derive(fold).seed();
        auto trained = train_model(init, train, {}, fold_opts).weights;
        return [weights = std::move(trained)](const TrainingSample& s) {
            return predict_labels(weights, s.input, s.label.spacing(), s.label.origin());
        };
    };
}

}  // namespace segqa
