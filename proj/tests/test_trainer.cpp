#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "segqa/error.hpp"
#include "segqa/layers.hpp"
#include "segqa/trainer.hpp"

using namespace segqa;

namespace {

// Straightforward restatement of the rule: look at the last `patience`
// differences and count how many fell short of delta.
bool reference_stop(const std::vector<double>& d, double delta, std::size_t patience) {
    if (d.size() <= patience) return false;
    std::size_t small = 0;
    for (std::size_t i = 0; i < patience; ++i) {
        const std::size_t e = d.size() - 1 - i;
        if (d[e] - d[e - 1] < delta) ++small;
    }
    return small == patience;
}

// 2-class sample: a ball of class 1 with intensity 1 in a background of 0.
TrainingSample ball_sample(std::size_t n, std::size_t channels) {
    LabelMap l({n, n, n});
    Tensor x({channels, n, n, n});
    const double c = (n - 1) / 2.0, r = n / 3.0;
    for (std::size_t z = 0; z < n; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t xx = 0; xx < n; ++xx) {
                const double d2 = (xx - c) * (xx - c) + (y - c) * (y - c) + (z - c) * (z - c);
                if (d2 <= r * r) {
                    l.at(xx, y, z) = 1;
                    for (std::size_t ch = 0; ch < channels; ++ch) x[ch * n * n * n + l.index(xx, y, z)] = 1.0;
                }
            }
    return {"ball", std::move(x), std::move(l)};
}

UNetConfig two_class() {
    UNetConfig c;
    c.num_classes = 2;
    c.patch = {8, 8, 8};
    return c;
}

}  // namespace

TEST_CASE("k-fold plans") {
    const auto p = kfold_split(10, 5, 3);
    std::set<std::size_t> all;
    for (const auto& f : p.folds) {
        CHECK(f.size() == 2);
        all.insert(f.begin(), f.end());
    }
    CHECK(all.size() == 10);
    CHECK(*all.rbegin() == 9);

    const auto q = kfold_split(51, 5, 42);
    std::vector<std::size_t> sizes;
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& f : q.folds) {
        sizes.push_back(f.size());
        seen.insert(f.begin(), f.end());
        total += f.size();
    }
    CHECK(sizes == std::vector<std::size_t>{11, 10, 10, 10, 10});
    CHECK(total == 51);
    CHECK(seen.size() == 51);
    CHECK(q.complement(0).size() == 40);
    CHECK(kfold_split(51, 5, 42).folds == q.folds);
    CHECK(kfold_split(51, 5, 43).folds != q.folds);

    CHECK_THROWS_AS(kfold_split(3, 4, 0), InvalidArgument);
    CHECK_THROWS_AS(kfold_split(10, 1, 0), InvalidArgument);
}

TEST_CASE("k-fold partition property over many n, k") {
    for (std::size_t n = 2; n < 40; ++n)
        for (std::size_t k = 2; k <= std::min<std::size_t>(n, 8); ++k) {
            const auto p = kfold_split(n, k, n * 31 + k);
            std::vector<int> hits(n, 0);
            std::size_t lo = n, hi = 0;
            for (const auto& f : p.folds) {
                for (auto i : f) ++hits[i];
                lo = std::min(lo, f.size());
                hi = std::max(hi, f.size());
            }
            CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
            CHECK(hi - lo <= 1);
        }
}

TEST_CASE("early stop hand sequences") {
    const std::vector<double> seq{0.50, 0.60, 0.70, 0.7002, 0.7003, 0.7004, 0.7005};
    for (std::size_t e = 1; e < seq.size(); ++e)
        CHECK_FALSE(early_stop_check(std::span(seq).first(e), 0.001, 4));
    CHECK(early_stop_check(seq, 0.001, 4));

    std::vector<double> rising;
    for (int i = 0; i < 30; ++i) {
        rising.push_back(0.1 + 0.01 * i);
        CHECK_FALSE(early_stop_check(rising, 0.001, 4));
    }
    const std::vector<double> broken{0.5, 0.5001, 0.5002, 0.5003, 0.5103};
    CHECK_FALSE(early_stop_check(broken, 0.001, 4));
    const std::vector<double> shortseq{0.5, 0.5, 0.5, 0.5};
    CHECK_FALSE(early_stop_check(shortseq, 0.001, 4));
}

TEST_CASE("early stop matches a reference on random sequences") {
    std::mt19937_64 gen(99);
    std::uniform_int_distribution<int> len(0, 15);
    std::uniform_real_distribution<double> step(-0.002, 0.004);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> d;
        double v = 0.5;
        const int n = len(gen);
        for (int i = 0; i < n; ++i) d.push_back(v += step(gen));
        CHECK(early_stop_check(d, 0.001, 4) == reference_stop(d, 0.001, 4));
    }
}

TEST_CASE("train_model with zero epochs returns the initial weights") {
    const auto c = two_class();
    const auto w = init_weights(c, 1);
    const std::vector<TrainingSample> train{ball_sample(8, 2)};
    TrainOptions o;
    o.max_epochs = 0;
    const auto r = train_model(w, train, {}, o);
    CHECK(r.weights.params == w.params);
    CHECK(r.history.epochs.empty());
    CHECK_THROWS_AS(train_model(w, std::vector<TrainingSample>{}, {}, TrainOptions{}), EmptyInputError);
}

TEST_CASE("a stub evaluator triggers the early stop at epoch 7") {
    const auto c = two_class();
    const std::vector<TrainingSample> train{ball_sample(8, 2)};
    const std::vector<double> seq{0.50, 0.60, 0.70, 0.7002, 0.7003, 0.7004, 0.7005, 0.8, 0.9};
    Evaluator stub = [&](const ModelWeights&, std::span<const TrainingSample>, int epoch) {
        return epoch == 0 ? 0.0 : seq.at(static_cast<std::size_t>(epoch - 1));
    };
    TrainOptions o;
    o.max_epochs = 9;
    o.lr = 0.01;
    const auto r = train_model(init_weights(c, 2), train, {}, o, stub);
    CHECK(r.history.stop_reason == StopReason::kEarlyStop);
    REQUIRE(r.history.epochs.size() == 7);
    CHECK(r.history.epochs.back().epoch == 7);
    for (std::size_t i = 0; i < 7; ++i) CHECK(r.history.epochs[i].epoch == static_cast<int>(i + 1));
}

TEST_CASE("min_epochs defers the stop rule and restore_best returns the peak") {
    const auto c = two_class();
    const std::vector<TrainingSample> train{ball_sample(8, 2)};
    const std::vector<double> seq{0.50, 0.60, 0.70, 0.7002, 0.7003, 0.7004, 0.7005, 0.8, 0.9};
    Evaluator stub = [&](const ModelWeights&, std::span<const TrainingSample>, int epoch) {
        return epoch == 0 ? 0.0 : seq.at(static_cast<std::size_t>(epoch - 1));
    };
    TrainOptions o;
    o.max_epochs = 9;
    o.lr = 0.01;
    o.min_epochs = 8;
    auto r = train_model(init_weights(c, 2), train, {}, o, stub);
    CHECK(r.history.stop_reason == StopReason::kMaxEpochs);
    CHECK(r.history.epochs.size() == 9);

    // peak at epoch 3, then a collapse
    const std::vector<double> peaked{0.4, 0.6, 0.9, 0.1, 0.1, 0.2};
    Evaluator stub2 = [&](const ModelWeights&, std::span<const TrainingSample>, int epoch) {
        return epoch == 0 ? 0.0 : peaked.at(static_cast<std::size_t>(epoch - 1));
    };
    std::vector<ModelWeights> seen;
    EpochObserver keep = [&](int, const ModelWeights& w) { seen.push_back(w); };
    o.max_epochs = 6;
    o.min_epochs = 0;
    o.patience = 100;
    o.restore_best = true;
    r = train_model(init_weights(c, 2), train, {}, o, stub2, keep);
    REQUIRE(seen.size() == 6);
    CHECK(r.history.best_epoch == 3);
    CHECK(r.weights.params == seen[2].params);
    CHECK(r.weights.params != seen[5].params);

    // nothing beats the initial weights
    Evaluator worse = [](const ModelWeights&, std::span<const TrainingSample>, int epoch) {
        return epoch == 0 ? 1.0 : 0.5;
    };
    const auto w = init_weights(c, 3);
    r = train_model(w, train, {}, o, worse);
    CHECK(r.history.best_epoch == 0);
    CHECK(r.weights.params == w.params);
}

TEST_CASE("a clipped step is a plain step with the gradient rescaled to the clip norm") {
    const auto c = two_class();
    const std::vector<TrainingSample> train{ball_sample(8, 2)};
    const auto w = init_weights(c, 4);
    const auto step = backward(w, train[0].input, nn::one_hot(train[0].label, 2));
    const double g = gradient_norm(step.gradients);
    REQUIRE(g > 0.0);
    TrainOptions o;
    o.max_epochs = 1;
    o.lr = 0.1;
    o.patience = 100;
    o.clip_norm = g / 4.0;
    const auto r = train_model(w, train, {}, o);
    const auto want = sgd_step(w, step.gradients, 0.1 / 4.0);
    for (std::size_t i = 0; i < want.params.size(); ++i) {
        const auto a = r.weights.params[i].value.data();
        const auto b = want.params[i].value.data();
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-6));
    }
    // a generous clip leaves the step alone
    o.clip_norm = 2.0 * g;
    CHECK(train_model(w, train, {}, o).weights.params == sgd_step(w, step.gradients, 0.1).params);
}

TEST_CASE("smoke convergence on a separable 2-class phantom") {
    const auto c = two_class();
    const std::vector<TrainingSample> train{ball_sample(8, 2)};
    TrainOptions o;
    o.max_epochs = 200;  // one sample, so one SGD step per epoch
    o.lr = 0.1;
    o.patience = 1000;
    const auto r = train_model(init_weights(c, 5), train, {}, o);
    REQUIRE(r.history.epochs.size() == 200);
    const Tensor target = nn::one_hot(train[0].label, 2);
    const double final_loss = model_loss(r.weights, train[0].input, target);
    CHECK(final_loss < 0.1);
    CHECK(r.history.epochs.back().val_dice > r.history.initial_val_dice);

    const auto again = train_model(init_weights(c, 5), train, {}, o);
    CHECK(again.weights.params == r.weights.params);
}

TEST_CASE("lr 0 retraining reproduces the baseline predictions") {
    const auto c = two_class();
    const std::vector<TrainingSample> train{ball_sample(8, 2)};
    const auto w = init_weights(c, 6);
    TrainOptions o;
    o.max_epochs = 3;
    o.lr = 0.0;
    const auto r = train_model(w, train, {}, o);
    CHECK(r.weights.params == w.params);
    CHECK(predict_labels(r.weights, train[0].input) == predict_labels(w, train[0].input));
}

TEST_CASE("cross validation with an oracle model") {
    std::vector<TrainingSample> data;
    for (int i = 0; i < 51; ++i) {
        auto s = ball_sample(8, 2);
        s.study_id = "s" + std::to_string(i);
        data.push_back(std::move(s));
    }
    FoldModelFactory oracle = [](std::span<const std::size_t> train, std::size_t) -> Predictor {
        CHECK(train.size() >= 40);
        return [](const TrainingSample& s) { return s.label; };
    };
    const std::uint16_t organs[] = {1};
    const auto cv = run_cross_validation(data, 5, 7, organs, oracle);
    std::size_t held = 0;
    std::set<std::string> ids;
    for (const auto& f : cv.folds)
        for (const auto& h : f) {
            ++held;
            ids.insert(h.study_id);
            CHECK(h.dice.mean_foreground == 1.0);
        }
    CHECK(held == 51);
    CHECK(ids.size() == 51);
    for (double m : cv.fold_means) CHECK(m == 1.0);
    CHECK(cv.pooled_mean == 1.0);
}

TEST_CASE("cross validation of a real model is reproducible") {
    std::vector<TrainingSample> data;
    for (int i = 0; i < 4; ++i) data.push_back(ball_sample(8, 2));
    const auto c = two_class();
    TrainOptions o;
    o.max_epochs = 2;
    o.lr = 0.05;
    const std::uint16_t organs[] = {1};
    const auto a = run_cross_validation(data, 2, 3, organs, unet_fold_factory(init_weights(c, 1), o, data));
    const auto b = run_cross_validation(data, 2, 3, organs, unet_fold_factory(init_weights(c, 1), o, data));
    CHECK(a.pooled_mean == b.pooled_mean);
    CHECK(a.fold_means == b.fold_means);
}
