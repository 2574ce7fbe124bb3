#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segqa/ledger.hpp"
#include "segqa/stats.hpp"
#include "segqa/trainer.hpp"

namespace segqa {

/// One evaluation-only cohort: its manifest plus preprocessed samples.
struct EvalCohort {
    CohortManifest manifest;
    std::vector<TrainingSample> samples;
};

struct RoundOptions {
    TrainOptions train;
    GradeProxy proxy;
    // Organs whose mean Dice drives the proxy grade.
    std::vector<std::uint16_t> grade_organs{organ::kLiver, organ::kGallbladder};
    std::string baseline_version = "baseline";
    std::string optimized_version = "optimized";
    std::string rater_id = "proxy";
    // Also evaluate the retrained model on the cohorts after every epoch.
    bool track_epoch_dice = true;
};

struct ScanComparison {
    std::string cohort_id;
    std::string study_id;
    DiceReport baseline;
    DiceReport optimized;
    Grade baseline_grade = Grade::kExcellent;
    Grade optimized_grade = Grade::kExcellent;
};

/// A statistical test that may be undefined for the data at hand.
struct OptionalTest {
    std::optional<stats::TestResult> result;
    std::string error;  // why result is absent
};

struct CohortComparison {
    std::string cohort_id;
    std::size_t scans = 0;
    QualityBreakdown baseline;
    QualityBreakdown optimized;
    OptionalTest chi_squared;  // failure counts, baseline vs optimized
};

struct ComparisonReport {
    std::size_t base_train_size = 0;
    std::size_t corrected_added = 0;
    std::vector<ScanComparison> scans;
    std::vector<CohortComparison> cohorts;
    OptionalTest dice_t_test;  // paired, per-scan mean foreground Dice
    std::map<std::uint16_t, OptionalTest> organ_t_tests;
    double baseline_mean_dice = 0.0;
    double optimized_mean_dice = 0.0;
    // Mean over retraining epochs of the cohort mean Dice; empty when not tracked.
    std::optional<double> epoch_averaged_dice;
    TrainHistory retrain_history;
};

/// Proxy grade of the model's prediction for one sample: mean Dice over the
/// listed organs that are present in the sample's label.
Grade proxy_grade_sample(const ModelWeights& weights, const TrainingSample& sample,
                         const GradeProxy& proxy, std::span<const std::uint16_t> organs);

/// Throws LeakageError when a training or corrected study is also evaluated.
void check_no_leakage(std::span<const TrainingSample> base_train,
                      std::span<const TrainingSample> corrected,
                      std::span<const EvalCohort> eval_cohorts);

/// Grades the base model on every cohort, transfer-retrains it on
/// base_train + corrected, grades again and compares. Proxy grades for both
/// versions are appended to `ledger`.
ComparisonReport improvement_round(const ModelWeights& base_weights,
                                   std::span<const TrainingSample> base_train,
                                   std::span<const TrainingSample> corrected,
                                   std::span<const EvalCohort> eval_cohorts, QaLedger& ledger,
                                   const RoundOptions& options,
                                   ModelWeights* optimized_out = nullptr);

/// One JSON object per line: a summary, one per cohort, one per scan, one per test.
std::string report_to_ndjson(const ComparisonReport& report);

/// Timestamp for the next append: now, or the last record's time if the clock is behind.
Timestamp next_timestamp(const QaLedger& ledger);

}  // namespace segqa
