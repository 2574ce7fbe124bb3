#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segqa/dataset.hpp"
#include "segqa/ledger.hpp"
#include "segqa/phantom.hpp"
#include "segqa/round.hpp"

namespace segqa::app {

namespace fs = std::filesystem;

void save_weights_file(const fs::path& path, const ModelWeights& weights);
ModelWeights load_weights_file(const fs::path& path);

std::string history_to_ndjson(const TrainHistory& history);

struct PhantomGenOptions {
    fs::path out_dir;
    std::string cohort_id = "phantom";
    std::size_t n = 60;
    double hard_fraction = 0.3;
    std::uint64_t seed = 0;
    PhantomParams params;
    // When > 0, also write train.json with the first `train_easy` non-hard
    // studies (role train) and one manifest per eval cohort, dealing the
    // remaining studies round-robin.
    std::size_t train_easy = 0;
    std::vector<std::string> eval_cohorts;
};

struct PhantomGenResult {
    CohortManifest all;
    std::optional<CohortManifest> train;
    std::vector<CohortManifest> eval;
};

PhantomGenResult phantom_gen(const PhantomGenOptions& opt);

/// Writes <out>/<study>/{image,soft,label}.nii for every entry.
void preprocess_cohort(const CohortManifest& manifest, const PreprocessConfig& cfg,
                       const fs::path& out_dir);

struct TrainCommandOptions {
    std::vector<fs::path> train_manifests;
    std::vector<fs::path> val_manifests;
    std::optional<fs::path> init_weights;  // transfer learning source
    UNetConfig model;
    TrainOptions train;
    std::uint64_t init_seed = 0;
    fs::path out_dir;
};

/// Run directory: config.json, history.ndjson, weights.sqw, report.json.
TrainResult train_command(const TrainCommandOptions& opt);

struct CvCommandOptions {
    std::vector<fs::path> manifests;
    std::size_t k = 5;
    std::optional<fs::path> init_weights;
    UNetConfig model;
    TrainOptions train;
    std::uint64_t init_seed = 0;
};

CrossValidationResult cv_command(const CvCommandOptions& opt, std::string* ndjson_out);

/// Predicts every study and writes <data_dir>/predictions/<version>/<study>/label.nii
/// on the study's original grid.
void infer_command(const ModelWeights& weights, const CohortManifest& manifest,
                   const std::string& version, const fs::path& data_dir);

/// Grades each sample with the proxy and appends to the ledger.
std::vector<Grade> proxy_grade(QaLedger& ledger, const ModelWeights& weights,
                               std::span<const TrainingSample> samples, const std::string& version,
                               const GradeProxy& proxy, std::span<const std::uint16_t> organs,
                               const std::string& rater_id = "proxy");

/// Synthetic stand-in for manual correction: copies each failure's ground
/// truth label to the placeholder path the failure manifest names.
CohortManifest materialize_corrections(const CohortManifest& failures,
                                       const CohortManifest& source);

struct RoundCommandOptions {
    fs::path base_weights;
    std::vector<fs::path> train_manifests;
    // Cohort graded under the base model whose failures get corrected.
    std::optional<fs::path> source_manifest;
    // Already-corrected failures; otherwise taken from the source's ground truth.
    std::optional<fs::path> corrected_manifest;
    std::vector<fs::path> eval_manifests;
    fs::path ledger_path;
    fs::path out_dir;
    Shape3 patch{16, 16, 16};
    RoundOptions round;
};

struct RoundCommandResult {
    ComparisonReport report;
    CohortManifest corrected;
    std::string ndjson;
};

RoundCommandResult round_command(const RoundCommandOptions& opt);

/// Failure rates and quality breakdowns per cohort and version, plus a
/// chi-squared comparison for every pair in `compare` (a, b).
std::string report_ndjson(const QaLedger& ledger, std::span<const CohortManifest> cohorts,
                          const std::vector<std::pair<std::string, std::string>>& compare);

/// Per-study Dice of stored predictions against manifest labels, and a paired
/// t-test between two versions when both are given.
std::string dice_report_ndjson(const fs::path& data_dir, std::span<const CohortManifest> cohorts,
                               const std::vector<std::string>& versions);

}  // namespace segqa::app
