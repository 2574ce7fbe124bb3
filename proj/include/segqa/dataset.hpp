#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segqa/ledger.hpp"
#include "segqa/trainer.hpp"
#include "segqa/volume.hpp"

namespace segqa {

/// Network input for one preprocessed study: channel 0 the normalized image,
/// channel 1 the soft-tissue window.
Tensor model_input(const PreprocessedStudy& study);

/// Throws ValidationError when the study has no label.
TrainingSample make_sample(const std::string& study_id, const PreprocessedStudy& study);

struct LoadedStudy {
    std::string study_id;
    VoxelVolume image;
    std::optional<LabelMap> label;
};

LoadedStudy load_study(const CohortManifest& manifest, const ManifestEntry& entry);

/// Loads and preprocesses every entry, in manifest order. Entries without a
/// label are rejected with ValidationError naming the study.
std::vector<TrainingSample> load_samples(const CohortManifest& manifest,
                                         const PreprocessConfig& cfg);

/// Config matching a model's patch size, other settings default.
PreprocessConfig preprocess_for(const UNetConfig& cfg);

}  // namespace segqa
