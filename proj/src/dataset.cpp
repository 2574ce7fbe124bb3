#include "segqa/dataset.hpp"

#include <array>

#include "segqa/nifti.hpp"

namespace segqa {

Tensor model_input(const PreprocessedStudy& study) {
    const std::array<const VoxelVolume*, 2> channels{&study.image, &study.soft};
    return stack_channels(channels);
}

TrainingSample make_sample(const std::string& study_id, const PreprocessedStudy& study) {
    if (!study.label) throw ValidationError("study '" + study_id + "' has no label");
    return {study_id, model_input(study), *study.label};
}

LoadedStudy load_study(const CohortManifest& manifest, const ManifestEntry& entry) {
    LoadedStudy s{entry.study_id, nifti::load_volume(manifest.resolve(entry.image)), std::nullopt};
    if (entry.label) s.label = nifti::load_labels(manifest.resolve(*entry.label));
    return s;
}

std::vector<TrainingSample> load_samples(const CohortManifest& manifest,
                                         const PreprocessConfig& cfg) {
    std::vector<TrainingSample> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        if (!e.label)
            throw ValidationError("manifest '" + manifest.cohort_id + "': study '" + e.study_id +
                                  "' has no label");
        const LoadedStudy s = load_study(manifest, e);
        out.push_back(make_sample(e.study_id, preprocess_study(s.image, s.label, cfg)));
    }
    return out;
}

PreprocessConfig preprocess_for(const UNetConfig& cfg) {
    PreprocessConfig p;
    p.target = cfg.patch;
    return p;
}

}  // namespace segqa
