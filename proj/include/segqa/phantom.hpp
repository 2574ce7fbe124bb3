#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segqa/ledger.hpp"
#include "segqa/volume.hpp"

namespace segqa {

/// Axis-aligned ellipsoid in fractional volume coordinates.
struct OrganSpec {
    std::uint16_t code = organ::kLiver;
    Vec3 center{0.5, 0.5, 0.5};  // each in (0, 1)
    Vec3 radii{0.25, 0.25, 0.25};
    double mean_hu = 55.0;
    double presence_prob = 1.0;  // organs below 1 may be absent from a study
    Vec3 jitter{};               // per-study uniform center shift bound, per axis
};

struct PhantomParams {
    Shape3 dims{40, 40, 24};
    Vec3 spacing{1.0, 1.0, 2.0};
    double noise_sigma = 20.0;
    double background_hu = -200.0;
    // Organs are painted in order; later organs overwrite earlier ones.
    std::vector<OrganSpec> organs = default_organs();
    bool hard_case = false;
    // Gallbladder mean HU in hard cases; the liver default, so only shape and
    // position separate the two organs.
    double hard_gallbladder_hu = 55.0;
    // Per-study uniform shift of every center, as a fraction of the volume.
    double center_jitter = 0.02;
    // Round HU to integers so studies survive an int16 file unchanged.
    bool integer_hu = true;

    static std::vector<OrganSpec> default_organs();
    void validate() const;
};

struct Phantom {
    VoxelVolume image;
    LabelMap label;
    std::vector<std::uint16_t> present;  // organ codes with at least one voxel
};

/// Deterministic in (seed, params). Throws DegenerateError when an organ with
/// presence_prob == 1 ends up with no voxels after carving.
Phantom generate_phantom(std::uint64_t seed, const PhantomParams& params);

/// Seed of study `index` in a cohort generated from `seed`.
std::uint64_t study_seed(std::uint64_t seed, std::size_t index);

/// Indices of the ceil(hard_fraction * n) hard studies, ascending.
std::vector<std::size_t> choose_hard_cases(std::uint64_t seed, std::size_t n,
                                           double hard_fraction);

/// Writes <out_dir>/<study_id>/image.nii (int16) and label.nii (uint8) for n
/// studies plus <out_dir>/manifest.json, and returns the manifest.
CohortManifest generate_cohort(std::uint64_t seed, std::size_t n, double hard_fraction,
                               const PhantomParams& params, const std::filesystem::path& out_dir,
                               const std::string& cohort_id = "phantom", Role role = Role::kEval);

}  // namespace segqa
