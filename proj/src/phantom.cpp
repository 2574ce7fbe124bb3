#include "segqa/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "segqa/nifti.hpp"
#include "segqa/rng.hpp"

namespace segqa {

std::vector<OrganSpec> PhantomParams::default_organs() {
    return {
        {organ::kLiver, {0.38, 0.46, 0.5}, {0.27, 0.25, 0.36}, 55.0, 1.0},
        {organ::kSpleen, {0.8, 0.56, 0.5}, {0.1, 0.13, 0.22}, 50.0, 1.0},
        // Embedded in the liver near its lower edge.
        {organ::kGallbladder, {0.4, 0.54, 0.48}, {0.165, 0.15, 0.24}, 10.0, 0.47, {0.06, 0.03, 0.08}},
    };
}

void PhantomParams::validate() const {
    if (dims.count() == 0) throw InvalidArgument("phantom dims must be positive, got " + dims.str());
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
        throw InvalidArgument("phantom spacing must be positive");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
    if (!(center_jitter >= 0.0 && center_jitter < 0.5))
        throw InvalidArgument("center_jitter must be in [0, 0.5)");
    for (const auto& o : organs) {
        for (int a = 0; a < 3; ++a) {
            if (!(o.radii[a] > 0.0))
                throw InvalidArgument("organ " + organ::name(o.code) + ": radii must be > 0");
            if (!(o.center[a] > 0.0 && o.center[a] < 1.0))
                throw InvalidArgument("organ " + organ::name(o.code) + ": center outside (0, 1)");
        }
        if (!(o.presence_prob >= 0.0 && o.presence_prob <= 1.0))
            throw InvalidArgument("organ " + organ::name(o.code) + ": presence_prob outside [0, 1]");
        if (!(o.jitter.x >= 0.0 && o.jitter.y >= 0.0 && o.jitter.z >= 0.0))
            throw InvalidArgument("organ " + organ::name(o.code) + ": jitter must be >= 0");
        if (o.code == organ::kBackground)
            throw InvalidArgument("organ code 0 is reserved for background");
    }
}

Phantom generate_phantom(std::uint64_t seed, const PhantomParams& params) {
    params.validate();
    const Shape3 d = params.dims;
    CounterRng shape_rng = CounterRng(seed).derive(1);
    CounterRng noise_rng = CounterRng(seed).derive(2);

    LabelMap label(d, params.spacing, {}, organ::kBackground);
    const Vec3 jitter{(shape_rng.uniform() * 2.0 - 1.0) * params.center_jitter,
                      (shape_rng.uniform() * 2.0 - 1.0) * params.center_jitter,
                      (shape_rng.uniform() * 2.0 - 1.0) * params.center_jitter};

    std::vector<double> organ_hu(65536, params.background_hu);
    std::vector<std::uint16_t> mandatory;
    for (const auto& o : params.organs) {
        // Always draw so the stream does not depend on presence_prob == 1.
        const bool present = shape_rng.uniform() < o.presence_prob;
        if (o.presence_prob >= 1.0) mandatory.push_back(o.code);
        double hu = o.mean_hu;
        if (params.hard_case && o.code == organ::kGallbladder) hu = params.hard_gallbladder_hu;
        organ_hu[o.code] = hu;
        const Vec3 own{(shape_rng.uniform() * 2.0 - 1.0) * o.jitter.x,
                       (shape_rng.uniform() * 2.0 - 1.0) * o.jitter.y,
                       (shape_rng.uniform() * 2.0 - 1.0) * o.jitter.z};
        if (!present) continue;
        const double cx = o.center.x + jitter.x + own.x, cy = o.center.y + jitter.y + own.y,
                     cz = o.center.z + jitter.z + own.z;
        for (std::size_t z = 0; z < d.nz; ++z) {
            const double fz = ((static_cast<double>(z) + 0.5) / d.nz - cz) / o.radii.z;
            for (std::size_t y = 0; y < d.ny; ++y) {
                const double fy = ((static_cast<double>(y) + 0.5) / d.ny - cy) / o.radii.y;
                for (std::size_t x = 0; x < d.nx; ++x) {
                    const double fx = ((static_cast<double>(x) + 0.5) / d.nx - cx) / o.radii.x;
                    if (fx * fx + fy * fy + fz * fz <= 1.0) label.at(x, y, z) = o.code;
                }
            }
        }
    }

    std::vector<std::size_t> counts(65536, 0);
    for (auto v : label.data()) ++counts[v];
    for (auto code : mandatory)
        if (counts[code] == 0)
            throw DegenerateError("phantom organ " + organ::name(code) +
                                  " has no voxels after carving");

    VoxelVolume image(d, params.spacing, {});
    auto src = label.data();
    auto dst = image.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        double v = organ_hu[src[i]];
        if (params.noise_sigma > 0.0) v += params.noise_sigma * noise_rng.normal();
        dst[i] = params.integer_hu ? std::round(v) : v;
    }

    Phantom out{std::move(image), std::move(label), {}};
    for (std::size_t c = 1; c < counts.size(); ++c)
        if (counts[c] > 0) out.present.push_back(static_cast<std::uint16_t>(c));
    return out;
}

std::uint64_t study_seed(std::uint64_t seed, std::size_t index) {
    return CounterRng(seed).derive(1000 + index).seed();
}

std::vector<std::size_t> choose_hard_cases(std::uint64_t seed, std::size_t n,
                                           double hard_fraction) {
    if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0))
        throw InvalidArgument("hard_fraction must be in [0, 1]");
    // The epsilon keeps 0.3 * 60 at 18 instead of 19.
    const auto hard = static_cast<std::size_t>(std::ceil(hard_fraction * n - 1e-9));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng = CounterRng(seed).derive(7);
    shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(hard, n));
    std::sort(order.begin(), order.end());
    return order;
}

CohortManifest generate_cohort(std::uint64_t seed, std::size_t n, double hard_fraction,
                               const PhantomParams& params, const std::filesystem::path& out_dir,
                               const std::string& cohort_id, Role role) {
    params.validate();
    const auto hard = choose_hard_cases(seed, n, hard_fraction);
    CohortManifest manifest{cohort_id, {}, out_dir};
    std::size_t next_hard = 0;
    for (std::size_t i = 0; i < n; ++i) {
        PhantomParams p = params;
        p.hard_case = next_hard < hard.size() && hard[next_hard] == i;
        if (p.hard_case) ++next_hard;
        const Phantom ph = generate_phantom(study_seed(seed, i), p);

        char num[24];
        std::snprintf(num, sizeof num, "_%03zu", i);
        const std::string study = cohort_id + num;
        nifti::save(out_dir / study / "image.nii", ph.image, nifti::Datatype::kInt16);
        nifti::save(out_dir / study / "label.nii", ph.label);
        manifest.entries.push_back(
            {study, study + "/image.nii", study + "/label.nii", role, p.hard_case});
    }
    save_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

}  // namespace segqa
