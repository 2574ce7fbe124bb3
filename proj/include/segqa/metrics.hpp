#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "segqa/volume.hpp"

namespace segqa {

using Mask = Volume3<std::uint8_t>;
extern template class Volume3<std::uint8_t>;

/// 2|A∩B| / (|A|+|B|) over nonzero voxels; 1.0 when both masks are empty.
double dice_binary(const Mask& a, const Mask& b);
double dice_binary(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct OrganDice {
    double dice = 1.0;
    bool absent = false;  // organ missing from both maps; dice reported as 1.0
    bool in_reference = false;  // organ present in the second (reference) map
};

struct DiceReport {
    std::map<std::uint16_t, OrganDice> per_organ;
    double mean_foreground = 1.0;  // mean over every listed organ, absent ones as 1.0

    /// Mean over organs present in at least one map; nullopt-like 1.0 if none.
    double mean_present() const;
    /// Mean over organs present in the reference map; 1.0 if none.
    double mean_reference() const;
};

DiceReport dice_per_organ(const LabelMap& a, const LabelMap& b,
                          std::span<const std::uint16_t> organs);

/// Mean over rater pairs of DiceReport::mean_foreground.
double interrater_mean(std::span<const std::pair<LabelMap, LabelMap>> pairs,
                       std::span<const std::uint16_t> organs);

}  // namespace segqa
