#include "segqa/metrics.hpp"

namespace segqa {

template class Volume3<std::uint8_t>;

namespace {

double dice_from_counts(std::size_t a, std::size_t b, std::size_t both) {
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace

double dice_binary(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size())
        throw ShapeError("dice_binary: mask sizes differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool in_a = a[i] != 0;
        const bool in_b = b[i] != 0;
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    return dice_from_counts(na, nb, both);
}

double dice_binary(const Mask& a, const Mask& b) {
    if (a.shape() != b.shape())
        throw ShapeError("dice_binary: shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    return dice_binary(a.data(), b.data());
}

double DiceReport::mean_present() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [code, d] : per_organ) {
        if (d.absent) continue;
        sum += d.dice;
        ++n;
    }
    return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

double DiceReport::mean_reference() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [code, d] : per_organ) {
        if (!d.in_reference) continue;
        sum += d.dice;
        ++n;
    }
    return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

DiceReport dice_per_organ(const LabelMap& a, const LabelMap& b,
                          std::span<const std::uint16_t> organs) {
    if (a.shape() != b.shape())
        throw ShapeError("dice_per_organ: shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    // One pass: counts per organ code.
    std::map<std::uint16_t, std::size_t> count_a, count_b, count_both;
    for (auto code : organs) count_a[code] = count_b[code] = count_both[code] = 0;
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        if (auto it = count_a.find(da[i]); it != count_a.end()) {
            ++it->second;
            if (da[i] == db[i]) ++count_both[da[i]];
        }
        if (auto it = count_b.find(db[i]); it != count_b.end()) ++it->second;
    }

    DiceReport report;
    double sum = 0.0;
    for (auto code : organs) {
        const std::size_t na = count_a[code];
        const std::size_t nb = count_b[code];
        report.per_organ[code] = {dice_from_counts(na, nb, count_both[code]), na + nb == 0, nb > 0};
    }
    for (const auto& [code, d] : report.per_organ) sum += d.dice;
    report.mean_foreground =
        report.per_organ.empty() ? 1.0 : sum / static_cast<double>(report.per_organ.size());
    return report;
}

double interrater_mean(std::span<const std::pair<LabelMap, LabelMap>> pairs,
                       std::span<const std::uint16_t> organs) {
    if (pairs.empty()) throw EmptyInputError("interrater_mean: no label pairs");
    double sum = 0.0;
    for (const auto& [first, second] : pairs)
        sum += dice_per_organ(first, second, organs).mean_foreground;
    return sum / static_cast<double>(pairs.size());
}

}  // namespace segqa
