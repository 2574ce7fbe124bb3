#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segqa/error.hpp"

namespace segqa {

struct Shape3 {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;

    std::size_t count() const { return nx * ny * nz; }
    std::size_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    bool operator==(const Shape3&) const = default;
    std::string str() const;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
    bool operator==(const Vec3&) const = default;
};

/// Dense 3D grid stored x-fastest, with physical spacing (mm) and origin (mm).
template <class T>
class Volume3 {
public:
    using value_type = T;

    Volume3() = default;
    Volume3(Shape3 shape, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {}, T fill = T{});
    Volume3(Shape3 shape, Vec3 spacing, Vec3 origin, std::vector<T> data);

    const Shape3& shape() const { return shape_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }
    void set_origin(Vec3 origin) { origin_ = origin; }

    std::span<const T> data() const { return data_; }
    std::span<T> data() { return data_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return (z * shape_.ny + y) * shape_.nx + x;
    }
    T& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
    const T& at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

    bool operator==(const Volume3&) const = default;

private:
    Shape3 shape_{};
    Vec3 spacing_{1.0, 1.0, 1.0};
    Vec3 origin_{};
    std::vector<T> data_;
};

/// Real-valued image: HU before normalization, [0, 1] after.
using VoxelVolume = Volume3<double>;
/// Integer organ codes aligned to a VoxelVolume.
using LabelMap = Volume3<std::uint16_t>;

extern template class Volume3<double>;
extern template class Volume3<std::uint16_t>;
extern template class Volume3<std::uint8_t>;

namespace organ {
inline constexpr std::uint16_t kBackground = 0;
inline constexpr std::uint16_t kSpleen = 1;
inline constexpr std::uint16_t kLiver = 2;
inline constexpr std::uint16_t kGallbladder = 3;

std::string name(std::uint16_t code);
}  // namespace organ

/// Throws NonFiniteError naming the first NaN/Inf voxel coordinate.
void require_finite(const VoxelVolume& vol, const char* context);

struct WindowSpec {
    double window = 190.0;  // HU width
    double level = 35.0;    // HU center

    void validate() const;
};

namespace window_presets {
// Default reading of the annotation window: width 190, center 35 HU.
inline constexpr WindowSpec kSoftTissue{190.0, 35.0};
// Literal word-order reading: width 35, center 190 HU.
inline constexpr WindowSpec kLiteral{35.0, 190.0};
}  // namespace window_presets

/// Single-voxel form of apply_window.
inline double window_value(double v, const WindowSpec& spec) {
    const double t = (v - spec.level) / spec.window + 0.5;
    return t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
}

/// out = clamp((v - (level - window/2)) / window, 0, 1).
VoxelVolume apply_window(const VoxelVolume& vol, const WindowSpec& spec);

/// Linear map of [lo, hi] HU onto [0, 1] with clamping.
VoxelVolume normalize_intensity(const VoxelVolume& vol, double lo, double hi);

/// Separable Catmull-Rom resampling with corner-aligned grids: output sample i
/// on an axis of n inputs and m outputs sits at input coordinate i*(n-1)/(m-1).
/// The first and last samples coincide with the input's, so the physical
/// extent (n-1)*spacing is preserved. Out-of-grid kernel taps use linear ghost
/// samples, which keeps the scheme exact on constant and linear fields.
VoxelVolume resample_spline(const VoxelVolume& vol, Shape3 target);

/// Nearest-neighbor resampling on the same grid mapping as resample_spline
/// (round half up), so labels stay aligned with resampled images.
LabelMap resample_labels_nearest(const LabelMap& labels, Shape3 target);

/// Center-aligned crop/pad per axis; padded voxels take `fill`.
template <class T>
Volume3<T> crop_or_pad(const Volume3<T>& vol, Shape3 target, T fill = T{});

struct PreprocessConfig {
    WindowSpec window = window_presets::kSoftTissue;
    double norm_lo = -1024.0;
    double norm_hi = 1024.0;
    Shape3 target{168, 168, 64};
    // Intermediate resampling grid; the target shape when absent.
    std::optional<Shape3> resample_shape;

    Shape3 resample_grid() const { return resample_shape.value_or(target); }
};

struct PreprocessedStudy {
    VoxelVolume image;  // normalized original
    VoxelVolume soft;   // soft-tissue windowed
    std::optional<LabelMap> label;
};

/// Window, normalize + resample, then crop/pad everything to cfg.target.
PreprocessedStudy preprocess_study(const VoxelVolume& image,
                                   const std::optional<LabelMap>& label,
                                   const PreprocessConfig& cfg);

/// Maps a label map in preprocessed space back onto the original grid
/// (inverse crop/pad followed by nearest resampling).
LabelMap restore_labels(const LabelMap& preprocessed, const Shape3& original_shape,
                        const Vec3& original_spacing, const Vec3& original_origin,
                        const PreprocessConfig& cfg);

}  // namespace segqa
