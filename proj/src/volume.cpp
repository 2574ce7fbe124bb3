#include "segqa/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace segqa {

std::string Shape3::str() const {
    std::ostringstream os;
    os << nx << "x" << ny << "x" << nz;
    return os.str();
}

namespace {

void validate_geometry(const Shape3& shape, const Vec3& spacing) {
    if (shape.nx == 0 || shape.ny == 0 || shape.nz == 0)
        throw ShapeError("volume shape must be positive, got " + shape.str());
    for (int a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw InvalidArgument("voxel spacing must be finite and > 0 on axis " +
                                  std::to_string(a));
    }
}

std::string coord_str(const Shape3& s, std::size_t i) {
    std::ostringstream os;
    os << "(" << i % s.nx << "," << (i / s.nx) % s.ny << "," << i / (s.nx * s.ny) << ")";
    return os.str();
}

}  // namespace

template <class T>
Volume3<T>::Volume3(Shape3 shape, Vec3 spacing, Vec3 origin, T fill)
    : shape_(shape), spacing_(spacing), origin_(origin) {
    validate_geometry(shape_, spacing_);
    data_.assign(shape_.count(), fill);
}

template <class T>
Volume3<T>::Volume3(Shape3 shape, Vec3 spacing, Vec3 origin, std::vector<T> data)
    : shape_(shape), spacing_(spacing), origin_(origin), data_(std::move(data)) {
    validate_geometry(shape_, spacing_);
    if (data_.size() != shape_.count())
        throw ShapeError("volume data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
    if constexpr (std::is_floating_point_v<T>) {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i]))
                throw NonFiniteError("non-finite voxel at " + coord_str(shape_, i));
        }
    }
}

template class Volume3<double>;
template class Volume3<std::uint16_t>;
template class Volume3<std::uint8_t>;

std::string organ::name(std::uint16_t code) {
    switch (code) {
        case kBackground: return "background";
        case kSpleen: return "spleen";
        case kLiver: return "liver";
        case kGallbladder: return "gallbladder";
        default: return "organ" + std::to_string(code);
    }
}

void require_finite(const VoxelVolume& vol, const char* context) {
    const auto data = vol.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i]))
            throw NonFiniteError(std::string(context) + ": non-finite voxel at " +
                                 coord_str(vol.shape(), i));
    }
}

void WindowSpec::validate() const {
    if (!(window > 0.0) || !std::isfinite(window) || !std::isfinite(level))
        throw InvalidArgument("invalid window spec: window must be > 0 (got " +
                              std::to_string(window) + ")");
}

VoxelVolume apply_window(const VoxelVolume& vol, const WindowSpec& spec) {
    spec.validate();
    require_finite(vol, "apply_window");
    VoxelVolume out(vol.shape(), vol.spacing(), vol.origin());
    auto src = vol.data();
    auto dst = out.data();
    // (v - level) / window + 0.5 is the same map, and puts v == level at exactly 0.5.
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = window_value(src[i], spec);
    return out;
}

VoxelVolume normalize_intensity(const VoxelVolume& vol, double lo, double hi) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw InvalidArgument("invalid normalization range: lo must be < hi");
    require_finite(vol, "normalize_intensity");
    VoxelVolume out(vol.shape(), vol.spacing(), vol.origin());
    auto src = vol.data();
    auto dst = out.data();
    const double width = hi - lo;
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = std::clamp((src[i] - lo) / width, 0.0, 1.0);
    return out;
}

namespace {

void validate_target(const Shape3& target, std::size_t min_dim, const char* op) {
    for (int a = 0; a < 3; ++a) {
        if (target[a] < min_dim)
            throw InvalidArgument(std::string(op) + ": invalid target shape " + target.str() +
                                  ", every dimension must be >= " + std::to_string(min_dim));
    }
}

struct Tap {
    std::size_t k;  // left sample index
    double t;       // fractional offset in [0, 1)
};

std::vector<Tap> axis_taps(std::size_t n, std::size_t m) {
    std::vector<Tap> taps(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (n == 1) {
            taps[i] = {0, 0.0};
            continue;
        }
        const double p = static_cast<double>(i * (n - 1)) / static_cast<double>(m - 1);
        const auto k = std::min(static_cast<std::size_t>(std::floor(p)), n - 1);
        taps[i] = {k, p - static_cast<double>(k)};
    }
    return taps;
}

// One 1D Catmull-Rom pass along `axis`; `stride` steps along the axis in src.
std::vector<double> resample_axis(const std::vector<double>& src, const Shape3& shape, int axis,
                                  std::size_t m) {
    const std::size_t n = shape[axis];
    Shape3 out_shape = shape;
    (axis == 0 ? out_shape.nx : axis == 1 ? out_shape.ny : out_shape.nz) = m;
    std::vector<double> dst(out_shape.count());

    const std::size_t src_stride = axis == 0 ? 1 : axis == 1 ? shape.nx : shape.nx * shape.ny;
    const std::size_t dst_stride =
        axis == 0 ? 1 : axis == 1 ? out_shape.nx : out_shape.nx * out_shape.ny;
    const auto taps = axis_taps(n, m);

    // Enumerate every line along `axis` by its base offset.
    const std::size_t inner = axis == 0 ? 1 : axis == 1 ? shape.nx : shape.nx * shape.ny;
    const std::size_t outer = shape.count() / (inner * n);
    std::vector<double> line(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t src_base = o * inner * n + in;
            const std::size_t dst_base = o * inner * m + in;
            for (std::size_t j = 0; j < n; ++j) line[j] = src[src_base + j * src_stride];
            auto sample = [&](std::ptrdiff_t j) {
                if (n == 1) return line[0];
                if (j < 0) return 2.0 * line[0] - line[1];
                if (j >= static_cast<std::ptrdiff_t>(n)) return 2.0 * line[n - 1] - line[n - 2];
                return line[static_cast<std::size_t>(j)];
            };
            for (std::size_t i = 0; i < m; ++i) {
                const auto [k, t] = taps[i];
                double v;
                if (t == 0.0) {
                    v = line[k];
                } else {
                    const auto kk = static_cast<std::ptrdiff_t>(k);
                    const double t2 = t * t;
                    const double t3 = t2 * t;
                    const double wm = 0.5 * (-t + 2.0 * t2 - t3);
                    const double w0 = 0.5 * (2.0 - 5.0 * t2 + 3.0 * t3);
                    const double w1 = 0.5 * (t + 4.0 * t2 - 3.0 * t3);
                    const double w2 = 0.5 * (-t2 + t3);
                    v = wm * sample(kk - 1) + w0 * sample(kk) + w1 * sample(kk + 1) +
                        w2 * sample(kk + 2);
                }
                dst[dst_base + i * dst_stride] = v;
            }
        }
    }
    return dst;
}

double rescaled_spacing(double spacing, std::size_t n, std::size_t m) {
    if (n == 1) return spacing * static_cast<double>(n) / static_cast<double>(m);
    return spacing * static_cast<double>(n - 1) / static_cast<double>(m - 1);
}

Vec3 rescaled_spacing(const Vec3& s, const Shape3& from, const Shape3& to) {
    return {rescaled_spacing(s.x, from.nx, to.nx), rescaled_spacing(s.y, from.ny, to.ny),
            rescaled_spacing(s.z, from.nz, to.nz)};
}

}  // namespace

VoxelVolume resample_spline(const VoxelVolume& vol, Shape3 target) {
    validate_target(target, 2, "resample_spline");
    require_finite(vol, "resample_spline");
    std::vector<double> data(vol.data().begin(), vol.data().end());
    Shape3 shape = vol.shape();
    if (shape.nx != target.nx) {
        data = resample_axis(data, shape, 0, target.nx);
        shape.nx = target.nx;
    }
    if (shape.ny != target.ny) {
        data = resample_axis(data, shape, 1, target.ny);
        shape.ny = target.ny;
    }
    if (shape.nz != target.nz) {
        data = resample_axis(data, shape, 2, target.nz);
        shape.nz = target.nz;
    }
    return VoxelVolume(target, rescaled_spacing(vol.spacing(), vol.shape(), target), vol.origin(),
                       std::move(data));
}

LabelMap resample_labels_nearest(const LabelMap& labels, Shape3 target) {
    validate_target(target, 2, "resample_labels_nearest");
    const Shape3& in = labels.shape();
    auto nearest = [](std::size_t n, std::size_t m) {
        std::vector<std::size_t> idx(m);
        for (std::size_t i = 0; i < m; ++i) {
            // round(i*(n-1)/(m-1)) with half rounded up, in exact integer arithmetic
            idx[i] = n == 1 ? 0 : (2 * i * (n - 1) + (m - 1)) / (2 * (m - 1));
        }
        return idx;
    };
    const auto ix = nearest(in.nx, target.nx);
    const auto iy = nearest(in.ny, target.ny);
    const auto iz = nearest(in.nz, target.nz);
    LabelMap out(target, rescaled_spacing(labels.spacing(), in, target), labels.origin());
    for (std::size_t z = 0; z < target.nz; ++z)
        for (std::size_t y = 0; y < target.ny; ++y)
            for (std::size_t x = 0; x < target.nx; ++x)
                out.at(x, y, z) = labels.at(ix[x], iy[y], iz[z]);
    return out;
}

template <class T>
Volume3<T> crop_or_pad(const Volume3<T>& vol, Shape3 target, T fill) {
    validate_target(target, 1, "crop_or_pad");
    const Shape3& in = vol.shape();
    std::size_t src0[3], dst0[3], len[3];
    for (int a = 0; a < 3; ++a) {
        const std::size_t n = in[a];
        const std::size_t m = target[a];
        if (m <= n) {
            src0[a] = (n - m) / 2;
            dst0[a] = 0;
            len[a] = m;
        } else {
            src0[a] = 0;
            dst0[a] = (m - n) / 2;
            len[a] = n;
        }
    }
    const Vec3& sp = vol.spacing();
    auto shift = [&](int a) {
        return (static_cast<double>(src0[a]) - static_cast<double>(dst0[a])) * sp[a];
    };
    const Vec3 origin{vol.origin().x + shift(0), vol.origin().y + shift(1),
                      vol.origin().z + shift(2)};
    Volume3<T> out(target, sp, origin, fill);
    for (std::size_t z = 0; z < len[2]; ++z)
        for (std::size_t y = 0; y < len[1]; ++y) {
            const T* src = &vol.at(src0[0], src0[1] + y, src0[2] + z);
            T* dst = &out.at(dst0[0], dst0[1] + y, dst0[2] + z);
            std::copy(src, src + len[0], dst);
        }
    return out;
}

template VoxelVolume crop_or_pad(const VoxelVolume&, Shape3, double);
template LabelMap crop_or_pad(const LabelMap&, Shape3, std::uint16_t);

namespace {

VoxelVolume clamp_unit(VoxelVolume vol) {
    for (auto& v : vol.data()) v = std::clamp(v, 0.0, 1.0);
    return vol;
}

}  // namespace

PreprocessedStudy preprocess_study(const VoxelVolume& image, const std::optional<LabelMap>& label,
                                   const PreprocessConfig& cfg) {
    require_finite(image, "preprocess_study");
    if (label && label->shape() != image.shape())
        throw ShapeError("label shape " + label->shape().str() + " does not match image shape " +
                         image.shape().str());
    const Shape3 grid = cfg.resample_grid();

    PreprocessedStudy out;
    // Catmull-Rom can overshoot at sharp edges; clamping keeps the [0, 1] range.
    {
        VoxelVolume soft = apply_window(image, cfg.window);
        out.soft = crop_or_pad(clamp_unit(resample_spline(soft, grid)), cfg.target, 0.0);
    }
    {
        VoxelVolume norm = normalize_intensity(image, cfg.norm_lo, cfg.norm_hi);
        out.image = crop_or_pad(clamp_unit(resample_spline(norm, grid)), cfg.target, 0.0);
    }
    if (label) {
        out.label = crop_or_pad(resample_labels_nearest(*label, grid), cfg.target,
                                organ::kBackground);
    }
    return out;
}

LabelMap restore_labels(const LabelMap& preprocessed, const Shape3& original_shape,
                        const Vec3& original_spacing, const Vec3& original_origin,
                        const PreprocessConfig& cfg) {
    if (preprocessed.shape() != cfg.target)
        throw ShapeError("restore_labels: expected shape " + cfg.target.str() + ", got " +
                         preprocessed.shape().str());
    LabelMap grid = crop_or_pad(preprocessed, cfg.resample_grid(), organ::kBackground);
    LabelMap restored = resample_labels_nearest(grid, original_shape);
    return LabelMap(original_shape, original_spacing, original_origin,
                    std::vector<std::uint16_t>(restored.data().begin(), restored.data().end()));
}

}  // namespace segqa
