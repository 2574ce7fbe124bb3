#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segqa/volume.hpp"

namespace segqa {

enum class Axis { kAxial, kCoronal, kSagittal };

std::string to_string(Axis axis);
/// Throws InvalidArgument for anything but "axial", "coronal", "sagittal".
Axis axis_from_string(const std::string& text);

/// Slice extent along `axis`: nz for axial, ny for coronal, nx for sagittal.
std::size_t axis_extent(const Shape3& shape, Axis axis);

struct RleRun {
    std::uint16_t code = 0;
    std::uint32_t run = 0;
    bool operator==(const RleRun&) const = default;
};

/// 8-bit grayscale slice with a run-length encoded label overlay.
/// Axial slices are nx wide and ny high, coronal nx by nz, sagittal ny by nz.
struct SlicePayload {
    std::size_t width = 0;
    std::size_t height = 0;
    std::string pixels;  // base64 of width*height bytes, row-major
    std::vector<RleRun> overlay;
    Axis axis = Axis::kAxial;
    std::size_t index = 0;
};

/// Windows, then quantizes with floor(v * 255 + 0.5). Without a label the
/// overlay is one background run. Throws BoundsError for an index past the extent.
SlicePayload render_slice(const VoxelVolume& vol, const std::optional<LabelMap>& label, Axis axis,
                          std::size_t index, const WindowSpec& spec);

std::uint8_t quantize_unit(double v);

std::vector<RleRun> rle_encode(std::span<const std::uint16_t> codes);
/// Throws InvalidArgument when the runs do not sum to `expected`.
std::vector<std::uint16_t> rle_decode(std::span<const RleRun> runs, std::size_t expected);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws FormatError on invalid characters or padding.
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace segqa
