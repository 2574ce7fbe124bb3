#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "segqa/volume.hpp"

namespace segqa::nifti {

enum class Datatype : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kFloat32 = 16,
};

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kVoxOffset = 352;

// Byte offsets of the fields this module reads or writes.
namespace offset {
inline constexpr std::size_t kSizeofHdr = 0;
inline constexpr std::size_t kDim = 40;
inline constexpr std::size_t kDatatype = 70;
inline constexpr std::size_t kBitpix = 72;
inline constexpr std::size_t kPixdim = 76;
inline constexpr std::size_t kVoxOffset = 108;
inline constexpr std::size_t kSclSlope = 112;
inline constexpr std::size_t kSclInter = 116;
inline constexpr std::size_t kXyztUnits = 123;
inline constexpr std::size_t kQformCode = 252;
inline constexpr std::size_t kQoffset = 268;
inline constexpr std::size_t kOrientationEnd = 328;  // end of srow_z
inline constexpr std::size_t kMagic = 344;
}  // namespace offset

struct HeaderSubset {
    std::int32_t sizeof_hdr = kHeaderSize;
    std::array<std::int16_t, 8> dim{};
    Datatype datatype = Datatype::kFloat32;
    std::int16_t bitpix = 32;
    std::array<float, 8> pixdim{};
    float vox_offset = static_cast<float>(kVoxOffset);
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    std::array<char, 4> magic{'n', '+', '1', '\0'};

    Shape3 shape() const;
    Vec3 spacing() const;
};

/// qform/sform block (bytes 252..327), carried through unchanged.
struct Orientation {
    std::array<std::uint8_t, offset::kOrientationEnd - offset::kQformCode> bytes{};
    bool operator==(const Orientation&) const = default;
};

struct Image {
    HeaderSubset header;
    Orientation orientation;
    // Unscaled uint8 files decode as labels, everything else as a volume.
    std::variant<VoxelVolume, LabelMap> data;
};

int bits_per_voxel(Datatype type);

/// Parses and validates the header; throws FormatError, UnsupportedTypeError
/// or LengthError with the offending field.
HeaderSubset parse_header(std::span<const std::uint8_t> bytes);

Image read(std::span<const std::uint8_t> bytes);
VoxelVolume read_volume(std::span<const std::uint8_t> bytes);
/// Requires every decoded value to be an integer in [0, 65535].
LabelMap read_labels(std::span<const std::uint8_t> bytes);

/// float32 narrows each value; int16/uint8 require integers in range (RangeError).
/// Origin is stored in qoffset unless an orientation block is supplied.
std::vector<std::uint8_t> write(const VoxelVolume& vol, Datatype type,
                                const std::optional<Orientation>& orientation = std::nullopt);
std::vector<std::uint8_t> write(const LabelMap& labels, Datatype type = Datatype::kUint8,
                                const std::optional<Orientation>& orientation = std::nullopt);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

VoxelVolume load_volume(const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const VoxelVolume& vol, Datatype type);
void save(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace segqa::nifti
