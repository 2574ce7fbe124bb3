#include "segqa/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace segqa::nifti {

namespace {

template <class T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t pos) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
}

template <class T>
void put_le(std::vector<std::uint8_t>& bytes, std::size_t pos, T value) {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    std::memcpy(bytes.data() + pos, raw.data(), sizeof(T));
}

std::int32_t byteswap32(std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    return static_cast<std::int32_t>((u >> 24) | ((u >> 8) & 0xFF00u) | ((u << 8) & 0xFF0000u) |
                                     (u << 24));
}

bool is_supported(std::int16_t code) {
    return code == static_cast<std::int16_t>(Datatype::kUint8) ||
           code == static_cast<std::int16_t>(Datatype::kInt16) ||
           code == static_cast<std::int16_t>(Datatype::kFloat32);
}

}  // namespace

int bits_per_voxel(Datatype type) {
    switch (type) {
        case Datatype::kUint8: return 8;
        case Datatype::kInt16: return 16;
        case Datatype::kFloat32: return 32;
    }
    throw UnsupportedTypeError("unsupported datatype code " +
                               std::to_string(static_cast<int>(type)));
}

Shape3 HeaderSubset::shape() const {
    return {static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]),
            static_cast<std::size_t>(dim[3])};
}

Vec3 HeaderSubset::spacing() const { return {pixdim[1], pixdim[2], pixdim[3]}; }

HeaderSubset parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < static_cast<std::size_t>(kVoxOffset))
        throw LengthError("truncated header: expected at least " + std::to_string(kVoxOffset) +
                          " bytes, got " + std::to_string(bytes.size()));
    HeaderSubset h;
    h.sizeof_hdr = get_le<std::int32_t>(bytes, offset::kSizeofHdr);
    if (h.sizeof_hdr != kHeaderSize) {
        if (byteswap32(h.sizeof_hdr) == kHeaderSize)
            throw FormatError("big-endian NIfTI files are not supported (sizeof_hdr byte-swapped)");
        throw FormatError("bad sizeof_hdr: " + std::to_string(h.sizeof_hdr) + ", expected 348");
    }
    std::memcpy(h.magic.data(), bytes.data() + offset::kMagic, 4);
    if (h.magic != std::array<char, 4>{'n', '+', '1', '\0'})
        throw FormatError("bad magic: expected \"n+1\\0\" at byte 344");

    for (std::size_t i = 0; i < 8; ++i)
        h.dim[i] = get_le<std::int16_t>(bytes, offset::kDim + 2 * i);
    if (h.dim[0] != 3)
        throw FormatError("unsupported dim[0]=" + std::to_string(h.dim[0]) + ", expected 3");
    for (int i = 1; i <= 3; ++i) {
        if (h.dim[i] < 1)
            throw FormatError("bad dim[" + std::to_string(i) + "]=" + std::to_string(h.dim[i]));
    }

    const auto code = get_le<std::int16_t>(bytes, offset::kDatatype);
    if (!is_supported(code))
        throw UnsupportedTypeError("unsupported datatype code " + std::to_string(code));
    h.datatype = static_cast<Datatype>(code);
    h.bitpix = get_le<std::int16_t>(bytes, offset::kBitpix);
    if (h.bitpix != bits_per_voxel(h.datatype))
        throw FormatError("bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " +
                          std::to_string(code));

    for (std::size_t i = 0; i < 8; ++i)
        h.pixdim[i] = get_le<float>(bytes, offset::kPixdim + 4 * i);
    for (int i = 1; i <= 3; ++i) {
        if (!(h.pixdim[i] > 0.0f) || !std::isfinite(h.pixdim[i]))
            throw FormatError("bad pixdim[" + std::to_string(i) + "]: spacing must be > 0");
    }

    h.vox_offset = get_le<float>(bytes, offset::kVoxOffset);
    if (!(h.vox_offset >= static_cast<float>(kVoxOffset)) ||
        h.vox_offset != std::floor(h.vox_offset))
        throw FormatError("bad vox_offset " + std::to_string(h.vox_offset) +
                          ", expected an integer >= 352");
    h.scl_slope = get_le<float>(bytes, offset::kSclSlope);
    h.scl_inter = get_le<float>(bytes, offset::kSclInter);
    if (!std::isfinite(h.scl_slope) || !std::isfinite(h.scl_inter))
        throw FormatError("non-finite scl_slope/scl_inter");
    return h;
}

namespace {

std::vector<double> decode_payload(std::span<const std::uint8_t> bytes, const HeaderSubset& h) {
    const Shape3 shape = h.shape();
    const std::size_t count = shape.count();
    const std::size_t width = static_cast<std::size_t>(h.bitpix) / 8;
    const auto start = static_cast<std::size_t>(h.vox_offset);
    const std::size_t expected = start + count * width;
    if (bytes.size() < expected)
        throw LengthError("truncated payload: expected " + std::to_string(count * width) +
                          " bytes after vox_offset " + std::to_string(start) + ", got " +
                          std::to_string(bytes.size() > start ? bytes.size() - start : 0));

    const bool scaled = h.scl_slope != 0.0f;
    const double slope = h.scl_slope;
    const double inter = h.scl_inter;
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t pos = start + i * width;
        double raw = 0.0;
        switch (h.datatype) {
            case Datatype::kUint8: raw = bytes[pos]; break;
            case Datatype::kInt16: raw = get_le<std::int16_t>(bytes, pos); break;
            case Datatype::kFloat32: raw = get_le<float>(bytes, pos); break;
        }
        values[i] = scaled ? raw * slope + inter : raw;
        if (!std::isfinite(values[i]))
            throw FormatError("non-finite voxel value at payload index " + std::to_string(i));
    }
    return values;
}

Vec3 read_origin(std::span<const std::uint8_t> bytes) {
    return {get_le<float>(bytes, offset::kQoffset), get_le<float>(bytes, offset::kQoffset + 4),
            get_le<float>(bytes, offset::kQoffset + 8)};
}

LabelMap to_labels(const Shape3& shape, const Vec3& spacing, const Vec3& origin,
                   const std::vector<double>& values) {
    std::vector<std::uint16_t> codes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (v < 0.0 || v > 65535.0 || v != std::floor(v))
            throw RangeError("label value " + std::to_string(v) + " at payload index " +
                             std::to_string(i) + " is not a valid organ code");
        codes[i] = static_cast<std::uint16_t>(v);
    }
    return LabelMap(shape, spacing, origin, std::move(codes));
}

}  // namespace

Image read(std::span<const std::uint8_t> bytes) {
    Image img;
    img.header = parse_header(bytes);
    std::copy(bytes.begin() + offset::kQformCode, bytes.begin() + offset::kOrientationEnd,
              img.orientation.bytes.begin());
    const auto values = decode_payload(bytes, img.header);
    const Shape3 shape = img.header.shape();
    const Vec3 spacing = img.header.spacing();
    const Vec3 origin = read_origin(bytes);
    const bool unscaled = img.header.scl_slope == 0.0f ||
                          (img.header.scl_slope == 1.0f && img.header.scl_inter == 0.0f);
    if (img.header.datatype == Datatype::kUint8 && unscaled)
        img.data = to_labels(shape, spacing, origin, values);
    else
        img.data = VoxelVolume(shape, spacing, origin, values);
    return img;
}

VoxelVolume read_volume(std::span<const std::uint8_t> bytes) {
    const HeaderSubset h = parse_header(bytes);
    return VoxelVolume(h.shape(), h.spacing(), read_origin(bytes), decode_payload(bytes, h));
}

LabelMap read_labels(std::span<const std::uint8_t> bytes) {
    const HeaderSubset h = parse_header(bytes);
    return to_labels(h.shape(), h.spacing(), read_origin(bytes), decode_payload(bytes, h));
}

namespace {

std::vector<std::uint8_t> write_header(const Shape3& shape, const Vec3& spacing, const Vec3& origin,
                                       Datatype type,
                                       const std::optional<Orientation>& orientation) {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
            throw RangeError("dimension " + std::to_string(shape[a]) + " exceeds NIfTI-1 limit");
    }
    const int bits = bits_per_voxel(type);
    std::vector<std::uint8_t> out(kVoxOffset + shape.count() * static_cast<std::size_t>(bits / 8),
                                  0);
    put_le<std::int32_t>(out, offset::kSizeofHdr, kHeaderSize);
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(shape.nx),
                                          static_cast<std::int16_t>(shape.ny),
                                          static_cast<std::int16_t>(shape.nz), 1, 1, 1, 1};
    for (std::size_t i = 0; i < 8; ++i) put_le<std::int16_t>(out, offset::kDim + 2 * i, dim[i]);
    put_le<std::int16_t>(out, offset::kDatatype, static_cast<std::int16_t>(type));
    put_le<std::int16_t>(out, offset::kBitpix, static_cast<std::int16_t>(bits));
    const std::array<float, 8> pixdim{1.0f,
                                      static_cast<float>(spacing.x),
                                      static_cast<float>(spacing.y),
                                      static_cast<float>(spacing.z),
                                      1.0f,
                                      1.0f,
                                      1.0f,
                                      1.0f};
    for (std::size_t i = 0; i < 8; ++i) put_le<float>(out, offset::kPixdim + 4 * i, pixdim[i]);
    put_le<float>(out, offset::kVoxOffset, static_cast<float>(kVoxOffset));
    put_le<float>(out, offset::kSclSlope, 1.0f);
    put_le<float>(out, offset::kSclInter, 0.0f);
    out[offset::kXyztUnits] = 2;  // millimetres
    if (orientation) {
        std::copy(orientation->bytes.begin(), orientation->bytes.end(),
                  out.begin() + offset::kQformCode);
    } else {
        put_le<float>(out, offset::kQoffset, static_cast<float>(origin.x));
        put_le<float>(out, offset::kQoffset + 4, static_cast<float>(origin.y));
        put_le<float>(out, offset::kQoffset + 8, static_cast<float>(origin.z));
    }
    const char magic[4] = {'n', '+', '1', '\0'};
    std::memcpy(out.data() + offset::kMagic, magic, 4);
    return out;
}

template <class T>
void encode_payload(std::vector<std::uint8_t>& out, std::span<const T> values, Datatype type) {
    std::size_t pos = kVoxOffset;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = static_cast<double>(values[i]);
        switch (type) {
            case Datatype::kFloat32:
                put_le<float>(out, pos, static_cast<float>(v));
                pos += 4;
                break;
            case Datatype::kInt16:
                if (v != std::floor(v) || v < -32768.0 || v > 32767.0)
                    throw RangeError("value " + std::to_string(v) + " at index " +
                                     std::to_string(i) + " not representable as int16");
                put_le<std::int16_t>(out, pos, static_cast<std::int16_t>(v));
                pos += 2;
                break;
            case Datatype::kUint8:
                if (v != std::floor(v) || v < 0.0 || v > 255.0)
                    throw RangeError("value " + std::to_string(v) + " at index " +
                                     std::to_string(i) + " not representable as uint8");
                out[pos] = static_cast<std::uint8_t>(v);
                pos += 1;
                break;
        }
    }
}

}  // namespace

std::vector<std::uint8_t> write(const VoxelVolume& vol, Datatype type,
                                const std::optional<Orientation>& orientation) {
    require_finite(vol, "nifti::write");
    auto out = write_header(vol.shape(), vol.spacing(), vol.origin(), type, orientation);
    encode_payload<double>(out, vol.data(), type);
    return out;
}

std::vector<std::uint8_t> write(const LabelMap& labels, Datatype type,
                                const std::optional<Orientation>& orientation) {
    auto out = write_header(labels.shape(), labels.spacing(), labels.origin(), type, orientation);
    encode_payload<std::uint16_t>(out, labels.data(), type);
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

VoxelVolume load_volume(const std::filesystem::path& path) { return read_volume(read_file(path)); }

LabelMap load_labels(const std::filesystem::path& path) { return read_labels(read_file(path)); }

void save(const std::filesystem::path& path, const VoxelVolume& vol, Datatype type) {
    write_file(path, write(vol, type));
}

void save(const std::filesystem::path& path, const LabelMap& labels) {
    write_file(path, write(labels, Datatype::kUint8));
}

}  // namespace segqa::nifti
