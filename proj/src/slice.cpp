#include "segqa/slice.hpp"

#include <cmath>

namespace segqa {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

}  // namespace

std::string to_string(Axis axis) {
    switch (axis) {
        case Axis::kAxial: return "axial";
        case Axis::kCoronal: return "coronal";
        case Axis::kSagittal: return "sagittal";
    }
    return "axial";
}

Axis axis_from_string(const std::string& text) {
    if (text == "axial") return Axis::kAxial;
    if (text == "coronal") return Axis::kCoronal;
    if (text == "sagittal") return Axis::kSagittal;
    throw InvalidArgument("unknown axis '" + text + "', expected axial, coronal or sagittal");
}

std::size_t axis_extent(const Shape3& shape, Axis axis) {
    switch (axis) {
        case Axis::kAxial: return shape.nz;
        case Axis::kCoronal: return shape.ny;
        case Axis::kSagittal: return shape.nx;
    }
    return 0;
}

std::uint8_t quantize_unit(double v) {
    const double q = std::floor(v * 255.0 + 0.5);
    return static_cast<std::uint8_t>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
}

SlicePayload render_slice(const VoxelVolume& vol, const std::optional<LabelMap>& label, Axis axis,
                          std::size_t index, const WindowSpec& spec) {
    spec.validate();
    const Shape3 s = vol.shape();
    const std::size_t extent = axis_extent(s, axis);
    if (index >= extent)
        throw BoundsError(to_string(axis) + " index " + std::to_string(index) +
                          " out of range, extent " + std::to_string(extent));
    if (label && label->shape() != s)
        throw ShapeError("label shape " + label->shape().str() + " does not match volume " +
                         s.str());

    SlicePayload out;
    out.axis = axis;
    out.index = index;
    out.width = axis == Axis::kSagittal ? s.ny : s.nx;
    out.height = axis == Axis::kAxial ? s.ny : s.nz;

    std::vector<std::uint8_t> gray(out.width * out.height);
    std::vector<std::uint16_t> codes(gray.size(), organ::kBackground);
    for (std::size_t v = 0; v < out.height; ++v) {
        for (std::size_t u = 0; u < out.width; ++u) {
            std::size_t x = u, y = v, z = index;
            if (axis == Axis::kCoronal) {
                y = index;
                z = v;
            } else if (axis == Axis::kSagittal) {
                x = index;
                y = u;
                z = v;
            }
            const std::size_t p = v * out.width + u;
            gray[p] = quantize_unit(window_value(vol.at(x, y, z), spec));
            if (label) codes[p] = label->at(x, y, z);
        }
    }
    out.pixels = base64_encode(gray);
    out.overlay = rle_encode(codes);
    return out;
}

std::vector<RleRun> rle_encode(std::span<const std::uint16_t> codes) {
    std::vector<RleRun> runs;
    for (auto c : codes) {
        if (!runs.empty() && runs.back().code == c)
            ++runs.back().run;
        else
            runs.push_back({c, 1});
    }
    return runs;
}

std::vector<std::uint16_t> rle_decode(std::span<const RleRun> runs, std::size_t expected) {
    std::vector<std::uint16_t> out;
    out.reserve(expected);
    for (const auto& r : runs) {
        if (r.run == 0) throw InvalidArgument("RLE run of length 0");
        if (out.size() + r.run > expected)
            throw InvalidArgument("RLE runs exceed " + std::to_string(expected) + " pixels");
        out.insert(out.end(), r.run, r.code);
    }
    if (out.size() != expected)
        throw InvalidArgument("RLE runs cover " + std::to_string(out.size()) + " of " +
                              std::to_string(expected) + " pixels");
    return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += kAlphabet[(n >> 6) & 63];
        out += kAlphabet[n & 63];
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t n = bytes[i] << 16;
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += kAlphabet[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                v[k] = 0;
                ++pad;
                continue;
            }
            if (pad > 0 || (v[k] = b64_value(c)) < 0)
                throw FormatError("invalid base64 character at offset " + std::to_string(i + k));
        }
        const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<std::uint8_t>(n >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
    }
    return out;
}

}  // namespace segqa
