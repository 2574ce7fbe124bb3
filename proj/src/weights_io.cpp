#include <bit>
#include <cmath>
#include <cstring>

#include "segqa/unet.hpp"

namespace segqa {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'W', '1'};
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n)
            throw FormatError(std::string("weight file truncated while reading ") + what +
                              " at byte " + std::to_string(pos_));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(std::uint32_t max_len, const char* what) {
        const std::uint32_t n = u32(what);
        if (n > max_len)
            throw FormatError(std::string("weight file: implausible ") + what + " length " +
                              std::to_string(n));
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> save_weights(const ModelWeights& weights) {
    check_structure(weights);
    Writer w;
    w.bytes(kMagic, 4);
    w.str(weights.config.fingerprint());
    w.u32(static_cast<std::uint32_t>(weights.params.size()));
    for (const auto& p : weights.params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : p.value.data()) w.f32(static_cast<float>(v));
    }
    return w.take();
}

ModelWeights load_weights(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("weight file: bad magic, expected \"SQW1\"");
    r.u32("magic");

    ModelWeights weights;
    weights.config = UNetConfig::from_fingerprint(r.str(kMaxNameLength, "fingerprint"));
    weights.config.validate();
    const std::uint32_t count = r.u32("record count");
    const auto layout = parameter_layout(weights.config);
    if (count != layout.size())
        throw FormatError("weight file: " + std::to_string(count) + " records, architecture needs " +
                          std::to_string(layout.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str(kMaxNameLength, "parameter name");
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > kMaxRank)
            throw FormatError("weight file: parameter '" + name + "' has invalid rank " +
                              std::to_string(rank));
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = r.u32("dimension");
            if (d == 0) throw FormatError("weight file: zero dimension in '" + name + "'");
            n *= d;
        }
        if (shape != layout[i].shape || name != layout[i].name)
            throw FormatError("weight file: record " + std::to_string(i) + " ('" + name +
                              "') does not match the architecture");
        r.need(n * 4, "payload");
        std::vector<double> data(n);
        for (auto& v : data) {
            v = r.f32("payload");
            if (!std::isfinite(v))
                throw FormatError("weight file: non-finite value in '" + name + "'");
        }
        weights.params.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    if (!r.done())
        throw FormatError("weight file: " + std::to_string(bytes.size() - r.pos()) +
                          " trailing bytes");
    return weights;
}

}  // namespace segqa
