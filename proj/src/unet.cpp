#include "segqa/unet.hpp"

#include <cmath>
#include <sstream>

#include "segqa/layers.hpp"
#include "segqa/rng.hpp"

namespace segqa {

void UNetConfig::validate() const {
    if (in_channels < 1) throw InvalidArgument("UNetConfig: in_channels must be >= 1");
    if (num_classes < 2) throw InvalidArgument("UNetConfig: num_classes must be >= 2");
    if (depth < 1) throw InvalidArgument("UNetConfig: depth must be >= 1");
    if (base_channels < 1) throw InvalidArgument("UNetConfig: base_channels must be >= 1");
    if (kernel % 2 == 0) throw InvalidArgument("UNetConfig: kernel must be odd");
    const std::size_t f = std::size_t{1} << depth;
    const char* axes = "xyz";
    for (int a = 0; a < 3; ++a)
        if (patch[a] == 0 || patch[a] % f != 0)
            throw ShapeError(std::string("UNetConfig: patch axis ") + axes[a] + " (" +
                             std::to_string(patch[a]) + ") not divisible by " + std::to_string(f));
}

std::string UNetConfig::fingerprint() const {
    std::ostringstream os;
    os << "unet3d;in=" << in_channels << ";classes=" << num_classes << ";depth=" << depth
       << ";base=" << base_channels << ";kernel=" << kernel;
    return os.str();
}

UNetConfig UNetConfig::from_fingerprint(const std::string& fingerprint) {
    UNetConfig cfg;
    std::istringstream is(fingerprint);
    std::string field;
    std::getline(is, field, ';');
    if (field != "unet3d") throw FormatError("unknown model fingerprint '" + fingerprint + "'");
    int seen = 0;
    while (std::getline(is, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw FormatError("malformed fingerprint field '" + field + "'");
        const std::string key = field.substr(0, eq);
        std::size_t value = 0;
        try {
            value = std::stoul(field.substr(eq + 1));
        } catch (const std::exception&) {
            throw FormatError("malformed fingerprint value in '" + field + "'");
        }
        if (key == "in") cfg.in_channels = value;
        else if (key == "classes") cfg.num_classes = value;
        else if (key == "depth") cfg.depth = value;
        else if (key == "base") cfg.base_channels = value;
        else if (key == "kernel") cfg.kernel = value;
        else throw FormatError("unknown fingerprint key '" + key + "'");
        ++seen;
    }
    if (seen != 5) throw FormatError("incomplete model fingerprint '" + fingerprint + "'");
    return cfg;
}

const Tensor& ModelWeights::get(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.value;
    throw StructureError("no parameter named '" + name + "'");
}

Tensor& ModelWeights::get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

ModelWeights ModelWeights::zeros_like() const {
    ModelWeights z{config, {}};
    z.params.reserve(params.size());
    for (const auto& p : params) z.params.push_back({p.name, Tensor(p.value.shape())});
    return z;
}

namespace {

std::size_t level_channels(const UNetConfig& cfg, std::size_t level) {
    return cfg.base_channels << level;
}

void add_conv(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in,
              std::size_t outc, std::size_t k) {
    out.push_back({prefix + ".weight", {outc, in, k, k, k}});
    out.push_back({prefix + ".bias", {outc}});
}

std::string enc(std::size_t l) { return "enc" + std::to_string(l); }
std::string dec(std::size_t l) { return "dec" + std::to_string(l); }

}  // namespace

std::vector<ParamSpec> parameter_layout(const UNetConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> out;
    const std::size_t k = cfg.kernel;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::size_t in = l == 0 ? cfg.in_channels : level_channels(cfg, l - 1);
        add_conv(out, enc(l) + ".conv1", in, level_channels(cfg, l), k);
        add_conv(out, enc(l) + ".conv2", level_channels(cfg, l), level_channels(cfg, l), k);
    }
    const std::size_t bott = level_channels(cfg, cfg.depth);
    add_conv(out, "bottleneck.conv1", level_channels(cfg, cfg.depth - 1), bott, k);
    add_conv(out, "bottleneck.conv2", bott, bott, k);
    for (std::size_t l = cfg.depth; l-- > 0;) {
        const std::size_t in = level_channels(cfg, l + 1) + level_channels(cfg, l);
        add_conv(out, dec(l) + ".conv1", in, level_channels(cfg, l), k);
        add_conv(out, dec(l) + ".conv2", level_channels(cfg, l), level_channels(cfg, l), k);
    }
    add_conv(out, "head", cfg.base_channels, cfg.num_classes, 1);
    return out;
}

ModelWeights init_weights(const UNetConfig& cfg, std::uint64_t seed) {
    ModelWeights w{cfg, {}};
    CounterRng rng(seed);
    for (const auto& spec : parameter_layout(cfg)) {
        Tensor t(spec.shape);
        if (spec.shape.size() == 5) {
            const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] *
                                                      spec.shape[3] * spec.shape[4]);
            const double sd = std::sqrt(2.0 / fan_in);
            for (auto& v : t.data()) v = static_cast<float>(sd * rng.normal());
        }
        w.params.push_back({spec.name, std::move(t)});
    }
    return w;
}

void check_structure(const ModelWeights& weights) {
    const auto layout = parameter_layout(weights.config);
    if (layout.size() != weights.params.size())
        throw StructureError("expected " + std::to_string(layout.size()) + " parameters, found " +
                             std::to_string(weights.params.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& p = weights.params[i];
        if (p.name != layout[i].name)
            throw StructureError("parameter " + std::to_string(i) + " is '" + p.name +
                                 "', expected '" + layout[i].name + "'");
        if (p.value.shape() != layout[i].shape)
            throw StructureError("parameter '" + p.name + "' has shape " + p.value.shape_str());
    }
}

void check_same_structure(const ModelWeights& a, const ModelWeights& b) {
    if (a.params.size() != b.params.size())
        throw StructureError("parameter count mismatch: " + std::to_string(a.params.size()) +
                             " vs " + std::to_string(b.params.size()));
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i].name != b.params[i].name)
            throw StructureError("parameter name mismatch: '" + a.params[i].name + "' vs '" +
                                 b.params[i].name + "'");
        if (a.params[i].value.shape() != b.params[i].value.shape())
            throw StructureError("parameter '" + a.params[i].name + "' shape mismatch: " +
                                 a.params[i].value.shape_str() + " vs " +
                                 b.params[i].value.shape_str());
    }
}

namespace {

struct BlockTrace {
    Tensor input;
    Tensor hidden;  // relu(conv1(input))
    Tensor output;  // relu(conv2(hidden))
};

struct Trace {
    std::vector<BlockTrace> encoder;  // index = level
    std::vector<nn::PoolResult> pools;
    BlockTrace bottleneck;
    std::vector<BlockTrace> decoder;  // index = level
    std::vector<std::size_t> upsampled_channels;
    Tensor head_input;
    Tensor logits;
};

BlockTrace block_forward(const ModelWeights& w, const std::string& prefix, Tensor x) {
    BlockTrace b;
    b.input = std::move(x);
    b.hidden = nn::relu_forward(nn::conv3d_forward(b.input, w.get(prefix + ".conv1.weight"),
                                                   w.get(prefix + ".conv1.bias")));
    b.output = nn::relu_forward(nn::conv3d_forward(b.hidden, w.get(prefix + ".conv2.weight"),
                                                   w.get(prefix + ".conv2.bias")));
    return b;
}

Tensor block_backward(const ModelWeights& w, const std::string& prefix, const BlockTrace& b,
                      const Tensor& grad_out, ModelWeights& grads) {
    Tensor g = nn::relu_backward(b.output, grad_out);
    g = nn::conv3d_backward(b.hidden, w.get(prefix + ".conv2.weight"), g,
                            grads.get(prefix + ".conv2.weight"), grads.get(prefix + ".conv2.bias"));
    g = nn::relu_backward(b.hidden, g);
    return nn::conv3d_backward(b.input, w.get(prefix + ".conv1.weight"), g,
                               grads.get(prefix + ".conv1.weight"),
                               grads.get(prefix + ".conv1.bias"));
}

void check_input(const UNetConfig& cfg, const Tensor& x) {
    if (x.rank() != 4)
        throw ShapeError("unet input must be (C, nz, ny, nx), got " + x.shape_str());
    if (channels(x) != cfg.in_channels)
        throw ShapeError("unet input has " + std::to_string(channels(x)) + " channels, expected " +
                         std::to_string(cfg.in_channels));
    const Shape3 s = spatial_shape(x);
    const std::size_t f = std::size_t{1} << cfg.depth;
    const char* axes = "xyz";
    for (int a = 0; a < 3; ++a)
        if (s[a] % f != 0)
            throw ShapeError(std::string("unet input axis ") + axes[a] + " (" +
                             std::to_string(s[a]) + ") not divisible by " + std::to_string(f));
}

Trace forward_trace(const ModelWeights& w, const Tensor& x) {
    const UNetConfig& cfg = w.config;
    check_input(cfg, x);
    Trace t;
    Tensor cur = x;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        t.encoder.push_back(block_forward(w, enc(l), std::move(cur)));
        t.pools.push_back(nn::maxpool2_forward(t.encoder.back().output));
        cur = t.pools.back().output;
    }
    t.bottleneck = block_forward(w, "bottleneck", std::move(cur));
    cur = t.bottleneck.output;
    t.decoder.resize(cfg.depth);
    t.upsampled_channels.resize(cfg.depth);
    for (std::size_t l = cfg.depth; l-- > 0;) {
        Tensor up = nn::upsample2_forward(cur);
        t.upsampled_channels[l] = channels(up);
        t.decoder[l] = block_forward(w, dec(l), nn::concat_channels(up, t.encoder[l].output));
        cur = t.decoder[l].output;
    }
    t.head_input = cur;
    t.logits = nn::conv3d_forward(t.head_input, w.get("head.weight"), w.get("head.bias"));
    return t;
}

}  // namespace

Tensor unet_forward(const ModelWeights& weights, const Tensor& x) {
    return forward_trace(weights, x).logits;
}

Tensor unet_features(const ModelWeights& weights, const Tensor& x) {
    return forward_trace(weights, x).head_input;
}

LossAndGradients backward(const ModelWeights& weights, const Tensor& x, const Tensor& target,
                          double loss_scale) {
    Trace t = forward_trace(weights, x);
    const Tensor probs = nn::softmax_channels(t.logits);
    LossAndGradients out{loss_scale * nn::soft_dice_loss(probs, target), weights.zeros_like()};
    ModelWeights& grads = out.gradients;

    Tensor g = nn::soft_dice_grad(probs, target);
    if (loss_scale != 1.0)
        for (auto& v : g.data()) v *= loss_scale;
    g = nn::softmax_backward(probs, g);
    g = nn::conv3d_backward(t.head_input, weights.get("head.weight"), g, grads.get("head.weight"),
                            grads.get("head.bias"));

    const std::size_t depth = weights.config.depth;
    std::vector<Tensor> skip_grads(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        Tensor gc = block_backward(weights, dec(l), t.decoder[l], g, grads);
        auto [g_up, g_skip] = nn::split_channels(gc, t.upsampled_channels[l]);
        skip_grads[l] = std::move(g_skip);
        g = nn::upsample2_backward(g_up);
    }
    g = block_backward(weights, "bottleneck", t.bottleneck, g, grads);
    for (std::size_t l = depth; l-- > 0;) {
        Tensor g_level = nn::maxpool2_backward(t.pools[l], g);
        auto gd = g_level.data();
        const auto sd = skip_grads[l].data();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i];
        g = block_backward(weights, enc(l), t.encoder[l], g_level, grads);
    }
    return out;
}

double model_loss(const ModelWeights& weights, const Tensor& x, const Tensor& target) {
    return nn::soft_dice_loss(nn::softmax_channels(unet_forward(weights, x)), target);
}

ModelWeights sgd_step(const ModelWeights& weights, const ModelWeights& gradients, double lr) {
    check_same_structure(weights, gradients);
    ModelWeights out = weights;
    for (std::size_t i = 0; i < out.params.size(); ++i) {
        auto w = out.params[i].value.data();
        const auto g = gradients.params[i].value.data();
        for (std::size_t j = 0; j < w.size(); ++j)
            w[j] = static_cast<float>(w[j] - lr * g[j]);
    }
    return out;
}

LabelMap predict_labels(const ModelWeights& weights, const Tensor& x, const Vec3& spacing,
                        const Vec3& origin) {
    return nn::argmax_labels(unet_forward(weights, x), spacing, origin);
}

}  // namespace segqa
