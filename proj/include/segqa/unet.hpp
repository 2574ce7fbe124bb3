#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segqa/tensor.hpp"

namespace segqa {

struct UNetConfig {
    std::size_t in_channels = 2;   // normalized image + soft-windowed image
    std::size_t num_classes = 4;   // background, spleen, liver, gallbladder
    std::size_t depth = 2;         // pooling levels
    std::size_t base_channels = 4;
    std::size_t kernel = 3;
    Shape3 patch{16, 16, 16};

    void validate() const;
    /// Canonical architecture string; patch size is not part of it.
    std::string fingerprint() const;
    static UNetConfig from_fingerprint(const std::string& fingerprint);
};

struct NamedTensor {
    std::string name;
    Tensor value;
    bool operator==(const NamedTensor&) const = default;
};

/// Parameters of one network, in architecture order. Also used for gradients.
struct ModelWeights {
    UNetConfig config;
    std::vector<NamedTensor> params;

    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    std::size_t parameter_count() const;
    /// Same names/shapes, all zeros.
    ModelWeights zeros_like() const;
};

struct ParamSpec {
    std::string name;
    std::vector<std::size_t> shape;
};

/// Names and shapes implied by a config, e.g. "enc0.conv1.weight" (O, I, k, k, k).
std::vector<ParamSpec> parameter_layout(const UNetConfig& cfg);

/// He-normal kernels and zero biases. Values are rounded to float32 so that
/// weights always survive the float32 weight file bit-exactly.
ModelWeights init_weights(const UNetConfig& cfg, std::uint64_t seed);

/// Throws StructureError unless names and shapes match the config layout.
void check_structure(const ModelWeights& weights);
void check_same_structure(const ModelWeights& a, const ModelWeights& b);

/// Encoder (conv-ReLU x2, maxpool) x depth, bottleneck, decoder (upsample,
/// skip concat, conv-ReLU x2) x depth, then a 1x1x1 head. Returns logits.
Tensor unet_forward(const ModelWeights& weights, const Tensor& x);

/// Features entering the 1x1x1 head (for linearity checks).
Tensor unet_features(const ModelWeights& weights, const Tensor& x);

struct LossAndGradients {
    double loss = 0.0;
    ModelWeights gradients;
};

/// Soft-Dice loss of softmax(unet_forward(x)) against a one-hot target and its
/// exact gradient w.r.t. every parameter; both scaled by `loss_scale`.
LossAndGradients backward(const ModelWeights& weights, const Tensor& x, const Tensor& target,
                          double loss_scale = 1.0);

/// Loss only, same definition as backward().
double model_loss(const ModelWeights& weights, const Tensor& x, const Tensor& target);

/// w <- w - lr * g, rounded back to float32.
ModelWeights sgd_step(const ModelWeights& weights, const ModelWeights& gradients, double lr);

/// Argmax segmentation of one (in_channels, nz, ny, nx) input.
LabelMap predict_labels(const ModelWeights& weights, const Tensor& x,
                        const Vec3& spacing = {1.0, 1.0, 1.0}, const Vec3& origin = {});

/// Weight file: "SQW1", fingerprint, then (name, rank, dims, float32 payload)
/// records, little-endian.
std::vector<std::uint8_t> save_weights(const ModelWeights& weights);
ModelWeights load_weights(std::span<const std::uint8_t> bytes);

}  // namespace segqa
