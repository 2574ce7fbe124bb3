#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "segqa/tensor.hpp"

// Building blocks of the network, each with its hand-written reverse pass.
// Backward functions accumulate parameter gradients into the supplied tensors.
namespace segqa::nn {

/// Same-padded 3D cross-correlation with zero padding.
/// x: (I, nz, ny, nx); kernel: (O, I, k, k, k) with k odd; bias: (O).
Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Returns dL/dx; adds dL/dkernel and dL/dbias into grad_kernel / grad_bias.
Tensor conv3d_backward(const Tensor& x, const Tensor& kernel, const Tensor& grad_out,
                       Tensor& grad_kernel, Tensor& grad_bias);

Tensor relu_forward(const Tensor& x);
/// Uses the forward output: gradient passes where output > 0.
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

struct PoolResult {
    Tensor output;
    std::vector<std::uint32_t> argmax;  // flat input index per output element
    std::vector<std::size_t> input_shape;
};

/// 2x2x2 max pooling with stride 2; spatial dims must be even.
PoolResult maxpool2_forward(const Tensor& x);
Tensor maxpool2_backward(const PoolResult& pool, const Tensor& grad_out);

/// Nearest-neighbor 2x upsampling on every spatial axis.
Tensor upsample2_forward(const Tensor& x);
Tensor upsample2_backward(const Tensor& grad_out);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a gradient over concat_channels(a, b) at channel `first_channels`.
std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::size_t first_channels);

/// Per-voxel softmax over channels with max subtraction.
Tensor softmax_channels(const Tensor& logits);
/// Given probs = softmax(z) and dL/dprobs, returns dL/dz.
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

inline constexpr double kDiceEpsilon = 1e-5;

/// 1 - mean_c (2 sum(p t) + eps) / (sum p + sum t + eps).
double soft_dice_loss(const Tensor& probs, const Tensor& target, double epsilon = kDiceEpsilon);
Tensor soft_dice_grad(const Tensor& probs, const Tensor& target, double epsilon = kDiceEpsilon);

/// (num_classes, nz, ny, nx) one-hot encoding; codes >= num_classes are rejected.
Tensor one_hot(const LabelMap& labels, std::size_t num_classes);

/// Per-voxel argmax over channels.
LabelMap argmax_labels(const Tensor& scores, const Vec3& spacing = {1.0, 1.0, 1.0},
                       const Vec3& origin = {});

}  // namespace segqa::nn
