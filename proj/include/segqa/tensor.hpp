#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "segqa/volume.hpp"

namespace segqa {

/// Dense row-major tensor of doubles. Feature maps use shape (C, nz, ny, nx),
/// i.e. channels-first with x fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::string shape_str() const;
    bool operator==(const Tensor&) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor feature_map(std::size_t channels, const Shape3& spatial, double fill = 0.0);
/// Spatial extent of a (C, nz, ny, nx) feature map.
Shape3 spatial_shape(const Tensor& t);
std::size_t channels(const Tensor& t);

/// Stacks volumes of one shape as channels of a feature map.
Tensor stack_channels(std::span<const VoxelVolume* const> volumes);

}  // namespace segqa
