#include "segqa/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

namespace segqa {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end())
        throw ShapeError("tensor dimensions must be positive, got " + shape_str());
    data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end())
        throw ShapeError("tensor dimensions must be positive, got " + shape_str());
    if (data_.size() != product(shape_))
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

Tensor feature_map(std::size_t channels, const Shape3& spatial, double fill) {
    return Tensor({channels, spatial.nz, spatial.ny, spatial.nx}, fill);
}

Shape3 spatial_shape(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("expected a (C, nz, ny, nx) feature map, got " + t.shape_str());
    return {t.dim(3), t.dim(2), t.dim(1)};
}

std::size_t channels(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("expected a (C, nz, ny, nx) feature map, got " + t.shape_str());
    return t.dim(0);
}

Tensor stack_channels(std::span<const VoxelVolume* const> volumes) {
    if (volumes.empty()) throw EmptyInputError("stack_channels: no volumes");
    const Shape3 shape = volumes.front()->shape();
    Tensor out = feature_map(volumes.size(), shape);
    const std::size_t n = shape.count();
    for (std::size_t c = 0; c < volumes.size(); ++c) {
        if (volumes[c]->shape() != shape)
            throw ShapeError("stack_channels: channel " + std::to_string(c) + " has shape " +
                             volumes[c]->shape().str() + ", expected " + shape.str());
        std::copy(volumes[c]->data().begin(), volumes[c]->data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(c * n));
    }
    return out;
}

}  // namespace segqa
