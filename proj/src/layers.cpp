#include "segqa/layers.hpp"

#include <algorithm>
#include <cmath>

namespace segqa::nn {

namespace {

struct ConvGeometry {
    std::size_t in_ch, out_ch, k, nx, ny, nz;
};

ConvGeometry check_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const Shape3 s = spatial_shape(x);
    if (kernel.rank() != 5)
        throw ShapeError("conv3d: kernel must be (O, I, k, k, k), got " + kernel.shape_str());
    const std::size_t k = kernel.dim(2);
    if (k % 2 == 0 || kernel.dim(3) != k || kernel.dim(4) != k)
        throw ShapeError("conv3d: kernel must be cubic with odd size, got " + kernel.shape_str());
    if (kernel.dim(1) != channels(x))
        throw ShapeError("conv3d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(channels(x)));
    if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))
        throw ShapeError("conv3d: bias shape " + bias.shape_str() + " does not match " +
                         std::to_string(kernel.dim(0)) + " output channels");
    return {kernel.dim(1), kernel.dim(0), k, s.nx, s.ny, s.nz};
}

// Valid output range [lo, hi) along an axis of length n for tap offset d.
inline std::pair<std::size_t, std::size_t> tap_range(std::ptrdiff_t d, std::size_t n) {
    const auto nn = static_cast<std::ptrdiff_t>(n);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -d);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(nn, nn - d);
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const auto g = check_conv(x, kernel, bias);
    const Shape3 s{g.nx, g.ny, g.nz};
    Tensor y = feature_map(g.out_ch, s);
    const std::size_t vox = s.count();
    const auto pad = static_cast<std::ptrdiff_t>(g.k / 2);
    const double* xp = x.data().data();
    double* yp = y.data().data();
    const double* kp = kernel.data().data();

    for (std::size_t o = 0; o < g.out_ch; ++o) {
        std::fill(yp + o * vox, yp + (o + 1) * vox, bias[o]);
        for (std::size_t i = 0; i < g.in_ch; ++i) {
            for (std::size_t kz = 0; kz < g.k; ++kz) {
                const std::ptrdiff_t dz = static_cast<std::ptrdiff_t>(kz) - pad;
                const auto [z0, z1] = tap_range(dz, g.nz);
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const auto [y0, y1] = tap_range(dy, g.ny);
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        const auto [x0, x1] = tap_range(dx, g.nx);
                        const double w = kp[(((o * g.in_ch + i) * g.k + kz) * g.k + ky) * g.k + kx];
                        if (w == 0.0) continue;
                        for (std::size_t z = z0; z < z1; ++z) {
                            for (std::size_t yy = y0; yy < y1; ++yy) {
                                const double* src =
                                    xp + ((i * g.nz + (z + dz)) * g.ny + (yy + dy)) * g.nx +
                                    static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x0) + dx);
                                double* dst = yp + ((o * g.nz + z) * g.ny + yy) * g.nx + x0;
                                const std::size_t len = x1 - x0;
                                for (std::size_t j = 0; j < len; ++j) dst[j] += w * src[j];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor conv3d_backward(const Tensor& x, const Tensor& kernel, const Tensor& grad_out,
                       Tensor& grad_kernel, Tensor& grad_bias) {
    const auto g = check_conv(x, kernel, grad_bias);
    if (grad_out.shape() != std::vector<std::size_t>{g.out_ch, g.nz, g.ny, g.nx})
        throw ShapeError("conv3d_backward: grad_out shape " + grad_out.shape_str());
    if (grad_kernel.shape() != kernel.shape())
        throw ShapeError("conv3d_backward: grad_kernel shape " + grad_kernel.shape_str());
    Tensor grad_x(x.shape());
    const std::size_t vox = g.nx * g.ny * g.nz;
    const auto pad = static_cast<std::ptrdiff_t>(g.k / 2);
    const double* xp = x.data().data();
    const double* gp = grad_out.data().data();
    const double* kp = kernel.data().data();
    double* gxp = grad_x.data().data();
    double* gkp = grad_kernel.data().data();

    for (std::size_t o = 0; o < g.out_ch; ++o) {
        double bsum = 0.0;
        for (std::size_t v = 0; v < vox; ++v) bsum += gp[o * vox + v];
        grad_bias[o] += bsum;
        for (std::size_t i = 0; i < g.in_ch; ++i) {
            for (std::size_t kz = 0; kz < g.k; ++kz) {
                const std::ptrdiff_t dz = static_cast<std::ptrdiff_t>(kz) - pad;
                const auto [z0, z1] = tap_range(dz, g.nz);
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const auto [y0, y1] = tap_range(dy, g.ny);
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        const auto [x0, x1] = tap_range(dx, g.nx);
                        const std::size_t widx =
                            (((o * g.in_ch + i) * g.k + kz) * g.k + ky) * g.k + kx;
                        const double w = kp[widx];
                        double acc = 0.0;
                        for (std::size_t z = z0; z < z1; ++z) {
                            for (std::size_t yy = y0; yy < y1; ++yy) {
                                const std::size_t in_off =
                                    ((i * g.nz + (z + dz)) * g.ny + (yy + dy)) * g.nx +
                                    static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x0) + dx);
                                const double* src = xp + in_off;
                                double* gx = gxp + in_off;
                                const double* go = gp + ((o * g.nz + z) * g.ny + yy) * g.nx + x0;
                                const std::size_t len = x1 - x0;
                                for (std::size_t j = 0; j < len; ++j) {
                                    acc += go[j] * src[j];
                                    gx[j] += w * go[j];
                                }
                            }
                        }
                        gkp[widx] += acc;
                    }
                }
            }
        }
    }
    return grad_x;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
    if (output.shape() != grad_out.shape())
        throw ShapeError("relu_backward: shape mismatch " + output.shape_str() + " vs " +
                         grad_out.shape_str());
    Tensor g = grad_out;
    const auto out = output.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i)
        if (!(out[i] > 0.0)) gd[i] = 0.0;
    return g;
}

PoolResult maxpool2_forward(const Tensor& x) {
    const Shape3 s = spatial_shape(x);
    const char* axes = "xyz";
    for (int a = 0; a < 3; ++a)
        if (s[a] % 2 != 0)
            throw ShapeError(std::string("maxpool2: spatial axis ") + axes[a] + " has odd size " +
                             std::to_string(s[a]));
    const std::size_t c_n = channels(x);
    const Shape3 h{s.nx / 2, s.ny / 2, s.nz / 2};
    PoolResult r{feature_map(c_n, h), std::vector<std::uint32_t>(c_n * h.count()), x.shape()};
    const auto xd = x.data();
    auto yd = r.output.data();
    std::size_t out = 0;
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t z = 0; z < h.nz; ++z)
            for (std::size_t y = 0; y < h.ny; ++y)
                for (std::size_t xx = 0; xx < h.nx; ++xx, ++out) {
                    std::size_t best = ((c * s.nz + 2 * z) * s.ny + 2 * y) * s.nx + 2 * xx;
                    for (std::size_t dz = 0; dz < 2; ++dz)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    ((c * s.nz + 2 * z + dz) * s.ny + 2 * y + dy) * s.nx + 2 * xx + dx;
                                if (xd[idx] > xd[best]) best = idx;
                            }
                    yd[out] = xd[best];
                    r.argmax[out] = static_cast<std::uint32_t>(best);
                }
    return r;
}

Tensor maxpool2_backward(const PoolResult& pool, const Tensor& grad_out) {
    if (grad_out.shape() != pool.output.shape())
        throw ShapeError("maxpool2_backward: grad shape " + grad_out.shape_str());
    Tensor g(pool.input_shape);
    const auto go = grad_out.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < go.size(); ++i) gd[pool.argmax[i]] += go[i];
    return g;
}

Tensor upsample2_forward(const Tensor& x) {
    const Shape3 s = spatial_shape(x);
    const std::size_t c_n = channels(x);
    const Shape3 u{2 * s.nx, 2 * s.ny, 2 * s.nz};
    Tensor y = feature_map(c_n, u);
    const auto xd = x.data();
    auto yd = y.data();
    std::size_t out = 0;
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t z = 0; z < u.nz; ++z)
            for (std::size_t yy = 0; yy < u.ny; ++yy)
                for (std::size_t xx = 0; xx < u.nx; ++xx, ++out)
                    yd[out] = xd[((c * s.nz + z / 2) * s.ny + yy / 2) * s.nx + xx / 2];
    return y;
}

Tensor upsample2_backward(const Tensor& grad_out) {
    const Shape3 u = spatial_shape(grad_out);
    const std::size_t c_n = channels(grad_out);
    if (u.nx % 2 || u.ny % 2 || u.nz % 2)
        throw ShapeError("upsample2_backward: odd gradient shape " + grad_out.shape_str());
    const Shape3 s{u.nx / 2, u.ny / 2, u.nz / 2};
    Tensor g = feature_map(c_n, s);
    const auto go = grad_out.data();
    auto gd = g.data();
    std::size_t in = 0;
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t z = 0; z < u.nz; ++z)
            for (std::size_t yy = 0; yy < u.ny; ++yy)
                for (std::size_t xx = 0; xx < u.nx; ++xx, ++in)
                    gd[((c * s.nz + z / 2) * s.ny + yy / 2) * s.nx + xx / 2] += go[in];
    return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape3 s = spatial_shape(a);
    if (spatial_shape(b) != s)
        throw ShapeError("concat_channels: spatial shapes differ " + a.shape_str() + " vs " +
                         b.shape_str());
    Tensor out = feature_map(channels(a) + channels(b), s);
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::size_t first_channels) {
    const Shape3 s = spatial_shape(grad);
    const std::size_t total = channels(grad);
    if (first_channels == 0 || first_channels >= total)
        throw ShapeError("split_channels: cannot split " + std::to_string(total) +
                         " channels at " + std::to_string(first_channels));
    Tensor a = feature_map(first_channels, s);
    Tensor b = feature_map(total - first_channels, s);
    const auto split = grad.data().begin() + static_cast<std::ptrdiff_t>(a.size());
    std::copy(grad.data().begin(), split, a.data().begin());
    std::copy(split, grad.data().end(), b.data().begin());
    return {std::move(a), std::move(b)};
}

Tensor softmax_channels(const Tensor& logits) {
    const std::size_t c_n = channels(logits);
    const std::size_t vox = spatial_shape(logits).count();
    Tensor p(logits.shape());
    const auto z = logits.data();
    auto pd = p.data();
    for (std::size_t v = 0; v < vox; ++v) {
        double mx = z[v];
        for (std::size_t c = 1; c < c_n; ++c) mx = std::max(mx, z[c * vox + v]);
        double sum = 0.0;
        for (std::size_t c = 0; c < c_n; ++c) {
            const double e = std::exp(z[c * vox + v] - mx);
            pd[c * vox + v] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < c_n; ++c) pd[c * vox + v] /= sum;
    }
    return p;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
    if (probs.shape() != grad_probs.shape())
        throw ShapeError("softmax_backward: shape mismatch");
    const std::size_t c_n = channels(probs);
    const std::size_t vox = spatial_shape(probs).count();
    Tensor gz(probs.shape());
    const auto p = probs.data();
    const auto g = grad_probs.data();
    auto out = gz.data();
    for (std::size_t v = 0; v < vox; ++v) {
        double dot = 0.0;
        for (std::size_t c = 0; c < c_n; ++c) dot += p[c * vox + v] * g[c * vox + v];
        for (std::size_t c = 0; c < c_n; ++c)
            out[c * vox + v] = p[c * vox + v] * (g[c * vox + v] - dot);
    }
    return gz;
}

namespace {

struct DiceSums {
    std::vector<double> inter, pred, truth;
};

DiceSums dice_sums(const Tensor& probs, const Tensor& target) {
    if (probs.shape() != target.shape())
        throw ShapeError("soft dice: probs " + probs.shape_str() + " vs target " +
                         target.shape_str());
    const std::size_t c_n = channels(probs);
    const std::size_t vox = spatial_shape(probs).count();
    DiceSums s{std::vector<double>(c_n), std::vector<double>(c_n), std::vector<double>(c_n)};
    const auto p = probs.data();
    const auto t = target.data();
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t v = 0; v < vox; ++v) {
            const double pv = p[c * vox + v];
            const double tv = t[c * vox + v];
            s.inter[c] += pv * tv;
            s.pred[c] += pv;
            s.truth[c] += tv;
        }
    }
    return s;
}

}  // namespace

double soft_dice_loss(const Tensor& probs, const Tensor& target, double epsilon) {
    const auto s = dice_sums(probs, target);
    double mean = 0.0;
    for (std::size_t c = 0; c < s.inter.size(); ++c)
        mean += (2.0 * s.inter[c] + epsilon) / (s.pred[c] + s.truth[c] + epsilon);
    return 1.0 - mean / static_cast<double>(s.inter.size());
}

Tensor soft_dice_grad(const Tensor& probs, const Tensor& target, double epsilon) {
    const auto s = dice_sums(probs, target);
    const std::size_t c_n = s.inter.size();
    const std::size_t vox = spatial_shape(probs).count();
    Tensor g(probs.shape());
    const auto t = target.data();
    auto gd = g.data();
    const double scale = -1.0 / static_cast<double>(c_n);
    for (std::size_t c = 0; c < c_n; ++c) {
        const double den = s.pred[c] + s.truth[c] + epsilon;
        const double num = 2.0 * s.inter[c] + epsilon;
        for (std::size_t v = 0; v < vox; ++v)
            gd[c * vox + v] = scale * (2.0 * t[c * vox + v] * den - num) / (den * den);
    }
    return g;
}

Tensor one_hot(const LabelMap& labels, std::size_t num_classes) {
    Tensor t = feature_map(num_classes, labels.shape());
    const std::size_t vox = labels.shape().count();
    const auto d = labels.data();
    for (std::size_t v = 0; v < vox; ++v) {
        if (d[v] >= num_classes)
            throw RangeError("one_hot: label code " + std::to_string(d[v]) + " >= num_classes " +
                             std::to_string(num_classes));
        t[d[v] * vox + v] = 1.0;
    }
    return t;
}

LabelMap argmax_labels(const Tensor& scores, const Vec3& spacing, const Vec3& origin) {
    const Shape3 s = spatial_shape(scores);
    const std::size_t c_n = channels(scores);
    const std::size_t vox = s.count();
    LabelMap out(s, spacing, origin);
    const auto d = scores.data();
    auto od = out.data();
    for (std::size_t v = 0; v < vox; ++v) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < c_n; ++c)
            if (d[c * vox + v] > d[best * vox + v]) best = c;
        od[v] = static_cast<std::uint16_t>(best);
    }
    return out;
}

}  // namespace segqa::nn
