#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cdikt/tensor.hpp"

namespace cdikt {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_n(std::span<const Tensor> xs);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);

// Broadcasts extents of 1 up to `shape`; ranks must match.
Tensor expand(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
// [C,H,W] -> [C,H*W]
Tensor flatten_spatial(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

enum class PoolMode { kMax, kAvg };
// Reduces `axis` away. Max ties resolve to the lowest index along the axis.
Tensor pool_axis(const Tensor& x, std::size_t axis, PoolMode mode);
// [C,...] -> [C], mean over every trailing position.
Tensor global_avg_pool(const Tensor& x);

// x [C,H,W], kernel [C,k,k] (k odd), optional bias [C]. Zero padding.
Tensor conv2d_depthwise(const Tensor& x, const Tensor& kernel, const Tensor* bias,
                        std::size_t stride, std::size_t padding);
// x [C,H,W] (or [C,L]), weights [C',C], optional bias [C'].
Tensor conv2d_pointwise(const Tensor& x, const Tensor& weights, const Tensor* bias);
// Affine map along the trailing axis: x [...,D], weights [D',D], bias [D'].
Tensor linear(const Tensor& x, const Tensor& weights, const Tensor* bias);
Tensor matmul(const Tensor& a, const Tensor& b);

inline constexpr double kNormEpsilon = 1e-5;

// Standardizes along axis 0 at every trailing position, then applies the
// per-channel scale and shift. Works for [C], [C,L] and [C,H,W].
Tensor normalize_layer(const Tensor& x, const Tensor& scale, const Tensor& shift,
                       double epsilon = kNormEpsilon);

// Rows of a [N,D] (or a single [D]) rescaled to unit L2 norm.
Tensor l2_normalize(const Tensor& x);

Tensor mse(const Tensor& a, const Tensor& b);
// logits [N,K] (or [K] with one label); mean negative log-likelihood.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Test hook: scales the input gradient produced by the named op so that
// gradient checks can be shown to catch a broken rule. Empty string clears.
void set_gradient_fault(std::string_view op, double factor = 1.01);

}  // namespace cdikt
