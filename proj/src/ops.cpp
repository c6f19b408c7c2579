#include "cdikt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace cdikt {

namespace {

std::string g_fault_op;
double g_fault_factor = 1.0;

double fault(std::string_view op) {
  if (g_fault_op.empty() || g_fault_op != op) return 1.0;
  return g_fault_factor;
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Applies out[o] <- in[map[o]] in the forward direction and scatters back.
Tensor gather_op(const Tensor& x, Shape out_shape, std::vector<std::size_t> map,
                 std::string_view op) {
  const auto& src = x.data();
  std::vector<double> out(map.size());
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = src[map[o]];
  return detail::make_result(
      std::move(out_shape), std::move(out), op, {x.impl()},
      [map = std::move(map), op](TensorImpl& self) {
        const double f = fault(op);
        auto& gin = self.inputs[0]->grad;
        for (std::size_t o = 0; o < map.size(); ++o) gin[map[o]] += f * self.grad[o];
      });
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void accumulate(TensorImpl& in, const std::vector<double>& g, double factor) {
  if (!in.requires_grad) return;
  for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += factor * g[i];
}

// Geometry of a strided, zero-padded square kernel. Visits every
// (tap, output row) pair with the contiguous output column range whose
// input column stays inside the image.
struct TapWindow {
  std::size_t H, W, K, Ho, Wo, stride, padding;

  // First output index o with o*stride + k >= padding, and one past the
  // last with o*stride + k - padding < extent.
  std::pair<std::size_t, std::size_t> valid(std::size_t k, std::size_t extent, std::size_t out) const {
    std::size_t lo = 0;
    if (k < padding) lo = (padding - k + stride - 1) / stride;
    if (extent + padding <= k) return {0, 0};
    const std::size_t hi = std::min(out, (extent + padding - k - 1) / stride + 1);
    return {lo, std::max(lo, hi)};
  }

  template <typename Fn>
  void for_each_tap(Fn&& fn) const {
    for (std::size_t ky = 0; ky < K; ++ky) {
      const auto [oy0, oy1] = valid(ky, H, Ho);
      for (std::size_t kx = 0; kx < K; ++kx) {
        const auto [ox0, ox1] = valid(kx, W, Wo);
        if (ox0 >= ox1) continue;
        const std::size_t ix0 = ox0 * stride + kx - padding;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          fn(ky * K + kx, oy, ox0, ox1, oy * stride + ky - padding, ix0);
        }
      }
    }
  }
};

}  // namespace

void set_gradient_fault(std::string_view op, double factor) {
  g_fault_op = std::string(op);
  g_fault_factor = op.empty() ? 1.0 : factor;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), "add", {a.impl(), b.impl()},
                             [](TensorImpl& self) {
                               const double f = fault("add");
                               for (auto& in : self.inputs) accumulate(*in, self.grad, f);
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), "sub", {a.impl(), b.impl()},
                             [](TensorImpl& self) {
                               const double f = fault("sub");
                               accumulate(*self.inputs[0], self.grad, f);
                               accumulate(*self.inputs[1], self.grad, -f);
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), "mul", {a.impl(), b.impl()},
                             [](TensorImpl& self) {
                               const double f = fault("mul");
                               auto& x = *self.inputs[0];
                               auto& y = *self.inputs[1];
                               const auto& g = self.grad;
                               if (x.requires_grad)
                                 for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += f * g[i] * y.data[i];
                               if (y.requires_grad)
                                 for (std::size_t i = 0; i < g.size(); ++i) y.grad[i] += f * g[i] * x.data[i];
                             });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::make_result(x.shape(), std::move(out), "scale", {x.impl()},
                             [factor](TensorImpl& self) {
                               accumulate(*self.inputs[0], self.grad, factor * fault("scale"));
                             });
}

Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("add_n: no operands");
  std::vector<double> out(xs[0].numel(), 0.0);
  std::vector<ImplPtr> inputs;
  for (const auto& x : xs) {
    require_same_shape(xs[0], x, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    inputs.push_back(x.impl());
  }
  return detail::make_result(xs[0].shape(), std::move(out), "add_n", std::move(inputs),
                             [](TensorImpl& self) {
                               const double f = fault("add_n");
                               for (auto& in : self.inputs) accumulate(*in, self.grad, f);
                             });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return detail::make_result(x.shape(), std::move(out), "sigmoid", {x.impl()},
                             [](TensorImpl& self) {
                               const double f = fault("sigmoid");
                               auto& in = *self.inputs[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 const double s = self.data[i];
                                 in.grad[i] += f * self.grad[i] * s * (1.0 - s);
                               }
                             });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  }
  return detail::make_result(x.shape(), std::move(out), "gelu", {x.impl()},
                             [](TensorImpl& self) {
                               const double f = fault("gelu");
                               constexpr double kInvSqrt2Pi = 0.39894228040143267794;
                               auto& in = *self.inputs[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 const double v = in.data[i];
                                 const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                                 const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                                 in.grad[i] += f * self.grad[i] * (cdf + v * pdf);
                               }
                             });
}

Tensor expand(const Tensor& x, const Shape& shape) {
  if (x.dim() != shape.size()) {
    throw ShapeError("expand: rank mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (x.shape()[d] != shape[d] && x.shape()[d] != 1) {
      throw ShapeError("expand: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
  }
  const auto in_strides = strides_of(x.shape());
  const std::size_t n = numel_of(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (x.shape()[d] != 1) src += idx[d] * in_strides[d];
    }
    map[o] = src;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return gather_op(x, shape, std::move(map), "expand");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {x.impl()},
                             [](TensorImpl& self) {
                               accumulate(*self.inputs[0], self.grad, fault("reshape"));
                             });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.dim();
  if (axes.size() != rank) throw ShapeError("permute: expected " + std::to_string(rank) + " axes");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis list for shape " + shape_str(x.shape()));
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[axes[i]];
  const auto in_strides = strides_of(x.shape());
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[axes[d]];
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return gather_op(x, std::move(out_shape), std::move(map), "permute");
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no operands");
  const Shape& ref = xs[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.dim() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && x.shape()[d] != ref[d]) {
        throw ShapeError("concat: " + shape_str(x.shape()) + " incompatible with " + shape_str(ref));
      }
    }
    out_shape[axis] += x.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t out_block = out_shape[axis] * inner;
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::vector<ImplPtr> inputs;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t block = x.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.data().begin() + o * block, block, out.begin() + o * out_block + offset);
    }
    offsets.push_back(offset);
    inputs.push_back(x.impl());
    offset += block;
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), "concat", std::move(inputs),
      [offsets, outer, out_block](TensorImpl& self) {
        const double f = fault("concat");
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          auto& in = *self.inputs[k];
          if (!in.requires_grad) continue;
          const std::size_t block = in.data.size() / outer;
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < block; ++i) {
              in.grad[o * block + i] += f * self.grad[o * out_block + offsets[k] + i];
            }
          }
        }
      });
}

Tensor flatten_spatial(const Tensor& x) {
  if (x.dim() != 3) throw ShapeError("flatten_spatial: expected [C,H,W], got " + shape_str(x.shape()));
  return reshape(x, {x.shape()[0], x.shape()[1] * x.shape()[2]});
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({}, {s}, "sum", {x.impl()}, [](TensorImpl& self) {
    const double g = self.grad[0] * fault("sum");
    for (auto& v : self.inputs[0]->grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return detail::make_result({}, {s / n}, "mean", {x.impl()}, [n](TensorImpl& self) {
    const double g = self.grad[0] * fault("mean") / n;
    for (auto& v : self.inputs[0]->grad) v += g;
  });
}

Tensor pool_axis(const Tensor& x, std::size_t axis, PoolMode mode) {
  if (axis >= x.dim()) {
    throw ShapeError("pool_axis: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[axis];
  if (n == 0) throw ShapeError("pool_axis: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (std::size_t d = axis + 1; d < x.dim(); ++d) inner *= x.shape()[d];
  Shape out_shape;
  for (std::size_t d = 0; d < x.dim(); ++d)
    if (d != axis) out_shape.push_back(x.shape()[d]);
  std::vector<double> out(outer * inner);
  const auto& src = x.data();
  if (mode == PoolMode::kAvg) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += src[(o * n + k) * inner + i];
    for (auto& v : out) v /= static_cast<double>(n);
    return detail::make_result(std::move(out_shape), std::move(out), "pool_avg", {x.impl()},
                               [outer, n, inner](TensorImpl& self) {
                                 const double f = fault("pool_avg") / static_cast<double>(n);
                                 auto& gin = self.inputs[0]->grad;
                                 for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t k = 0; k < n; ++k)
                                     for (std::size_t i = 0; i < inner; ++i)
                                       gin[(o * n + k) * inner + i] += f * self.grad[o * inner + i];
                               });
  }
  std::vector<std::size_t> argmax(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = o * n * inner + i;
      for (std::size_t k = 1; k < n; ++k) {
        const std::size_t at = (o * n + k) * inner + i;
        if (src[at] > src[best]) best = at;
      }
      argmax[o * inner + i] = best;
      out[o * inner + i] = src[best];
    }
  }
  return detail::make_result(std::move(out_shape), std::move(out), "pool_max", {x.impl()},
                             [argmax = std::move(argmax)](TensorImpl& self) {
                               const double f = fault("pool_max");
                               auto& gin = self.inputs[0]->grad;
                               for (std::size_t o = 0; o < argmax.size(); ++o) gin[argmax[o]] += f * self.grad[o];
                             });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.dim() < 2) throw ShapeError("global_avg_pool: expected [C,...], got " + shape_str(x.shape()));
  const std::size_t c = x.shape()[0];
  const std::size_t p = x.numel() / c;
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i) s += x[ch * p + i];
    out[ch] = s / static_cast<double>(p);
  }
  return detail::make_result({c}, std::move(out), "global_avg_pool", {x.impl()},
                             [p](TensorImpl& self) {
                               const double f = fault("global_avg_pool") / static_cast<double>(p);
                               auto& gin = self.inputs[0]->grad;
                               for (std::size_t ch = 0; ch < self.grad.size(); ++ch) {
                                 const double g = f * self.grad[ch];
                                 for (std::size_t i = 0; i < p; ++i) gin[ch * p + i] += g;
                               }
                             });
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& kernel, const Tensor* bias,
                        std::size_t stride, std::size_t padding) {
  if (x.dim() != 3) throw ShapeError("conv2d_depthwise: expected x [C,H,W], got " + shape_str(x.shape()));
  if (kernel.dim() != 3 || kernel.shape()[1] != kernel.shape()[2] || kernel.shape()[1] % 2 == 0) {
    throw ShapeError("conv2d_depthwise: kernel must be [C,k,k] with k odd, got " + shape_str(kernel.shape()));
  }
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (kernel.shape()[0] != C) {
    throw ShapeError("conv2d_depthwise: kernel has " + std::to_string(kernel.shape()[0]) +
                     " channels but input has " + std::to_string(C));
  }
  if (bias && bias->shape() != Shape{C}) throw ShapeError("conv2d_depthwise: bias must be [C]");
  if (stride == 0) throw ShapeError("conv2d_depthwise: stride must be positive");
  const std::size_t K = kernel.shape()[1];
  if (H + 2 * padding < K || W + 2 * padding < K) throw ShapeError("conv2d_depthwise: kernel larger than padded input");
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
  std::vector<double> out(C * Ho * Wo);
  const auto& xs = x.data();
  const auto& ks = kernel.data();
  const TapWindow win{H, W, K, Ho, Wo, stride, padding};
  for (std::size_t c = 0; c < C; ++c) {
    double* oc = out.data() + c * Ho * Wo;
    if (bias) std::fill(oc, oc + Ho * Wo, (*bias)[c]);
    const double* xc = xs.data() + c * H * W;
    const double* kc = ks.data() + c * K * K;
    win.for_each_tap([&](std::size_t tap, std::size_t oy, std::size_t ox0, std::size_t ox1, std::size_t in_row,
                         std::size_t ix0) {
      const double k = kc[tap];
      double* orow = oc + oy * Wo;
      const double* xrow = xc + in_row * W + ix0;
      for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += k * xrow[(ox - ox0) * stride];
    });
  }
  std::vector<ImplPtr> inputs{x.impl(), kernel.impl()};
  if (bias) inputs.push_back(bias->impl());
  return detail::make_result(
      {C, Ho, Wo}, std::move(out), "conv2d_depthwise", std::move(inputs),
      [C, H, W, K, Ho, Wo, win](TensorImpl& self) {
        const double f = fault("conv2d_depthwise");
        auto& xin = *self.inputs[0];
        auto& kin = *self.inputs[1];
        const auto& g = self.grad;
        const std::size_t stride = win.stride;
        for (std::size_t c = 0; c < C; ++c) {
          const double* gc = g.data() + c * Ho * Wo;
          const double* xc = xin.data.data() + c * H * W;
          const double* kc = kin.data.data() + c * K * K;
          double* gx = xin.requires_grad ? xin.grad.data() + c * H * W : nullptr;
          double* gk = kin.requires_grad ? kin.grad.data() + c * K * K : nullptr;
          win.for_each_tap([&](std::size_t tap, std::size_t oy, std::size_t ox0, std::size_t ox1,
                               std::size_t in_row, std::size_t ix0) {
            const double* grow = gc + oy * Wo;
            const std::size_t base = in_row * W + ix0;
            if (gx) {
              const double k = f * kc[tap];
              double* xrow = gx + base;
              for (std::size_t ox = ox0; ox < ox1; ++ox) xrow[(ox - ox0) * stride] += k * grow[ox];
            }
            if (gk) {
              const double* xrow = xc + base;
              double acc = 0.0;
              for (std::size_t ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xrow[(ox - ox0) * stride];
              gk[tap] += f * acc;
            }
          });
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad;
          for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < Ho * Wo; ++i) s += g[c * Ho * Wo + i];
            gb[c] += f * s;
          }
        }
      });
}

Tensor conv2d_pointwise(const Tensor& x, const Tensor& weights, const Tensor* bias) {
  if (x.dim() < 2) throw ShapeError("conv2d_pointwise: expected [C,...], got " + shape_str(x.shape()));
  if (weights.dim() != 2) throw ShapeError("conv2d_pointwise: weights must be [C',C]");
  const std::size_t C = x.shape()[0];
  const std::size_t Co = weights.shape()[0];
  if (weights.shape()[1] != C) {
    throw ShapeError("conv2d_pointwise: weights " + shape_str(weights.shape()) + " do not match " +
                     std::to_string(C) + " input channels");
  }
  if (bias && bias->shape() != Shape{Co}) throw ShapeError("conv2d_pointwise: bias must be [C']");
  const std::size_t P = x.numel() / C;
  Shape out_shape = x.shape();
  out_shape[0] = Co;
  std::vector<double> out(Co * P);
  MatMap Y(out.data(), Co, P);
  Y.noalias() = ConstMatMap(weights.data().data(), Co, C) * ConstMatMap(x.data().data(), C, P);
  if (bias) {
    for (std::size_t o = 0; o < Co; ++o) Y.row(o).array() += (*bias)[o];
  }
  std::vector<ImplPtr> inputs{x.impl(), weights.impl()};
  if (bias) inputs.push_back(bias->impl());
  return detail::make_result(
      std::move(out_shape), std::move(out), "conv2d_pointwise", std::move(inputs),
      [C, Co, P](TensorImpl& self) {
        const double f = fault("conv2d_pointwise");
        auto& xin = *self.inputs[0];
        auto& win = *self.inputs[1];
        ConstMatMap G(self.grad.data(), Co, P);
        if (win.requires_grad) {
          MatMap(win.grad.data(), Co, C).noalias() += f * (G * ConstMatMap(xin.data.data(), C, P).transpose());
        }
        if (xin.requires_grad) {
          MatMap(xin.grad.data(), C, P).noalias() += f * (ConstMatMap(win.data.data(), Co, C).transpose() * G);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad;
          for (std::size_t o = 0; o < Co; ++o) gb[o] += f * G.row(o).sum();
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weights, const Tensor* bias) {
  if (x.dim() < 1) throw ShapeError("linear: input must have a trailing axis");
  if (weights.dim() != 2) throw ShapeError("linear: weights must be [D',D]");
  const std::size_t D = x.shape().back();
  const std::size_t Do = weights.shape()[0];
  if (weights.shape()[1] != D) {
    throw ShapeError("linear: weights " + shape_str(weights.shape()) + " do not match trailing extent " +
                     std::to_string(D));
  }
  if (bias && bias->shape() != Shape{Do}) throw ShapeError("linear: bias must be [D']");
  const std::size_t N = x.numel() / D;
  Shape out_shape = x.shape();
  out_shape.back() = Do;
  std::vector<double> out(N * Do);
  MatMap Y(out.data(), N, Do);
  Y.noalias() = ConstMatMap(x.data().data(), N, D) * ConstMatMap(weights.data().data(), Do, D).transpose();
  if (bias) {
    for (std::size_t o = 0; o < Do; ++o) Y.col(o).array() += (*bias)[o];
  }
  std::vector<ImplPtr> inputs{x.impl(), weights.impl()};
  if (bias) inputs.push_back(bias->impl());
  return detail::make_result(
      std::move(out_shape), std::move(out), "linear", std::move(inputs),
      [N, D, Do](TensorImpl& self) {
        const double f = fault("linear");
        auto& xin = *self.inputs[0];
        auto& win = *self.inputs[1];
        ConstMatMap G(self.grad.data(), N, Do);
        if (win.requires_grad) {
          MatMap(win.grad.data(), Do, D).noalias() += f * (G.transpose() * ConstMatMap(xin.data.data(), N, D));
        }
        if (xin.requires_grad) {
          MatMap(xin.grad.data(), N, D).noalias() += f * (G * ConstMatMap(win.data.data(), Do, D));
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad;
          for (std::size_t o = 0; o < Do; ++o) gb[o] += f * G.col(o).sum();
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  std::vector<double> out(M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[i * K + k];
      for (std::size_t j = 0; j < N; ++j) out[i * N + j] += av * b[k * N + j];
    }
  return detail::make_result({M, N}, std::move(out), "matmul", {a.impl(), b.impl()},
                             [M, K, N](TensorImpl& self) {
                               const double f = fault("matmul");
                               auto& A = *self.inputs[0];
                               auto& B = *self.inputs[1];
                               for (std::size_t i = 0; i < M; ++i)
                                 for (std::size_t k = 0; k < K; ++k) {
                                   double ga = 0.0;
                                   const double av = A.data[i * K + k];
                                   for (std::size_t j = 0; j < N; ++j) {
                                     const double g = f * self.grad[i * N + j];
                                     ga += g * B.data[k * N + j];
                                     if (B.requires_grad) B.grad[k * N + j] += g * av;
                                   }
                                   if (A.requires_grad) A.grad[i * K + k] += ga;
                                 }
                             });
}

Tensor normalize_layer(const Tensor& x, const Tensor& scale_param, const Tensor& shift,
                       double epsilon) {
  if (x.dim() < 1 || x.shape()[0] == 0) throw ShapeError("normalize_layer: empty normalized axis");
  const std::size_t C = x.shape()[0];
  if (scale_param.shape() != Shape{C} || shift.shape() != Shape{C}) {
    throw ShapeError("normalize_layer: scale/shift must be [" + std::to_string(C) + "]");
  }
  const std::size_t P = x.numel() / C;
  std::vector<double> mean_p(P, 0.0), inv_std(P, 0.0), xhat(x.numel());
  const auto& xs = x.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) mean_p[p] += xs[c * P + p];
  for (auto& m : mean_p) m /= static_cast<double>(C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) {
      const double d = xs[c * P + p] - mean_p[p];
      inv_std[p] += d * d;
    }
  for (auto& v : inv_std) v = 1.0 / std::sqrt(v / static_cast<double>(C) + epsilon);
  std::vector<double> out(x.numel());
  for (std::size_t c = 0; c < C; ++c) {
    const double g = scale_param[c], b = shift[c];
    for (std::size_t p = 0; p < P; ++p) {
      const double h = (xs[c * P + p] - mean_p[p]) * inv_std[p];
      xhat[c * P + p] = h;
      out[c * P + p] = g * h + b;
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), "normalize_layer", {x.impl(), scale_param.impl(), shift.impl()},
      [C, P, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        const double f = fault("normalize_layer");
        auto& xin = *self.inputs[0];
        auto& gam = *self.inputs[1];
        auto& bet = *self.inputs[2];
        const auto& g = self.grad;
        if (gam.requires_grad || bet.requires_grad) {
          for (std::size_t c = 0; c < C; ++c) {
            double sg = 0.0, sb = 0.0;
            for (std::size_t p = 0; p < P; ++p) {
              sg += g[c * P + p] * xhat[c * P + p];
              sb += g[c * P + p];
            }
            if (gam.requires_grad) gam.grad[c] += f * sg;
            if (bet.requires_grad) bet.grad[c] += f * sb;
          }
        }
        if (!xin.requires_grad) return;
        std::vector<double> sum_d(P, 0.0), sum_dh(P, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          const double gm = gam.data[c];
          for (std::size_t p = 0; p < P; ++p) {
            const double d = g[c * P + p] * gm;
            sum_d[p] += d;
            sum_dh[p] += d * xhat[c * P + p];
          }
        }
        const double invC = 1.0 / static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) {
          const double gm = gam.data[c];
          for (std::size_t p = 0; p < P; ++p) {
            const double d = g[c * P + p] * gm;
            xin.grad[c * P + p] +=
                f * inv_std[p] * (d - invC * sum_d[p] - xhat[c * P + p] * invC * sum_dh[p]);
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x) {
  if (x.dim() != 1 && x.dim() != 2) throw ShapeError("l2_normalize: expected [D] or [N,D]");
  const std::size_t D = x.shape().back();
  const std::size_t N = x.numel() / D;
  std::vector<double> out(x.numel()), norms(N);
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += x[n * D + d] * x[n * D + d];
    norms[n] = std::max(std::sqrt(s), 1e-12);
    for (std::size_t d = 0; d < D; ++d) out[n * D + d] = x[n * D + d] / norms[n];
  }
  return detail::make_result(x.shape(), std::move(out), "l2_normalize", {x.impl()},
                             [N, D, norms = std::move(norms)](TensorImpl& self) {
                               const double f = fault("l2_normalize");
                               auto& in = *self.inputs[0];
                               for (std::size_t n = 0; n < N; ++n) {
                                 double dot = 0.0;
                                 for (std::size_t d = 0; d < D; ++d) dot += self.grad[n * D + d] * self.data[n * D + d];
                                 for (std::size_t d = 0; d < D; ++d) {
                                   in.grad[n * D + d] +=
                                       f * (self.grad[n * D + d] - self.data[n * D + d] * dot) / norms[n];
                                 }
                               }
                             });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw ShapeError("mse: empty operands");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double n = static_cast<double>(a.numel());
  return detail::make_result({}, {s / n}, "mse", {a.impl(), b.impl()}, [n](TensorImpl& self) {
    const double g = self.grad[0] * fault("mse") * 2.0 / n;
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < A.data.size(); ++i) {
      const double d = g * (A.data[i] - B.data[i]);
      if (A.requires_grad) A.grad[i] += d;
      if (B.requires_grad) B.grad[i] -= d;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.dim() != 1 && logits.dim() != 2) throw ShapeError("cross_entropy: logits must be [K] or [N,K]");
  const std::size_t K = logits.shape().back();
  const std::size_t N = logits.numel() / K;
  if (labels.size() != N) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) + " rows");
  }
  std::vector<double> probs(logits.numel());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= K) throw ShapeError("cross_entropy: label out of range");
    const double* row = logits.data().data() + n * K;
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double log_z = mx + std::log(z);
    loss += log_z - row[labels[n]];
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - log_z);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return detail::make_result(
      {}, {loss / static_cast<double>(N)}, "cross_entropy", {logits.impl()},
      [N, K, probs = std::move(probs), lab = std::move(lab)](TensorImpl& self) {
        const double g = self.grad[0] * fault("cross_entropy") / static_cast<double>(N);
        auto& in = *self.inputs[0];
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k)
            in.grad[n * K + k] += g * (probs[n * K + k] - (k == lab[n] ? 1.0 : 0.0));
      });
}

}  // namespace cdikt
