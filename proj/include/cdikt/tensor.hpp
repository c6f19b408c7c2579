#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cdikt {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

// Node of the recorded computation. A non-leaf owns its inputs and a closure
// that reads its own grad and accumulates into the inputs' grads.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<ImplPtr> inputs;
  std::function<void(TensorImpl&)> backward_fn;
  std::uint64_t id = 0;

  void accumulate_grad(std::size_t i, double g) {
    ensure_grad();
    grad[i] += g;
  }
  std::span<double> grad_buffer() {
    ensure_grad();
    return grad;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Leaves only: parameters are updated in place by optimizers.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return !impl_->backward_fn; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  std::string_view op() const { return impl_->op; }
  std::uint64_t id() const { return impl_->id; }

  // Copy of the values with no graph history.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Throws ShapeError for non-scalars.
  void backward() const;

  const ImplPtr& impl() const { return impl_; }

 private:
  ImplPtr impl_;
};

// Thread-local switch; while disabled no op records history.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct OpNode {
  std::string_view op;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output;
};

// Topologically ordered record of the primitive applications behind `root`.
struct OpGraph {
  std::vector<OpNode> nodes;
};

OpGraph trace(const Tensor& root);

namespace detail {

std::uint64_t next_tensor_id();

// Builds an op result; history is attached only when grad mode is on and
// some input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::string_view op,
                   std::vector<ImplPtr> inputs,
                   std::function<void(TensorImpl&)> backward_fn);

}  // namespace detail

}  // namespace cdikt
