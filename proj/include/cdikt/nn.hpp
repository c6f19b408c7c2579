#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cdikt/rng.hpp"
#include "cdikt/tensor.hpp"

namespace cdikt {

enum class Init { kZeros, kOnes, kUniformFanIn };

// Named trainable tensors in registration order.
class ParameterStore {
 public:
  // kUniformFanIn draws from U(-sqrt(1/fan_in), sqrt(1/fan_in)).
  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng, std::size_t fan_in = 1);
  void add_existing(const std::string& name, Tensor tensor);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Freezes (or unfreezes) every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool trainable);
  // Overwrites values from another store with identical names and shapes.
  void copy_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Consumes the accumulated grads of every trainable parameter.
  virtual void step(ParameterStore& params) = 0;
  virtual double learning_rate() const = 0;
};

// Adam with decoupled weight decay.
class AdamW final : public Optimizer {
 public:
  explicit AdamW(double lr, double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterStore& params) override;
  double learning_rate() const override { return lr_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParameterStore& params) override;
  double learning_rate() const override { return lr_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::unordered_map<std::string, std::vector<double>> velocity_;
};

}  // namespace cdikt
