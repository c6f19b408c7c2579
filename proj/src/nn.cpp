#include "cdikt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace cdikt {

Tensor ParameterStore::add(const std::string& name, Shape shape, Init init, Rng& rng,
                           std::size_t fan_in) {
  Tensor t(std::move(shape), 0.0, true);
  auto values = t.mutable_data();
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::kUniformFanIn: {
      const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
      for (auto& v : values) v = rng.uniform(-bound, bound);
      break;
    }
  }
  add_existing(name, t);
  return t;
}

void ParameterStore::add_existing(const std::string& name, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(tensor));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return items_[it->second].second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, t] : items_) {
    if (name.rfind(prefix, 0) == 0) t.set_requires_grad(trainable);
  }
}

void ParameterStore::copy_from(const ParameterStore& other) {
  for (auto& [name, t] : items_) {
    const Tensor& src = other.get(name);
    if (src.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "': shape " + shape_str(src.shape()) + " vs " +
                       shape_str(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

void AdamW::step(ParameterStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, p] : params.items()) {
    Tensor t = p;
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    auto w = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr_ * weight_decay_ * w[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Sgd::step(ParameterStore& params) {
  for (const auto& [name, p] : params.items()) {
    Tensor t = p;
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto w = t.mutable_data();
    auto g = t.grad();
    if (momentum_ == 0.0) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * (g[i] + weight_decay_ * w[i]);
      continue;
    }
    auto& vel = velocity_[name];
    if (vel.empty()) vel.assign(t.numel(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * w[i];
      w[i] -= lr_ * vel[i];
    }
  }
}

}  // namespace cdikt
