#pragma once

#include <vector>

#include "cdikt/rng.hpp"
#include "cdikt/tensor.hpp"

namespace cdikt::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace cdikt::testing
