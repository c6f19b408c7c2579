#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cdikt/tensor.hpp"

namespace cdikt {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // When set, only this many coordinates (drawn with `seed`) are probed per tensor.
  std::optional<std::size_t> samples;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_tensor;
  bool passed = true;
};

// Central-difference check of d f / d params. `f` must be deterministic and
// read the parameters' current values; the parameters are perturbed in place
// and restored afterwards.
GradCheckReport check_parameters(const std::function<Tensor()>& f,
                                 const std::vector<std::pair<std::string, Tensor>>& params,
                                 const GradCheckOptions& options = {});

// Same check for a function of one input tensor.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  const GradCheckOptions& options = {});

}  // namespace cdikt
