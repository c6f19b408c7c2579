#include "cdikt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdikt/rng.hpp"

namespace cdikt {

GradCheckReport check_parameters(const std::function<Tensor()>& f,
                                 const std::vector<std::pair<std::string, Tensor>>& params,
                                 const GradCheckOptions& options) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  Tensor loss = f();
  loss.backward();

  GradCheckReport report;
  Rng rng(options.seed);
  for (const auto& [name, p] : params) {
    Tensor t = p;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.samples && *options.samples < coords.size()) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(*options.samples);
    }
    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f().item();
      values[i] = saved - options.step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = name;
      }
    }
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  const GradCheckOptions& options) {
  Tensor leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  return check_parameters([&] { return f(leaf); }, {{"x", leaf}}, options);
}

}  // namespace cdikt
