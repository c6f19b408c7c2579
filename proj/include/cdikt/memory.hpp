#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cdikt/cdis.hpp"
#include "cdikt/cluster.hpp"
#include "cdikt/tensor.hpp"

namespace cdikt {

// Raised when a clustering pass yields no usable cluster.
class CollapseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultMomentum = 0.1;
inline constexpr double kDefaultMemoryTemperature = 0.05;

// Per-view cluster prototypes, unit norm, updated only by momentum.
struct ClusterMemory {
  View view = View::kDrone;
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // row-major [count, dim]
  double momentum = kDefaultMomentum;
  std::uint64_t iteration = 0;

  std::span<const double> centroid(std::size_t k) const;
  // Constant [count, dim] snapshot; never receives gradient.
  Tensor as_tensor() const;
};

// Centroid of every non-noise cluster, then unit-normalized.
ClusterMemory build_memory(View view, std::span<const std::vector<double>> embeddings,
                           const ClusterAssignment& assignment, double momentum = kDefaultMomentum);

// alpha * centroid + (1 - alpha) * query, before normalization.
std::vector<double> momentum_blend(std::span<const double> centroid, std::span<const double> query,
                                   double alpha);

// Blends, renormalizes and advances the iteration counter.
void momentum_update(ClusterMemory& memory, std::size_t cluster, std::span<const double> query);

// Mean over the batch of -log softmax(q . centroids / temperature)[positive].
// queries is [B, dim] (or [dim] with one positive).
Tensor contrastive_loss(const Tensor& queries, const ClusterMemory& memory,
                        std::span<const std::size_t> positives, double temperature);

void normalize_in_place(std::span<double> v);

}  // namespace cdikt
