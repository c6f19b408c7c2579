#include "cdikt/memory.hpp"

#include <cmath>
#include <string>

#include "cdikt/ops.hpp"

namespace cdikt {

void normalize_in_place(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) throw std::invalid_argument("normalize: zero vector");
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

std::span<const double> ClusterMemory::centroid(std::size_t k) const {
  if (k >= count) throw std::out_of_range("cluster id " + std::to_string(k) + " >= " + std::to_string(count));
  return std::span<const double>(centroids).subspan(k * dim, dim);
}

Tensor ClusterMemory::as_tensor() const { return Tensor({count, dim}, centroids); }

ClusterMemory build_memory(View view, std::span<const std::vector<double>> embeddings,
                           const ClusterAssignment& assignment, double momentum) {
  if (assignment.labels.size() != embeddings.size()) {
    throw std::invalid_argument("build_memory: assignment does not match embeddings");
  }
  if (momentum < 0.0 || momentum > 1.0) throw std::invalid_argument("build_memory: momentum outside [0,1]");
  if (assignment.cluster_count == 0) throw CollapseError("clustering collapse: no non-noise clusters");
  ClusterMemory m;
  m.view = view;
  m.count = assignment.cluster_count;
  m.dim = embeddings.front().size();
  m.momentum = momentum;
  m.centroids.assign(m.count * m.dim, 0.0);
  std::vector<std::size_t> members(m.count, 0);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const int l = assignment.labels[i];
    if (l == kNoise) continue;
    const auto k = static_cast<std::size_t>(l);
    if (embeddings[i].size() != m.dim) throw std::invalid_argument("build_memory: ragged embeddings");
    for (std::size_t d = 0; d < m.dim; ++d) m.centroids[k * m.dim + d] += embeddings[i][d];
    ++members[k];
  }
  for (std::size_t k = 0; k < m.count; ++k) {
    if (members[k] == 0) throw std::invalid_argument("build_memory: empty cluster " + std::to_string(k));
    std::span<double> row(m.centroids.data() + k * m.dim, m.dim);
    for (double& x : row) x /= static_cast<double>(members[k]);
    normalize_in_place(row);
  }
  return m;
}

std::vector<double> momentum_blend(std::span<const double> centroid, std::span<const double> query,
                                   double alpha) {
  if (centroid.size() != query.size()) throw std::invalid_argument("momentum_blend: dimension mismatch");
  std::vector<double> out(centroid.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * centroid[i] + (1.0 - alpha) * query[i];
  return out;
}

void momentum_update(ClusterMemory& memory, std::size_t cluster, std::span<const double> query) {
  auto blended = momentum_blend(memory.centroid(cluster), query, memory.momentum);
  double ss = 0.0;
  for (double x : blended) ss += x * x;
  // An exactly antipodal query with alpha 0.5 cancels the centroid; the
  // query is the only direction left.
  if (ss == 0.0) blended.assign(query.begin(), query.end());
  normalize_in_place(blended);
  std::copy(blended.begin(), blended.end(), memory.centroids.begin() + cluster * memory.dim);
  ++memory.iteration;
}

Tensor contrastive_loss(const Tensor& queries, const ClusterMemory& memory,
                        std::span<const std::size_t> positives, double temperature) {
  if (memory.count == 0) throw CollapseError("contrastive_loss: memory has no centroids");
  if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  for (auto p : positives) {
    if (p >= memory.count) throw std::out_of_range("contrastive_loss: positive id out of range");
  }
  Tensor q = queries.dim() == 1 ? reshape(queries, {1, queries.numel()}) : queries;
  if (q.shape()[1] != memory.dim) throw ShapeError("contrastive_loss: query dimension mismatch");
  Tensor sims = matmul(q, Tensor({memory.dim, memory.count}, [&] {
                         std::vector<double> t(memory.dim * memory.count);
                         for (std::size_t k = 0; k < memory.count; ++k)
                           for (std::size_t d = 0; d < memory.dim; ++d)
                             t[d * memory.count + k] = memory.centroids[k * memory.dim + d];
                         return t;
                       }()));
  return cross_entropy(scale(sims, 1.0 / temperature), positives);
}

}  // namespace cdikt
