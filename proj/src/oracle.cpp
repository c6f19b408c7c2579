#include "cdikt/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace cdikt::oracle {

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void join(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

bool within(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / std::sqrt(na * nb) <= eps;
}

}  // namespace

ClusterAssignment reference_dbscan(std::span<const std::vector<double>> points, double eps,
                                   std::size_t min_samples) {
  const std::size_t n = points.size();
  ClusterAssignment out;
  out.labels.assign(n, kNoise);
  if (n == 0 || eps == 0.0) return out;
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) adj[i][j] = (i == j) || within(points[i], points[j], eps);
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    core[i] = static_cast<std::size_t>(std::count(adj[i].begin(), adj[i].end(), true)) >= min_samples;
  }
  DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (core[i] && core[j] && adj[i][j]) sets.join(i, j);
  // Union-find roots are the smallest member, so scanning i upwards numbers
  // clusters by lowest core index.
  std::map<std::size_t, int> cluster_of_root;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    auto root = sets.find(i);
    if (!cluster_of_root.count(root)) {
      const int id = static_cast<int>(cluster_of_root.size());
      cluster_of_root[root] = id;
    }
    out.labels[i] = cluster_of_root[root];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    int best = kNoise;
    for (std::size_t j = 0; j < n; ++j) {
      if (!core[j] || !adj[i][j]) continue;
      const int c = out.labels[j];
      if (best == kNoise || c < best) best = c;
    }
    out.labels[i] = best;
  }
  out.cluster_count = cluster_of_root.size();
  return out;
}

bool same_partition(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, back;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == kNoise) != (b[i] == kNoise)) return false;
    if (a[i] == kNoise) continue;
    auto [f, f_new] = fwd.emplace(a[i], b[i]);
    auto [r, r_new] = back.emplace(b[i], a[i]);
    if (f->second != b[i] || r->second != a[i]) return false;
  }
  return true;
}

double enumerated_recall(const std::vector<std::vector<std::size_t>>& orderings,
                         const std::vector<std::vector<bool>>& relevant, std::size_t k) {
  if (orderings.empty()) throw std::invalid_argument("enumerated_recall: no queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < orderings.size(); ++q) {
    bool hit = false;
    for (std::size_t r = 0; r < orderings[q].size(); ++r) {
      if (r < k && relevant[q][orderings[q][r]]) hit = true;
    }
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(orderings.size());
}

double enumerated_ap(const std::vector<std::size_t>& ordering, const std::vector<bool>& relevant) {
  double total = 0.0;
  std::size_t found = 0;
  for (std::size_t r = 0; r < ordering.size(); ++r) {
    if (!relevant[ordering[r]]) continue;
    std::size_t relevant_so_far = 0;
    for (std::size_t s = 0; s <= r; ++s) relevant_so_far += relevant[ordering[s]] ? 1 : 0;
    total += static_cast<double>(relevant_so_far) / static_cast<double>(r + 1);
    ++found;
  }
  if (found == 0) throw std::invalid_argument("enumerated_ap: no relevant items");
  return total / static_cast<double>(found);
}

double overlap_integral(const std::function<double(double)>& p, const std::function<double(double)>& q,
                        double lo, double hi, std::size_t steps) {
  const double h = (hi - lo) / static_cast<double>(steps);
  double acc = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double x = lo + (static_cast<double>(i) + 0.5) * h;
    acc += std::min(p(x), q(x));
  }
  return acc * h;
}

}  // namespace cdikt::oracle
