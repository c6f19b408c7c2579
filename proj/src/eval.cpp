#include "cdikt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cdikt {

std::string direction_name(Direction d) { return d == Direction::kDroneToSatellite ? "d2s" : "s2d"; }

Direction parse_direction(const std::string& name) {
  if (name == "d2s") return Direction::kDroneToSatellite;
  if (name == "s2d") return Direction::kSatelliteToDrone;
  throw std::invalid_argument("direction must be d2s or s2d, got '" + name + "'");
}

RetrievalResult rank_gallery(std::span<const Embedding> queries, std::span<const Embedding> gallery,
                             Direction direction) {
  if (gallery.empty()) throw std::invalid_argument("rank_gallery: empty gallery");
  const std::size_t dim = gallery.front().vector.size();
  std::vector<std::size_t> by_id(gallery.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::stable_sort(by_id.begin(), by_id.end(),
                   [&](std::size_t a, std::size_t b) { return gallery[a].id < gallery[b].id; });

  RetrievalResult out;
  out.direction = direction;
  out.rankings.reserve(queries.size());
  std::vector<double> sims(gallery.size());
  for (const auto& q : queries) {
    if (q.vector.size() != dim) throw std::invalid_argument("rank_gallery: dimension mismatch");
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += q.vector[d] * gallery[g].vector[d];
      sims[g] = s;
    }
    Ranking r;
    r.order = by_id;
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    r.scores.reserve(r.order.size());
    for (auto g : r.order) r.scores.push_back(sims[g]);
    out.rankings.push_back(std::move(r));
  }
  return out;
}

Relevance relevance_by_location(std::span<const Embedding> queries, std::span<const Embedding> gallery) {
  Relevance rel(queries.size(), std::vector<bool>(gallery.size(), false));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (!queries[q].location) throw std::invalid_argument("query '" + queries[q].id + "' has no location");
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (!gallery[g].location) throw std::invalid_argument("gallery '" + gallery[g].id + "' has no location");
      rel[q][g] = *queries[q].location == *gallery[g].location;
    }
  }
  return rel;
}

double recall_at_k(const RetrievalResult& result, const Relevance& relevant, std::size_t k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: K must be at least 1");
  if (result.rankings.empty()) throw std::invalid_argument("recall_at_k: no queries");
  if (relevant.size() != result.rankings.size()) throw std::invalid_argument("recall_at_k: relevance size mismatch");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < result.rankings.size(); ++q) {
    const auto& rel = relevant[q];
    if (std::find(rel.begin(), rel.end(), true) == rel.end()) {
      throw std::invalid_argument("recall_at_k: query " + std::to_string(q) + " has no relevant item");
    }
    const auto& order = result.rankings[q].order;
    const std::size_t top = std::min(k, order.size());
    for (std::size_t r = 0; r < top; ++r) {
      if (rel[order[r]]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(result.rankings.size());
}

ApReport average_precision(const RetrievalResult& result, const Relevance& relevant) {
  if (relevant.size() != result.rankings.size()) throw std::invalid_argument("average_precision: relevance size mismatch");
  ApReport rep;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t q = 0; q < result.rankings.size(); ++q) {
    const auto& order = result.rankings[q].order;
    std::size_t found = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (!relevant[q][order[r]]) continue;
      ++found;
      precision_sum += static_cast<double>(found) / static_cast<double>(r + 1);
    }
    if (found == 0) {
      rep.per_query.push_back(std::numeric_limits<double>::quiet_NaN());
      ++rep.excluded;
      continue;
    }
    const double ap = precision_sum / static_cast<double>(found);
    rep.per_query.push_back(ap);
    total += ap;
    ++counted;
  }
  rep.mean = counted ? total / static_cast<double>(counted) : 0.0;
  return rep;
}

OverlapReport similarity_overlap(std::span<const double> positives, std::span<const double> negatives,
                                 std::size_t bins) {
  if (positives.empty() || negatives.empty()) throw std::invalid_argument("similarity_overlap: need positives and negatives");
  if (bins < 10) throw std::invalid_argument("similarity_overlap: at least 10 bins");
  OverlapReport rep;
  rep.bins = bins;
  rep.bin_width = 2.0 / static_cast<double>(bins);
  auto density = [&](std::span<const double> xs) {
    std::vector<double> h(bins, 0.0);
    for (double x : xs) {
      const double clamped = std::clamp(x, -1.0, 1.0);
      auto b = static_cast<std::size_t>((clamped + 1.0) / rep.bin_width);
      h[std::min(b, bins - 1)] += 1.0;
    }
    for (double& v : h) v /= static_cast<double>(xs.size()) * rep.bin_width;
    return h;
  };
  rep.positive_density = density(positives);
  rep.negative_density = density(negatives);
  double ov = 0.0;
  for (std::size_t b = 0; b < bins; ++b) ov += std::min(rep.positive_density[b], rep.negative_density[b]);
  rep.overlap = std::clamp(ov * rep.bin_width, 0.0, 1.0);
  return rep;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

PairSimilarities sample_pair_similarities(std::span<const Embedding> queries,
                                          std::span<const Embedding> gallery, const Relevance& relevant,
                                          Rng& rng) {
  PairSimilarities out;
  std::size_t negatives_available = 0;
  for (std::size_t q = 0; q < queries.size(); ++q)
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (relevant[q][g]) {
        out.positives.push_back(dot(queries[q].vector, gallery[g].vector));
      } else {
        ++negatives_available;
      }
    }
  if (negatives_available == 0) return out;
  while (out.negatives.size() < out.positives.size()) {
    const std::size_t q = rng.below(queries.size());
    const std::size_t g = rng.below(gallery.size());
    if (relevant[q][g]) continue;
    out.negatives.push_back(dot(queries[q].vector, gallery[g].vector));
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j{{"direction", direction_name(direction)},
                   {"queries", queries},
                   {"gallery", gallery},
                   {"R@1", r1},
                   {"R@5", r5},
                   {"R@10", r10},
                   {"AP", ap},
                   {"overlap", overlap}};
  return j.dump();
}

MetricsReport evaluate_retrieval(std::span<const Embedding> queries, std::span<const Embedding> gallery,
                                 Direction direction, std::uint64_t seed) {
  Relevance all = relevance_by_location(queries, gallery);
  std::vector<Embedding> kept;
  Relevance rel;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (std::find(all[q].begin(), all[q].end(), true) == all[q].end()) continue;
    kept.push_back(queries[q]);
    rel.push_back(all[q]);
  }
  if (kept.empty()) throw std::invalid_argument("evaluate_retrieval: no query has a match in the gallery");
  const auto result = rank_gallery(kept, gallery, direction);
  MetricsReport rep;
  rep.direction = direction;
  rep.queries = kept.size();
  rep.gallery = gallery.size();
  rep.r1 = recall_at_k(result, rel, 1);
  rep.r5 = recall_at_k(result, rel, 5);
  rep.r10 = recall_at_k(result, rel, 10);
  rep.ap = average_precision(result, rel).mean;
  Rng rng(seed);
  const auto sims = sample_pair_similarities(kept, gallery, rel, rng);
  rep.overlap = sims.negatives.empty() ? std::numeric_limits<double>::quiet_NaN() : similarity_overlap(sims.positives, sims.negatives).overlap;
  return rep;
}

}  // namespace cdikt
