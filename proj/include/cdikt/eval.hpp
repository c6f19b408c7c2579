#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cdikt/cluster.hpp"
#include "cdikt/rng.hpp"

namespace cdikt {

enum class Direction { kDroneToSatellite, kSatelliteToDrone };

std::string direction_name(Direction d);  // "d2s" / "s2d"
Direction parse_direction(const std::string& name);

struct Ranking {
  std::vector<std::size_t> order;  // gallery indices, best first
  std::vector<double> scores;      // similarity at each rank, non-increasing
};

struct RetrievalResult {
  Direction direction = Direction::kDroneToSatellite;
  std::vector<Ranking> rankings;  // one per query
};

// relevant[q][g] is true when gallery item g matches query q.
using Relevance = std::vector<std::vector<bool>>;

// Dot-product similarity, descending; equal scores keep gallery id order.
RetrievalResult rank_gallery(std::span<const Embedding> queries, std::span<const Embedding> gallery,
                             Direction direction = Direction::kDroneToSatellite);

// Matches by location tag; every record must carry one.
Relevance relevance_by_location(std::span<const Embedding> queries, std::span<const Embedding> gallery);

double recall_at_k(const RetrievalResult& result, const Relevance& relevant, std::size_t k);

struct ApReport {
  std::vector<double> per_query;  // NaN for excluded queries
  double mean = 0.0;
  std::size_t excluded = 0;  // queries without any relevant item
};

ApReport average_precision(const RetrievalResult& result, const Relevance& relevant);

struct OverlapReport {
  std::size_t bins = 0;
  double bin_width = 0.0;
  std::vector<double> positive_density;  // integrates to 1 over [-1, 1]
  std::vector<double> negative_density;
  double overlap = 0.0;
};

inline constexpr std::size_t kOverlapBins = 100;

OverlapReport similarity_overlap(std::span<const double> positives, std::span<const double> negatives,
                                 std::size_t bins = kOverlapBins);

struct PairSimilarities {
  std::vector<double> positives;
  std::vector<double> negatives;
};

// Similarities of every matching cross-view pair and of an equally sized
// uniform sample of non-matching pairs.
PairSimilarities sample_pair_similarities(std::span<const Embedding> queries,
                                          std::span<const Embedding> gallery, const Relevance& relevant,
                                          Rng& rng);

struct MetricsReport {
  Direction direction = Direction::kDroneToSatellite;
  std::size_t queries = 0;
  std::size_t gallery = 0;
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
  double ap = 0.0;
  double overlap = 0.0;

  std::string to_json() const;
};

// Full report for one direction; queries without a match are dropped first.
MetricsReport evaluate_retrieval(std::span<const Embedding> queries, std::span<const Embedding> gallery,
                                 Direction direction, std::uint64_t seed);

}  // namespace cdikt
