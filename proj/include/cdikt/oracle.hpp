#pragma once

// Slow reference implementations used by the self-check batteries and the
// tests. They trade speed for being obviously correct.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cdikt/cluster.hpp"

namespace cdikt::oracle {

// Core points joined by union-find, clusters numbered by their lowest core
// index, each border point given to the earliest-numbered adjacent cluster.
ClusterAssignment reference_dbscan(std::span<const std::vector<double>> points, double eps,
                                   std::size_t min_samples);

// True when both label vectors induce the same partition and noise set.
bool same_partition(std::span<const int> a, std::span<const int> b);

// Recall@K and AP by walking every rank position of an explicit ordering.
double enumerated_recall(const std::vector<std::vector<std::size_t>>& orderings,
                         const std::vector<std::vector<bool>>& relevant, std::size_t k);
double enumerated_ap(const std::vector<std::size_t>& ordering, const std::vector<bool>& relevant);

// Integral over [lo, hi] of min(p(x), q(x)) by the composite midpoint rule.
double overlap_integral(const std::function<double(double)>& p, const std::function<double(double)>& q,
                        double lo, double hi, std::size_t steps = 200000);

}  // namespace cdikt::oracle
