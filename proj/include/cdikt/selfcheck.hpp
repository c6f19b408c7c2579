#pragma once

// Oracle batteries shared by the `selfcheck` command and the acceptance run.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cdikt {

struct SuiteReport {
  std::string name;
  std::size_t trials = 0;
  std::vector<std::string> failures;  // one line per failed trial, naming the case
  double seconds = 0.0;

  bool passed() const { return trials > 0 && failures.empty(); }
};

// Finite-difference checks of every primitive (cases named after the op) and
// every network block, repeated over `seeds` seeds.
SuiteReport gradient_suite(std::uint64_t seed = 0, std::size_t seeds = 5);

// Clustering against the brute-force reference on random point clouds.
SuiteReport dbscan_suite(std::uint64_t seed = 0, std::size_t instances = 200);

// Momentum blend arithmetic and long-run norm preservation.
SuiteReport memory_suite(std::uint64_t seed = 0);

// Closed-form values of the memory contrastive loss.
SuiteReport contrastive_suite();

// Recall@K and AP against rank enumeration, plus analytic AP values.
SuiteReport metric_suite(std::uint64_t seed = 0, std::size_t instances = 50);

// Histogram overlap against numeric integration of known densities.
SuiteReport overlap_suite(std::uint64_t seed = 0);

std::vector<SuiteReport> run_selfcheck(std::uint64_t seed = 0);

std::string format_report(const SuiteReport& report);

}  // namespace cdikt
