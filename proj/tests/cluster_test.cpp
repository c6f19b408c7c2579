#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "cdikt/cluster.hpp"
#include "cdikt/oracle.hpp"
#include "cdikt/rng.hpp"

using namespace cdikt;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  for (double& x : v) x /= std::sqrt(ss);
  return v;
}

// Points scattered around a few random directions plus roughly 15% uniform
// outliers, so that clusters, borders and noise all occur.
std::vector<std::vector<double>> blobs(Rng& rng, std::size_t n, std::size_t dim, std::size_t centers, double spread) {
  std::vector<std::vector<double>> c(centers, std::vector<double>(dim));
  for (auto& v : c)
    for (double& x : v) x = rng.normal();
  std::vector<std::vector<double>> pts;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p = c[rng.below(centers)];
    const bool outlier = rng.uniform() < 0.15;
    for (double& x : p) x = outlier ? rng.normal() : x + spread * rng.normal();
    pts.push_back(unit(p));
  }
  return pts;
}

}  // namespace

TEST(Dbscan, EmptyInputGivesEmptyAssignment) {
  std::vector<std::vector<double>> none;
  auto a = dbscan(std::span<const std::vector<double>>(none), DbscanParams{});
  EXPECT_TRUE(a.labels.empty());
  EXPECT_EQ(a.cluster_count, 0u);
}

TEST(Dbscan, FourIdenticalVectorsFormOneCluster) {
  std::vector<std::vector<double>> pts(4, unit({1.0, 2.0, 3.0}));
  auto a = dbscan(std::span<const std::vector<double>>(pts), DbscanParams{0.40, 4});
  EXPECT_EQ(a.cluster_count, 1u);
  EXPECT_EQ(a.labels, (std::vector<int>{0, 0, 0, 0}));
}

TEST(Dbscan, ThreeIdenticalVectorsAreNoiseAtMinSamplesFour) {
  std::vector<std::vector<double>> pts(3, unit({1.0, 0.0}));
  auto a = dbscan(std::span<const std::vector<double>>(pts), DbscanParams{0.40, 4});
  EXPECT_EQ(a.cluster_count, 0u);
  EXPECT_EQ(a.noise_count(), 3u);
}

TEST(Dbscan, ZeroRadiusIsAllNoise) {
  std::vector<std::vector<double>> pts(5, unit({1.0, 1.0}));
  auto a = dbscan(std::span<const std::vector<double>>(pts), DbscanParams{0.0, 1});
  EXPECT_EQ(a.noise_count(), 5u);
}

TEST(Dbscan, RejectsBadParameters) {
  std::vector<std::vector<double>> pts(2, unit({1.0, 1.0}));
  std::span<const std::vector<double>> s(pts);
  EXPECT_THROW(dbscan(s, DbscanParams{-0.1, 4}), std::invalid_argument);
  EXPECT_THROW(dbscan(s, DbscanParams{0.3, 0}), std::invalid_argument);
}

TEST(Dbscan, BorderPointGoesToFirstCluster) {
  // Angles in degrees on the unit circle. Two dense groups with a bridge
  // point reachable from both but core for neither.
  auto at = [](double deg) {
    const double r = deg * M_PI / 180.0;
    return std::vector<double>{std::cos(r), std::sin(r)};
  };
  std::vector<std::vector<double>> pts{at(0), at(1), at(2), at(20), at(38), at(39), at(40)};
  const double eps = 1.0 - std::cos(18.5 * M_PI / 180.0);
  auto a = dbscan(std::span<const std::vector<double>>(pts), DbscanParams{eps, 4});
  ASSERT_EQ(a.cluster_count, 2u);
  EXPECT_EQ(a.labels[3], 0);
  EXPECT_EQ(a.labels[4], 1);
  // Reversed scan order hands the border to the other group.
  std::vector<std::vector<double>> rev(pts.rbegin(), pts.rend());
  auto b = dbscan(std::span<const std::vector<double>>(rev), DbscanParams{eps, 4});
  EXPECT_EQ(b.labels[3], 0);
  EXPECT_EQ(b.labels[0], 0);
}

TEST(Dbscan, MatchesBruteForceOracleOnRandomInstances) {
  Rng rng(2024);
  int checked = 0, multi_cluster = 0, with_noise = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    const std::size_t dim = 2 + rng.below(31);
    const double eps = trial % 3 == 0 ? 0.30 : trial % 3 == 1 ? 0.40 : rng.uniform(0.02, 0.6);
    const std::size_t min_samples = trial % 2 == 0 ? 4 : 1 + rng.below(6);
    auto pts = blobs(rng, n, dim, 1 + rng.below(5), rng.uniform(0.05, 0.8));
    std::span<const std::vector<double>> s(pts);
    auto got = dbscan(s, DbscanParams{eps, min_samples});
    auto want = oracle::reference_dbscan(s, eps, min_samples);
    ASSERT_TRUE(oracle::same_partition(got.labels, want.labels)) << "trial " << trial;
    ASSERT_EQ(got.cluster_count, want.cluster_count);
    ++checked;
    multi_cluster += got.cluster_count >= 2 ? 1 : 0;
    with_noise += got.noise_count() > 0 && got.cluster_count > 0 ? 1 : 0;
  }
  EXPECT_EQ(checked, 200);
  // The instances must exercise the interesting regimes, not just all-noise.
  EXPECT_GE(multi_cluster, 40);
  EXPECT_GE(with_noise, 40);
}

TEST(Dbscan, LabelsAreWellFormed) {
  Rng rng(5);
  auto pts = blobs(rng, 150, 8, 4, 0.3);
  auto a = dbscan(std::span<const std::vector<double>>(pts), DbscanParams{0.3, 4});
  std::vector<std::size_t> sizes(a.cluster_count, 0);
  for (int l : a.labels) {
    ASSERT_GE(l, kNoise);
    ASSERT_LT(l, static_cast<int>(a.cluster_count));
    if (l != kNoise) ++sizes[static_cast<std::size_t>(l)];
  }
  for (auto s : sizes) EXPECT_GE(s, 4u);
}

TEST(Dbscan, PermutationOnlyRelabelsWhenBordersAreUnambiguous) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    // Tight, well separated blobs leave no point in reach of two clusters.
    auto pts = blobs(rng, 60, 6, 3, 0.02);
    std::span<const std::vector<double>> s(pts);
    auto base = dbscan(s, DbscanParams{0.05, 4});
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<std::vector<double>> shuffled;
    for (auto i : perm) shuffled.push_back(pts[i]);
    auto moved = dbscan(std::span<const std::vector<double>>(shuffled), DbscanParams{0.05, 4});
    std::vector<int> back(pts.size());
    for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = moved.labels[i];
    EXPECT_TRUE(oracle::same_partition(base.labels, back));
  }
}

TEST(Dbscan, ShrinkingRadiusNeverReducesNoise) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto pts = blobs(rng, 120, 4, 3, 0.4);
    std::span<const std::vector<double>> s(pts);
    std::size_t previous = 0;
    for (double eps : {0.8, 0.6, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01}) {
      const std::size_t noise = dbscan(s, DbscanParams{eps, 4}).noise_count();
      EXPECT_GE(noise, previous) << "eps " << eps;
      previous = noise;
    }
  }
}

TEST(Purity, PerfectClusteringIsOne) {
  ClusterAssignment a{{0, 0, 1, 1, kNoise}, 2};
  std::vector<std::size_t> loc{3, 3, 5, 5, 9};
  auto r = purity(a, loc);
  EXPECT_DOUBLE_EQ(r.purity, 1.0);
  EXPECT_FALSE(r.all_noise);
}

TEST(Purity, HalfMixedClustersGiveOneHalf) {
  ClusterAssignment a{{0, 0, 0, 0, 1, 1, 1, 1}, 2};
  std::vector<std::size_t> loc{0, 0, 1, 1, 0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(purity(a, loc).purity, 0.5);
}

TEST(Purity, AllNoiseIsFlagged) {
  ClusterAssignment a{{kNoise, kNoise}, 0};
  std::vector<std::size_t> loc{0, 1};
  auto r = purity(a, loc);
  EXPECT_EQ(r.purity, 0.0);
  EXPECT_TRUE(r.all_noise);
}

TEST(Purity, RandomAssignmentOnFourLocationsIsNearQuarter) {
  Rng rng(8);
  double total = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    // Few large clusters; many small ones would inflate the majority term.
    ClusterAssignment a;
    a.cluster_count = 4;
    std::vector<std::size_t> loc;
    for (int i = 0; i < 400; ++i) {
      loc.push_back(static_cast<std::size_t>(i % 4));
      a.labels.push_back(static_cast<int>(rng.below(4)));
    }
    const double p = purity(a, loc).purity;
    EXPECT_NEAR(p, 0.25, 0.1);
    total += p;
  }
  EXPECT_NEAR(total / 50.0, 0.25, 0.1);
}

TEST(EmbeddingFile, RoundTripIsBitExact) {
  Rng rng(9);
  EmbeddingFile f;
  f.dim = 5;
  f.view_tag = "mixed";
  for (int i = 0; i < 7; ++i) {
    Embedding e;
    e.id = "img" + std::to_string(i);
    e.view = i % 2 ? View::kSatellite : View::kDrone;
    if (i % 3) e.location = "loc" + std::to_string(i % 3);
    std::vector<double> v(5);
    for (double& x : v) x = rng.normal();
    e.vector = unit(v);
    f.records.push_back(e);
  }
  auto path = std::filesystem::temp_directory_path() / "cdikt_embed_roundtrip.txt";
  write_embeddings(path, f);
  auto g = read_embeddings(path);
  std::filesystem::remove(path);
  ASSERT_EQ(g.records.size(), f.records.size());
  EXPECT_EQ(g.dim, 5u);
  EXPECT_EQ(g.view_tag, "mixed");
  for (std::size_t i = 0; i < f.records.size(); ++i) {
    EXPECT_EQ(g.records[i].id, f.records[i].id);
    EXPECT_EQ(g.records[i].view, f.records[i].view);
    EXPECT_EQ(g.records[i].location, f.records[i].location);
    EXPECT_EQ(g.records[i].vector, f.records[i].vector);
  }
}

TEST(EmbeddingFile, HeaderOnlyForEmptySet) {
  EmbeddingFile f;
  f.dim = 3;
  f.view_tag = "d";
  EXPECT_EQ(format_embeddings(f), "3 0 d\n");
  EXPECT_TRUE(parse_embeddings("3 0 d\n").records.empty());
}

TEST(EmbeddingFile, ParseErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_embeddings(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of(""), 1u);
  EXPECT_EQ(line_of("2 1\n"), 1u);
  EXPECT_EQ(line_of("2 2 d\na d - 1 0\nb d - 1 zero\n"), 3u);
  EXPECT_EQ(line_of("2 1 d\na d - 1 0 5\n"), 2u);
  EXPECT_EQ(line_of("2 1 d\na q - 1 0\n"), 2u);
  EXPECT_EQ(line_of("2 2 d\na d - 1 0\n"), 2u);
}
