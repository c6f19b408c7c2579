#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdikt/cdis.hpp"

namespace cdikt {

// Malformed text input; carries the 1-based line that failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Embedding {
  std::string id;
  View view = View::kDrone;
  std::vector<double> vector;           // unit norm
  std::optional<std::string> location;  // present only when the source exposes it
};

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // kNoise or 0..cluster_count-1
  std::size_t cluster_count = 0;

  std::size_t noise_count() const;
};

struct DbscanParams {
  double eps = 0.40;  // cosine distance radius; 0 means an empty radius (all noise)
  std::size_t min_samples = 4;
};

inline constexpr double kDroneEps = 0.40;
inline constexpr double kSatelliteEps = 0.30;

double cosine_distance(std::span<const double> a, std::span<const double> b);

// Density clustering in input order. A point is core when at least
// min_samples points (itself included) lie within eps. Border points join
// the first cluster that reaches them.
ClusterAssignment dbscan(std::span<const std::vector<double>> points, const DbscanParams& params);
ClusterAssignment dbscan(std::span<const Embedding> points, const DbscanParams& params);

struct PurityReport {
  double purity = 0.0;
  bool all_noise = false;
};

// Fraction of clustered points whose cluster majority location equals their
// own; `locations` holds one ground-truth index per point.
PurityReport purity(const ClusterAssignment& assignment, std::span<const std::size_t> locations);

struct EmbeddingFile {
  std::size_t dim = 0;
  std::string view_tag;  // "d", "s" or "mixed"
  std::vector<Embedding> records;
};

// Text format: header line "<dim> <count> <view>", then one record per line
// "<id> <d|s> <location|-> v_1 ... v_dim". Values use shortest round-trip
// decimal form, so a write/read cycle is bit-exact.
void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings(const std::filesystem::path& path);
std::string format_embeddings(const EmbeddingFile& file);
EmbeddingFile parse_embeddings(const std::string& text);

std::string format_double(double v);

}  // namespace cdikt
