#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdikt/cdis.hpp"
#include "cdikt/cluster.hpp"
#include "cdikt/dataset.hpp"
#include "cdikt/eval.hpp"
#include "cdikt/memory.hpp"
#include "cdikt/nn.hpp"

namespace cdikt {

enum class Setting { kI, kII, kIII };

std::string setting_name(Setting s);  // "i", "ii", "iii"
Setting parse_setting(const std::string& name);

struct ExperimentConfig {
  Setting setting = Setting::kII;
  double gt_ratio = 0.1;
  LossWeights weights;
  double l1_temperature = 0.1;
  double temperature = kDefaultMemoryTemperature;  // contrastive loss against memories
  double momentum = kDefaultMomentum;
  DbscanParams dbscan_drone{kDroneEps, 4};
  DbscanParams dbscan_satellite{kSatelliteEps, 4};
  std::size_t cdis_epochs = 1;
  std::size_t cdts_epochs = 30;
  std::size_t batch_size = 16;
  double lr_cdis = 1e-3;
  double lr_cdts = 2.5e-4;
  std::string cdts_optimizer = "sgd";  // "sgd" or "adamw"
  // Use the L1 terms only during the transfer phase (no clustering); the
  // CDIS-only baseline trained for the same number of epochs.
  bool supervised_only = false;
  bool freeze_backbone = false;
  std::size_t input_size = 96;
  std::vector<std::size_t> widths{16, 24, 32};
  std::size_t blocks_per_stage = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path data_root;
  std::filesystem::path eval_root;  // empty: evaluate on the training locations
  std::filesystem::path init_checkpoint;
  std::filesystem::path checkpoint_out;
  std::filesystem::path report_out;
  std::filesystem::path log_out;

  void validate() const;
  // Flat key=value form; set() accepts exactly the keys to_kv() emits.
  std::map<std::string, std::string> to_kv() const;
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

// Reads "key = value" lines; '#' starts a comment. Unknown keys and bad
// values raise ParseError with the line number.
void apply_config_text(ExperimentConfig& config, const std::string& text);
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);

// Paired locations in class-label order.
struct PairedData {
  std::vector<std::string> location_ids;
  std::vector<std::vector<Tensor>> drones;
  std::vector<std::vector<Tensor>> satellites;

  std::size_t size() const { return location_ids.size(); }
  static PairedData from_records(const std::vector<LocationRecord>& records);
};

struct PoolData {
  std::vector<std::string> ids;
  std::vector<View> views;
  std::vector<Tensor> images;

  std::size_t size() const { return ids.size(); }
  static PoolData from_pool(const UnpairedPool& pool);
};

struct EpochStats {
  std::string phase;  // "cdis" or "cdts"
  std::size_t epoch = 0;
  std::size_t steps = 0;
  std::size_t drone_clusters = 0;      // K
  std::size_t satellite_clusters = 0;  // L
  std::size_t drone_noise = 0;
  std::size_t satellite_noise = 0;
  bool drone_skipped = false;  // clustering collapse
  bool satellite_skipped = false;
  // Sums over the epoch's steps of each term and of the optimized total.
  double loss_l1 = 0.0;
  double loss_drone = 0.0;
  double loss_satellite = 0.0;
  double loss_total = 0.0;
  std::optional<double> drone_purity;
  std::optional<double> satellite_purity;
  double seconds = 0.0;

  std::string to_json() const;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Unit-norm embeddings of every image, computed without gradient. Work is
// split over `threads` workers; results do not depend on the count.
std::vector<std::vector<double>> embed_all(const CdisNet& net, const std::vector<Tensor>& images,
                                           std::size_t threads = 1);

// Batches of distinct locations: each location's drone images are visited
// once per epoch in shuffled order, round-robin across locations.
std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pair_batches(const PairedData& paired,
                                                                           std::size_t batch_size, Rng& rng);

// Multi-level loss on (location, drone index) pairs with a random satellite.
L1Terms l1_on_batch(const CdisNet& net, const PairedData& paired,
                    const std::vector<std::pair<std::size_t, std::size_t>>& batch, const ExperimentConfig& config,
                    Rng& rng);

class Trainer {
 public:
  Trainer(CdisNet& net, const ExperimentConfig& config);

  // One pass of supervised steps over the paired subset.
  EpochStats cdis_epoch(const PairedData& paired, Optimizer& optimizer, Rng& rng);

  // Re-cluster the pool, rebuild memories and train on pseudo-labels plus
  // L1 on cycling paired batches. `sealed` only feeds the purity figures.
  EpochStats cdts_epoch(const PairedData& paired, const PoolData& pool, const SealedLocations* sealed,
                        Optimizer& optimizer, Rng& rng);

  const std::optional<ClusterMemory>& drone_memory() const { return drone_memory_; }
  const std::optional<ClusterMemory>& satellite_memory() const { return satellite_memory_; }

 private:
  CdisNet& net_;
  const ExperimentConfig& config_;
  std::size_t cdis_epoch_ = 0;
  std::size_t cdts_epoch_ = 0;
  std::optional<ClusterMemory> drone_memory_;
  std::optional<ClusterMemory> satellite_memory_;
};

struct ExperimentResult {
  std::unique_ptr<CdisNet> model;
  std::vector<EpochStats> log;
  std::size_t collapsed_epochs = 0;  // transfer epochs with both views collapsed
  std::size_t transfer_epochs = 0;
};

// Settings I and II on an already split dataset.
ExperimentResult run_supervised_transfer(const ExperimentConfig& config, const SupervisionSplit& split,
                                         const EpochCallback& on_epoch = {});

// Setting III: adapt a checkpointed model on a pool without pair labels.
// The pool handle carries no location information.
ExperimentResult run_unpaired_adaptation(const ExperimentConfig& config, const CdisNet& initial,
                                         const UnpairedPool& pool, const EpochCallback& on_epoch = {});

// Embeddings of every image of the records, location-tagged.
std::vector<Embedding> embed_records(const CdisNet& net, const std::vector<LocationRecord>& records,
                                     std::size_t threads = 1);

MetricsReport evaluate_model(const CdisNet& net, const std::vector<LocationRecord>& records, Direction direction,
                             std::uint64_t seed, std::size_t threads = 1);

// Writes the embedding-file format for every image of the records.
void export_embeddings(const CdisNet& net, const std::vector<LocationRecord>& records,
                       const std::filesystem::path& path, std::size_t threads = 1);

CdisConfig model_config(const ExperimentConfig& config, std::size_t num_classes);

}  // namespace cdikt
