#include "cdikt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "cdikt/ops.hpp"

namespace cdikt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, trim(item)));
  if (out.empty()) throw std::invalid_argument(key + ": expected a comma-separated list");
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Instances carrying a pseudo-label, with their cluster ids.
struct LabeledView {
  std::vector<std::size_t> pool_index;
  std::vector<std::size_t> cluster;
  std::size_t cursor = 0;

  std::size_t size() const { return pool_index.size(); }
  // Next `n` entries, wrapping around.
  std::vector<std::size_t> take(std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n && !pool_index.empty(); ++i) {
      out.push_back(cursor);
      cursor = (cursor + 1) % pool_index.size();
    }
    return out;
  }
};

}  // namespace

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::kI: return "i";
    case Setting::kII: return "ii";
    case Setting::kIII: return "iii";
  }
  return "?";
}

Setting parse_setting(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "i" || n == "1") return Setting::kI;
  if (n == "ii" || n == "2") return Setting::kII;
  if (n == "iii" || n == "3") return Setting::kIII;
  throw std::invalid_argument("unknown setting '" + name + "' (expected i, ii or iii)");
}

void ExperimentConfig::validate() const {
  if (!(gt_ratio >= 0.0 && gt_ratio <= 1.0)) throw ConfigError("gt_ratio must lie in [0, 1]");
  if (!(temperature > 0.0) || !(l1_temperature > 0.0)) throw ConfigError("temperatures must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("memory.momentum must lie in [0, 1]");
  if (dbscan_drone.eps < 0.0 || dbscan_satellite.eps < 0.0) throw ConfigError("dbscan eps must be non-negative");
  if (dbscan_drone.min_samples == 0 || dbscan_satellite.min_samples == 0) {
    throw ConfigError("dbscan.min_samples must be positive");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr_cdis > 0.0) || !(lr_cdts > 0.0)) throw ConfigError("learning rates must be positive");
  if (cdts_optimizer != "sgd" && cdts_optimizer != "adamw") {
    throw ConfigError("optim.cdts must be sgd or adamw, got '" + cdts_optimizer + "'");
  }
  if (threads == 0) throw ConfigError("threads must be positive");
  if (setting == Setting::kI && gt_ratio != 1.0) throw ConfigError("setting i trains on every pair (gt_ratio 1)");
  if (setting == Setting::kIII && init_checkpoint.empty()) {
    throw ConfigError("setting iii needs an initial checkpoint from another domain");
  }
  model_config(*this, 2).validate();
}

std::map<std::string, std::string> ExperimentConfig::to_kv() const {
  return {{"setting", setting_name(setting)},
          {"gt_ratio", format_double(gt_ratio)},
          {"loss.mse_weight", format_double(weights.mse)},
          {"loss.ce_weight", format_double(weights.ce)},
          {"loss.infonce_weight", format_double(weights.infonce)},
          {"loss.l1_temperature", format_double(l1_temperature)},
          {"memory.temperature", format_double(temperature)},
          {"memory.momentum", format_double(momentum)},
          {"dbscan.eps_drone", format_double(dbscan_drone.eps)},
          {"dbscan.eps_satellite", format_double(dbscan_satellite.eps)},
          {"dbscan.min_samples", std::to_string(dbscan_drone.min_samples)},
          {"epochs.cdis", std::to_string(cdis_epochs)},
          {"epochs.cdts", std::to_string(cdts_epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"lr.cdis", format_double(lr_cdis)},
          {"lr.cdts", format_double(lr_cdts)},
          {"optim.cdts", cdts_optimizer},
          {"train.supervised_only", supervised_only ? "true" : "false"},
          {"train.freeze_backbone", freeze_backbone ? "true" : "false"},
          {"model.input_size", std::to_string(input_size)},
          {"model.widths", join_sizes(widths)},
          {"model.blocks_per_stage", std::to_string(blocks_per_stage)},
          {"seed", std::to_string(seed)},
          {"threads", std::to_string(threads)},
          {"paths.data_root", data_root.string()},
          {"paths.eval_root", eval_root.string()},
          {"paths.init_checkpoint", init_checkpoint.string()},
          {"paths.checkpoint_out", checkpoint_out.string()},
          {"paths.report_out", report_out.string()},
          {"paths.log_out", log_out.string()}};
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "setting") setting = parse_setting(v);
  else if (key == "gt_ratio") gt_ratio = to_double(key, v);
  else if (key == "loss.mse_weight") weights.mse = to_double(key, v);
  else if (key == "loss.ce_weight") weights.ce = to_double(key, v);
  else if (key == "loss.infonce_weight") weights.infonce = to_double(key, v);
  else if (key == "loss.l1_temperature") l1_temperature = to_double(key, v);
  else if (key == "memory.temperature") temperature = to_double(key, v);
  else if (key == "memory.momentum") momentum = to_double(key, v);
  else if (key == "dbscan.eps_drone") dbscan_drone.eps = to_double(key, v);
  else if (key == "dbscan.eps_satellite") dbscan_satellite.eps = to_double(key, v);
  else if (key == "dbscan.min_samples") dbscan_drone.min_samples = dbscan_satellite.min_samples = to_u64(key, v);
  else if (key == "epochs.cdis") cdis_epochs = to_u64(key, v);
  else if (key == "epochs.cdts") cdts_epochs = to_u64(key, v);
  else if (key == "batch_size") batch_size = to_u64(key, v);
  else if (key == "lr.cdis") lr_cdis = to_double(key, v);
  else if (key == "lr.cdts") lr_cdts = to_double(key, v);
  else if (key == "optim.cdts") cdts_optimizer = v;
  else if (key == "train.supervised_only") supervised_only = to_bool(key, v);
  else if (key == "train.freeze_backbone") freeze_backbone = to_bool(key, v);
  else if (key == "model.input_size") input_size = to_u64(key, v);
  else if (key == "model.widths") widths = to_sizes(key, v);
  else if (key == "model.blocks_per_stage") blocks_per_stage = to_u64(key, v);
  else if (key == "seed") seed = to_u64(key, v);
  else if (key == "threads") threads = to_u64(key, v);
  else if (key == "paths.data_root") data_root = v;
  else if (key == "paths.eval_root") eval_root = v;
  else if (key == "paths.init_checkpoint") init_checkpoint = v;
  else if (key == "paths.checkpoint_out") checkpoint_out = v;
  else if (key == "paths.report_out") report_out = v;
  else if (key == "paths.log_out") log_out = v;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_kv()) out += k + " = " + v + "\n";
  return out;
}

void apply_config_text(ExperimentConfig& config, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(ss, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(n, "expected 'key = value'");
    try {
      config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw ParseError(n, e.what());
    }
  }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str());
}

CdisConfig model_config(const ExperimentConfig& config, std::size_t num_classes) {
  CdisConfig c;
  c.input_size = config.input_size;
  c.widths = config.widths;
  c.blocks_per_stage = config.blocks_per_stage;
  c.num_classes = std::max<std::size_t>(2, num_classes);
  c.seed = derive_seed(config.seed, "model");
  return c;
}

PairedData PairedData::from_records(const std::vector<LocationRecord>& records) {
  PairedData out;
  for (const auto& r : records) {
    if (r.satellite_images.empty() || r.drone_images.empty()) {
      throw DataError("paired location " + r.location_id + " needs drone and satellite images");
    }
    out.location_ids.push_back(r.location_id);
    auto& d = out.drones.emplace_back();
    for (const auto& img : r.drone_images) d.push_back(to_tensor(img.image));
    auto& s = out.satellites.emplace_back();
    for (const auto& img : r.satellite_images) s.push_back(to_tensor(img.image));
  }
  return out;
}

PoolData PoolData::from_pool(const UnpairedPool& pool) {
  PoolData out;
  for (const auto& img : pool.images()) {
    out.ids.push_back(img.id);
    out.views.push_back(img.view);
    out.images.push_back(to_tensor(img.image));
  }
  return out;
}

std::string EpochStats::to_json() const {
  nlohmann::json j;
  j["phase"] = phase;
  j["epoch"] = epoch;
  j["steps"] = steps;
  j["K"] = drone_clusters;
  j["L"] = satellite_clusters;
  j["drone_noise"] = drone_noise;
  j["satellite_noise"] = satellite_noise;
  j["drone_skipped"] = drone_skipped;
  j["satellite_skipped"] = satellite_skipped;
  j["loss_l1"] = loss_l1;
  j["loss_drone"] = loss_drone;
  j["loss_satellite"] = loss_satellite;
  j["loss_total"] = loss_total;
  j["drone_purity"] = drone_purity ? nlohmann::json(*drone_purity) : nlohmann::json(nullptr);
  j["satellite_purity"] = satellite_purity ? nlohmann::json(*satellite_purity) : nlohmann::json(nullptr);
  j["seconds"] = seconds;
  return j.dump();
}

std::vector<std::vector<double>> embed_all(const CdisNet& net, const std::vector<Tensor>& images,
                                           std::size_t threads) {
  std::vector<std::vector<double>> out(images.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    NoGradGuard guard;
    for (std::size_t i = begin; i < end; ++i) {
      Tensor e = net.embed(images[i]);
      out[i].assign(e.data().begin(), e.data().end());
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, images.size()));
  if (threads == 1) {
    work(0, images.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (images.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(images.size(), b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& th : pool) th.join();
  return out;
}

std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pair_batches(const PairedData& paired,
                                                                           std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("pair_batches: batch size must be positive");
  std::vector<std::vector<std::size_t>> queues(paired.size());
  std::size_t longest = 0;
  for (std::size_t l = 0; l < paired.size(); ++l) {
    queues[l] = iota_indices(paired.drones[l].size());
    rng.shuffle(std::span<std::size_t>(queues[l]));
    longest = std::max(longest, queues[l].size());
  }
  // Round r holds the r-th drone image of every location that still has one.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> batches;
  for (std::size_t r = 0; r < longest; ++r) {
    std::vector<std::size_t> order = iota_indices(paired.size());
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::pair<std::size_t, std::size_t>> round;
    for (auto l : order) {
      if (r < queues[l].size()) round.emplace_back(l, queues[l][r]);
    }
    for (std::size_t i = 0; i < round.size(); i += batch_size) {
      batches.emplace_back(round.begin() + static_cast<std::ptrdiff_t>(i),
                           round.begin() + static_cast<std::ptrdiff_t>(std::min(round.size(), i + batch_size)));
    }
  }
  return batches;
}

L1Terms l1_on_batch(const CdisNet& net, const PairedData& paired,
                    const std::vector<std::pair<std::size_t, std::size_t>>& batch, const ExperimentConfig& config,
                    Rng& rng) {
  std::vector<CdisOutputs> drone, satellite;
  std::vector<std::size_t> labels;
  for (const auto& [loc, d] : batch) {
    drone.push_back(net.forward(paired.drones.at(loc).at(d)));
    const auto& sats = paired.satellites.at(loc);
    satellite.push_back(net.forward(sats[sats.size() == 1 ? 0 : rng.below(sats.size())]));
    labels.push_back(loc);
  }
  return loss_l1(drone, satellite, labels, config.weights, config.l1_temperature);
}

Trainer::Trainer(CdisNet& net, const ExperimentConfig& config) : net_(net), config_(config) {}

EpochStats Trainer::cdis_epoch(const PairedData& paired, Optimizer& optimizer, Rng& rng) {
  const auto start = Clock::now();
  EpochStats stats;
  stats.phase = "cdis";
  stats.epoch = cdis_epoch_++;
  if (paired.size() == 0) throw std::invalid_argument("cdis_epoch: no paired locations");
  for (const auto& batch : pair_batches(paired, config_.batch_size, rng)) {
    net_.params().zero_grad();
    L1Terms terms = l1_on_batch(net_, paired, batch, config_, rng);
    terms.total.backward();
    optimizer.step(net_.params());
    const double l1 = terms.total.item();
    if (!std::isfinite(l1)) throw CollapseError("non-finite supervised loss");
    stats.loss_l1 += l1;
    stats.loss_total += l1;
    ++stats.steps;
  }
  stats.seconds = seconds_since(start);
  return stats;
}

EpochStats Trainer::cdts_epoch(const PairedData& paired, const PoolData& pool, const SealedLocations* sealed,
                               Optimizer& optimizer, Rng& rng) {
  const auto start = Clock::now();
  EpochStats stats;
  stats.phase = "cdts";
  stats.epoch = cdts_epoch_++;
  drone_memory_.reset();
  satellite_memory_.reset();

  // Pseudo-labels from the current model, one clustering per view.
  std::optional<LabeledView> labeled[2];
  if (!pool.images.empty() && !config_.supervised_only) {
    const auto all = embed_all(net_, pool.images, config_.threads);
    for (View view : {View::kDrone, View::kSatellite}) {
      const bool is_drone = view == View::kDrone;
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool.views[i] == view) members.push_back(i);
      }
      if (members.empty()) {
        (is_drone ? stats.drone_skipped : stats.satellite_skipped) = true;
        continue;
      }
      std::vector<std::vector<double>> vecs;
      for (auto i : members) vecs.push_back(all[i]);
      const auto assignment = dbscan(vecs, is_drone ? config_.dbscan_drone : config_.dbscan_satellite);
      (is_drone ? stats.drone_clusters : stats.satellite_clusters) = assignment.cluster_count;
      (is_drone ? stats.drone_noise : stats.satellite_noise) = assignment.noise_count();
      if (sealed != nullptr) {
        std::vector<std::size_t> truth;
        for (auto i : members) truth.push_back(sealed->indices().at(i));
        const auto report = purity(assignment, truth);
        if (!report.all_noise) (is_drone ? stats.drone_purity : stats.satellite_purity) = report.purity;
      }
      try {
        auto memory = build_memory(view, vecs, assignment, config_.momentum);
        (is_drone ? drone_memory_ : satellite_memory_) = std::move(memory);
      } catch (const CollapseError&) {
        (is_drone ? stats.drone_skipped : stats.satellite_skipped) = true;
        continue;
      }
      LabeledView lv;
      std::vector<std::size_t> order;
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (assignment.labels[m] != kNoise) order.push_back(m);
      }
      rng.shuffle(std::span<std::size_t>(order));
      for (auto m : order) {
        lv.pool_index.push_back(members[m]);
        lv.cluster.push_back(static_cast<std::size_t>(assignment.labels[m]));
      }
      labeled[is_drone ? 0 : 1] = std::move(lv);
    }
  }

  const std::size_t B = config_.batch_size;
  std::size_t steps = 0;
  for (const auto& lv : labeled) {
    if (lv) steps = std::max(steps, (lv->size() + B - 1) / B);
  }
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pbatches;
  if (paired.size() > 0) {
    pbatches = pair_batches(paired, B, rng);
    // Without pseudo-labels the epoch is a plain supervised pass.
    if (steps == 0) steps = pbatches.size();
  }
  std::size_t pcursor = 0;

  if (config_.freeze_backbone) net_.params().set_trainable("backbone.", false);
  for (std::size_t step = 0; step < steps; ++step) {
    net_.params().zero_grad();
    std::vector<Tensor> parts;
    double l1 = 0.0, ld = 0.0, ls = 0.0;
    if (!pbatches.empty()) {
      L1Terms terms = l1_on_batch(net_, paired, pbatches[pcursor], config_, rng);
      pcursor = (pcursor + 1) % pbatches.size();
      l1 = terms.total.item();
      parts.push_back(terms.total);
    }
    // Queries of both views, kept for the memory updates after the step.
    std::vector<std::pair<std::size_t, std::vector<double>>> updates[2];
    for (int v = 0; v < 2; ++v) {
      auto& lv = labeled[v];
      if (!lv) continue;
      const auto slots = lv->take(std::min(B, lv->size()));
      std::vector<Tensor> queries;
      std::vector<std::size_t> positives;
      for (auto s : slots) {
        Tensor q = net_.embed(pool.images[lv->pool_index[s]]);
        queries.push_back(q);
        positives.push_back(lv->cluster[s]);
        updates[v].emplace_back(lv->cluster[s], std::vector<double>(q.data().begin(), q.data().end()));
      }
      const auto& memory = v == 0 ? *drone_memory_ : *satellite_memory_;
      Tensor loss = contrastive_loss(stack(queries), memory, positives, config_.temperature);
      (v == 0 ? ld : ls) = loss.item();
      parts.push_back(loss);
    }
    if (parts.empty()) break;
    Tensor total = add_n(parts);
    const double t = total.item();
    if (!std::isfinite(t)) throw CollapseError("non-finite training loss");
    if (total.requires_grad()) {
      total.backward();
      optimizer.step(net_.params());
    }
    for (int v = 0; v < 2; ++v) {
      auto& memory = v == 0 ? drone_memory_ : satellite_memory_;
      for (const auto& [k, q] : updates[v]) momentum_update(*memory, k, q);
    }
    stats.loss_l1 += l1;
    stats.loss_drone += ld;
    stats.loss_satellite += ls;
    stats.loss_total += t;
    ++stats.steps;
  }
  if (config_.freeze_backbone) net_.params().set_trainable("backbone.", true);
  stats.seconds = seconds_since(start);
  return stats;
}

namespace {

void finish_epoch(ExperimentResult& result, const EpochStats& stats, const EpochCallback& on_epoch) {
  if (stats.phase == "cdts") {
    ++result.transfer_epochs;
    if (stats.drone_skipped && stats.satellite_skipped) ++result.collapsed_epochs;
  }
  result.log.push_back(stats);
  if (on_epoch) on_epoch(stats);
}

}  // namespace

namespace {

std::unique_ptr<Optimizer> transfer_optimizer(const ExperimentConfig& config) {
  if (config.cdts_optimizer == "adamw") return std::make_unique<AdamW>(config.lr_cdts);
  return std::make_unique<Sgd>(config.lr_cdts);
}

}  // namespace

ExperimentResult run_supervised_transfer(const ExperimentConfig& config, const SupervisionSplit& split,
                                         const EpochCallback& on_epoch) {
  config.validate();
  if (split.paired.empty()) throw ConfigError("settings i and ii need at least one paired location");
  const PairedData paired = PairedData::from_records(split.paired);
  const PoolData pool = PoolData::from_pool(split.unpaired);

  ExperimentResult result;
  result.model = std::make_unique<CdisNet>(model_config(config, paired.size()));
  Trainer trainer(*result.model, config);

  Rng cdis_rng(derive_seed(config.seed, "cdis"));
  AdamW adamw(config.lr_cdis);
  for (std::size_t e = 0; e < config.cdis_epochs; ++e) {
    finish_epoch(result, trainer.cdis_epoch(paired, adamw, cdis_rng), on_epoch);
  }
  // CDTS runs only when unpaired data exists, or as the supervised baseline.
  if (config.setting == Setting::kII && (!pool.images.empty() || config.supervised_only)) {
    Rng cdts_rng(derive_seed(config.seed, "cdts"));
    auto optimizer = transfer_optimizer(config);
    const SealedLocations* sealed = split.sealed.indices().empty() ? nullptr : &split.sealed;
    for (std::size_t e = 0; e < config.cdts_epochs; ++e) {
      finish_epoch(result, trainer.cdts_epoch(paired, pool, sealed, *optimizer, cdts_rng), on_epoch);
    }
  }
  return result;
}

ExperimentResult run_unpaired_adaptation(const ExperimentConfig& config, const CdisNet& initial,
                                         const UnpairedPool& pool, const EpochCallback& on_epoch) {
  if (pool.empty()) throw DataError("unpaired adaptation needs a non-empty pool");
  const PoolData data = PoolData::from_pool(pool);
  if (initial.config().input_size != config.input_size) {
    throw ConfigError("checkpoint input size " + std::to_string(initial.config().input_size) +
                      " differs from the configured " + std::to_string(config.input_size));
  }
  ExperimentResult result;
  result.model = std::make_unique<CdisNet>(initial.config());
  result.model->params().copy_from(initial.params());
  Trainer trainer(*result.model, config);
  Rng rng(derive_seed(config.seed, "cdts"));
  auto optimizer = transfer_optimizer(config);
  const PairedData none;
  for (std::size_t e = 0; e < config.cdts_epochs; ++e) {
    finish_epoch(result, trainer.cdts_epoch(none, data, nullptr, *optimizer, rng), on_epoch);
  }
  return result;
}

std::vector<Embedding> embed_records(const CdisNet& net, const std::vector<LocationRecord>& records,
                                     std::size_t threads) {
  std::vector<Tensor> images;
  std::vector<Embedding> out;
  for (const auto& r : records) {
    for (const auto* group : {&r.drone_images, &r.satellite_images}) {
      const View view = group == &r.drone_images ? View::kDrone : View::kSatellite;
      for (const auto& img : *group) {
        Embedding e;
        e.id = img.name;
        e.view = view;
        e.location = r.location_id;
        out.push_back(std::move(e));
        images.push_back(to_tensor(img.image));
      }
    }
  }
  auto vecs = embed_all(net, images, threads);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].vector = std::move(vecs[i]);
  return out;
}

MetricsReport evaluate_model(const CdisNet& net, const std::vector<LocationRecord>& records, Direction direction,
                             std::uint64_t seed, std::size_t threads) {
  const auto all = embed_records(net, records, threads);
  std::vector<Embedding> drones, satellites;
  for (const auto& e : all) (e.view == View::kDrone ? drones : satellites).push_back(e);
  if (direction == Direction::kDroneToSatellite) return evaluate_retrieval(drones, satellites, direction, seed);
  return evaluate_retrieval(satellites, drones, direction, seed);
}

void export_embeddings(const CdisNet& net, const std::vector<LocationRecord>& records,
                       const std::filesystem::path& path, std::size_t threads) {
  EmbeddingFile file;
  file.dim = net.config().channels();
  file.records = embed_records(net, records, threads);
  bool drone = false, satellite = false;
  for (const auto& e : file.records) (e.view == View::kDrone ? drone : satellite) = true;
  file.view_tag = drone && satellite ? "mixed" : (satellite ? "s" : "d");
  write_embeddings(path, file);
}

}  // namespace cdikt
