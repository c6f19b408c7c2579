#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cdikt/checkpoint.hpp"
#include "cdikt/cluster.hpp"
#include "cdikt/dataset.hpp"
#include "cdikt/memory.hpp"
#include "cdikt/ops.hpp"
#include "cdikt/pipeline.hpp"
#include "cdikt/selfcheck.hpp"

#ifndef CDIKT_BUILD_ID
#define CDIKT_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace cdikt;

namespace {

enum Exit : int { kOk = 0, kFailed = 1, kUsage = 2, kData = 3, kCollapse = 4, kIo = 5 };

// Usage problems detected after flag parsing.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<LocationRecord> load_records(const fs::path& root, std::size_t size) {
  if (root.empty()) throw UsageError("no data root given");
  if (!fs::is_directory(root)) throw DataError("data root " + root.string() + " is not a directory");
  auto report = load_dataset(root, size);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& r : report.rejected) std::cerr << "rejected: " << r << "\n";
  if (report.records.empty()) throw DataError("no usable locations under " + root.string());
  return std::move(report.records);
}

nlohmann::json metrics_json(const MetricsReport& m) { return nlohmann::json::parse(m.to_json()); }

// ---- synth ----

struct SynthArgs {
  SyntheticSpec spec;
  fs::path out;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* cmd = app.add_subcommand("synth", "Render a synthetic drone/satellite dataset");
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--locations", a.spec.num_locations, "Number of locations")->capture_default_str();
  cmd->add_option("--views", a.spec.drone_views_per_location, "Drone views per location")->capture_default_str();
  cmd->add_option("--latent-dim", a.spec.latent_dim, "Scene code length")->capture_default_str();
  cmd->add_option("--strength", a.spec.view_transform_strength, "Drone view transform range")->capture_default_str();
  cmd->add_option("--confusion", a.spec.confusion, "Drone appearance noise sigma")->capture_default_str();
  cmd->add_option("--gap", a.spec.cross_view_gap, "Systematic satellite-side difference in [0,1]")
      ->capture_default_str();
  cmd->add_option("--size", a.spec.image_size, "Image side in pixels")->capture_default_str();
  cmd->add_option("--style", a.spec.style, "Visual domain (0 or 1)")->capture_default_str();
  cmd->add_option("--prefix", a.spec.id_prefix, "Location id prefix")->capture_default_str();
  cmd->add_option("--seed", a.spec.seed, "Generator seed")->capture_default_str();
}

int run_synth(const SynthArgs& a) {
  a.spec.validate();
  synth_generate(a.spec, a.out);
  std::cout << "wrote " << a.spec.num_locations << " locations to " << a.out.string() << "\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  fs::path config_file;
  std::vector<std::string> overrides;
  std::optional<std::string> setting;
  std::optional<double> gt_ratio;
  std::optional<fs::path> init_checkpoint;
  std::optional<fs::path> data_root;
  std::optional<fs::path> eval_root;
  std::optional<std::uint64_t> seed;
  fs::path out_dir;
  bool print_config = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train under setting i, ii or iii");
  cmd->add_option("--config", a.config_file, "Key-value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "Override one config key (key=value), repeatable");
  cmd->add_option("--setting", a.setting, "i, ii or iii");
  cmd->add_option("--gt-ratio", a.gt_ratio, "Fraction of locations with pair labels");
  cmd->add_option("--init-checkpoint", a.init_checkpoint, "Starting model (required for setting iii)");
  cmd->add_option("--data", a.data_root, "Training data root");
  cmd->add_option("--eval-data", a.eval_root, "Evaluation data root (default: training data)");
  cmd->add_option("--seed", a.seed, "Master seed");
  cmd->add_option("--out", a.out_dir, "Directory for checkpoint, logs, report and manifest");
  cmd->add_flag("--print-config", a.print_config, "Print the resolved configuration and exit");
}

// Defaults, then the file, then --set in order, then dedicated flags.
ExperimentConfig resolve_config(const TrainArgs& a, std::optional<std::size_t> threads) {
  ExperimentConfig c;
  if (!a.config_file.empty()) apply_config_file(c, a.config_file);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (a.setting) c.setting = parse_setting(*a.setting);
  if (a.gt_ratio) c.gt_ratio = *a.gt_ratio;
  if (a.init_checkpoint) c.init_checkpoint = *a.init_checkpoint;
  if (a.data_root) c.data_root = *a.data_root;
  if (a.eval_root) c.eval_root = *a.eval_root;
  if (a.seed) c.seed = *a.seed;
  if (threads) c.threads = *threads;
  if (!a.out_dir.empty()) {
    c.checkpoint_out = a.out_dir / "model.ckpt";
    c.report_out = a.out_dir / "report.json";
    c.log_out = a.out_dir / "train_log.jsonl";
  }
  return c;
}

int run_train(const TrainArgs& a, std::optional<std::size_t> threads, const std::vector<std::string>& argv) {
  ExperimentConfig c = resolve_config(a, threads);
  if (a.print_config) {
    c.validate();
    std::cout << c.to_text();
    return kOk;
  }
  c.validate();
  if (c.checkpoint_out.empty()) throw UsageError("no output: pass --out or set paths.checkpoint_out");
  const fs::path out_dir = a.out_dir.empty() ? c.checkpoint_out.parent_path() : a.out_dir;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  Stopwatch clock;
  nlohmann::json timings;
  nlohmann::json manifest;
  manifest["command"] = argv;
  manifest["build"] = CDIKT_BUILD_ID;
  manifest["config"] = c.to_kv();
  write_text(out_dir / "config.txt", c.to_text());
  manifest["config_file"] = (out_dir / "config.txt").string();

  std::ofstream log;
  if (!c.log_out.empty()) {
    log.open(c.log_out);
    if (!log) throw std::runtime_error("cannot open " + c.log_out.string() + " for writing");
  }
  auto on_epoch = [&](const EpochStats& s) {
    const auto line = s.to_json();
    if (log.is_open()) log << line << "\n" << std::flush;
    std::cerr << line << "\n";
  };

  auto records = load_records(c.data_root, c.input_size);
  timings["load"] = clock.lap();

  ExperimentResult result;
  if (c.setting == Setting::kIII) {
    auto init = load_checkpoint(c.init_checkpoint);
    // Every image goes to the pool; location folders are never read as labels.
    auto split = split_supervision(records, 0.0, derive_seed(c.seed, "split"));
    manifest["split"] = {{"gt_ratio", 0.0}, {"paired", nlohmann::json::array()}};
    result = run_unpaired_adaptation(c, *init.net, split.unpaired, on_epoch);
  } else {
    auto split = split_supervision(records, c.gt_ratio, derive_seed(c.seed, "split"));
    if (split.paired.empty()) throw DataError("gt_ratio " + format_double(c.gt_ratio) + " selects no paired location");
    const auto split_path = out_dir / "split.txt";
    write_split_manifest(split_path, split);
    std::vector<std::string> paired;
    for (const auto& r : split.paired) paired.push_back(r.location_id);
    manifest["split"] = {{"gt_ratio", c.gt_ratio}, {"file", split_path.string()}, {"paired", paired}};
    result = run_supervised_transfer(c, split, on_epoch);
  }
  timings["train"] = clock.lap();

  save_checkpoint(c.checkpoint_out, *result.model, {{"run.setting", setting_name(c.setting)},
                                                    {"run.seed", std::to_string(c.seed)}});
  manifest["checkpoint"] = c.checkpoint_out.string();

  const auto eval_records = c.eval_root.empty() ? records : load_records(c.eval_root, c.input_size);
  nlohmann::json report;
  for (auto d : {Direction::kDroneToSatellite, Direction::kSatelliteToDrone}) {
    const auto m = evaluate_model(*result.model, eval_records, d, derive_seed(c.seed, "eval"), c.threads);
    report[direction_name(d)] = metrics_json(m);
    std::cout << m.to_json() << "\n";
  }
  if (!c.report_out.empty()) write_text(c.report_out, report.dump(2) + "\n");
  timings["eval"] = clock.lap();

  manifest["epochs"] = {{"transfer", result.transfer_epochs}, {"collapsed", result.collapsed_epochs}};
  manifest["timings_seconds"] = timings;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

  if (result.transfer_epochs > 0 && result.collapsed_epochs == result.transfer_epochs) {
    std::cerr << "error: clustering collapsed in every transfer epoch (" << result.collapsed_epochs
              << "); no pseudo-labels were trained on. Try a larger dbscan eps.\n";
    return kCollapse;
  }
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  fs::path checkpoint;
  fs::path data_root;
  std::string direction = "both";
  fs::path report;
  fs::path embeddings;
  fs::path config_file;
  std::uint64_t seed = 0;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Retrieval metrics of a checkpoint on a dataset");
  cmd->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
  cmd->add_option("--data", a.data_root, "Data root")->required();
  cmd->add_option("--direction", a.direction, "d2s, s2d or both")
      ->check(CLI::IsMember({"d2s", "s2d", "both"}))
      ->capture_default_str();
  cmd->add_option("--report", a.report, "Write the JSON report here");
  cmd->add_option("--embeddings", a.embeddings, "Export every embedding to this file");
  cmd->add_option("--config", a.config_file, "Config the checkpoint must match")->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "Seed for negative-pair sampling")->capture_default_str();
}

int run_eval(const EvalArgs& a, std::size_t threads) {
  auto loaded = load_checkpoint(a.checkpoint);
  const auto& model = loaded.net->config();
  if (!a.config_file.empty()) {
    ExperimentConfig c;
    apply_config_file(c, a.config_file);
    if (c.input_size != model.input_size || c.widths != model.widths || c.blocks_per_stage != model.blocks_per_stage) {
      throw ConfigError("checkpoint model (input " + std::to_string(model.input_size) + ", widths " +
                        shape_str(model.widths) + ") does not match the config (input " +
                        std::to_string(c.input_size) + ", widths " + shape_str(c.widths) + ")");
    }
  }
  auto records = load_records(a.data_root, model.input_size);
  nlohmann::json report;
  for (auto d : {Direction::kDroneToSatellite, Direction::kSatelliteToDrone}) {
    if (a.direction != "both" && a.direction != direction_name(d)) continue;
    const auto m = evaluate_model(*loaded.net, records, d, a.seed, threads);
    report[direction_name(d)] = metrics_json(m);
    std::cout << m.to_json() << "\n";
  }
  if (!a.report.empty()) write_text(a.report, report.dump(2) + "\n");
  if (!a.embeddings.empty()) export_embeddings(*loaded.net, records, a.embeddings, threads);
  return kOk;
}

// ---- cluster ----

struct ClusterArgs {
  fs::path embeddings;
  double eps = kDroneEps;
  std::size_t min_samples = 4;
  fs::path out;
  fs::path summary;
};

void add_cluster(CLI::App& app, ClusterArgs& a) {
  auto* cmd = app.add_subcommand("cluster", "Density-cluster an embedding file");
  cmd->add_option("--embeddings", a.embeddings, "Embedding file")->required();
  cmd->add_option("--eps", a.eps, "Cosine distance radius")->capture_default_str();
  cmd->add_option("--min-samples", a.min_samples, "Points needed for a core point")->capture_default_str();
  cmd->add_option("--out", a.out, "Assignment file (id label per line, -1 is noise)");
  cmd->add_option("--summary", a.summary, "Write the JSON summary here");
}

int run_cluster(const ClusterArgs& a) {
  if (!fs::exists(a.embeddings)) throw std::runtime_error("cannot open " + a.embeddings.string());
  const auto file = read_embeddings(a.embeddings);
  if (a.eps < 0.0 || a.min_samples == 0) throw UsageError("eps must be >= 0 and min-samples positive");
  const auto assignment = dbscan(std::span<const Embedding>(file.records), DbscanParams{a.eps, a.min_samples});
  if (!a.out.empty()) {
    std::string text;
    for (std::size_t i = 0; i < file.records.size(); ++i) {
      text += file.records[i].id + " " + std::to_string(assignment.labels[i]) + "\n";
    }
    write_text(a.out, text);
  }
  nlohmann::json summary{{"points", file.records.size()},
                         {"clusters", assignment.cluster_count},
                         {"noise", assignment.noise_count()},
                         {"eps", a.eps},
                         {"min_samples", a.min_samples}};
  if (!a.summary.empty()) write_text(a.summary, summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---- selfcheck ----

struct SelfcheckArgs {
  std::string inject_fault;
  std::uint64_t seed = 0;
};

void add_selfcheck(CLI::App& app, SelfcheckArgs& a) {
  auto* cmd = app.add_subcommand("selfcheck", "Run the oracle batteries");
  cmd->add_option("--inject-fault", a.inject_fault, "Corrupt the gradient rule of this op (testing aid)");
  cmd->add_option("--seed", a.seed, "Battery seed")->capture_default_str();
}

int run_selfcheck_command(const SelfcheckArgs& a) {
  if (!a.inject_fault.empty()) set_gradient_fault(a.inject_fault);
  bool ok = true;
  for (const auto& r : run_selfcheck(a.seed)) {
    std::cout << format_report(r) << "\n";
    ok = ok && r.passed();
  }
  set_gradient_fault("");
  std::cout << (ok ? "selfcheck passed" : "selfcheck FAILED") << "\n";
  return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view drone/satellite retrieval: synthesize, train, evaluate, cluster, self-check"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Worker threads (default 1, results do not depend on it)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  TrainArgs train;
  EvalArgs eval;
  ClusterArgs cluster;
  SelfcheckArgs selfcheck;
  add_synth(app, synth);
  add_train(app, train);
  add_eval(app, eval);
  add_cluster(app, cluster);
  add_selfcheck(app, selfcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (app.got_subcommand("synth")) return run_synth(synth);
    if (app.got_subcommand("train")) return run_train(train, threads, args);
    if (app.got_subcommand("eval")) return run_eval(eval, threads.value_or(1));
    if (app.got_subcommand("cluster")) return run_cluster(cluster);
    if (app.got_subcommand("selfcheck")) return run_selfcheck_command(selfcheck);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    // Config files are user input; embedding files are data.
    std::cerr << "parse error at " << e.what() << "\n";
    return app.got_subcommand("cluster") ? kData : kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CollapseError& e) {
    std::cerr << "numeric collapse: " << e.what() << "\n";
    return kCollapse;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::runtime_error& e) {
    // Remaining runtime errors come from file access and checkpoint decoding.
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
