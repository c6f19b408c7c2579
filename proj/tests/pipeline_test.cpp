#include "cdikt/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <type_traits>

#include "cdikt/checkpoint.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace cdikt;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.input_size = 16;
  c.widths = {4, 8};
  c.batch_size = 4;
  c.lr_cdts = 1e-3;
  return c;
}

std::vector<LocationRecord> small_records(std::size_t locations, std::size_t views, std::uint64_t seed = 0,
                                          double confusion = 0.05) {
  SyntheticSpec spec;
  spec.num_locations = locations;
  spec.drone_views_per_location = views;
  spec.image_size = 16;
  spec.confusion = confusion;
  spec.seed = seed;
  return synthetic_records(synth_render(spec));
}

// Pool of four identical copies of each location's first drone and
// satellite image: identical copies cluster at any positive radius.
PoolData duplicated_pool(const std::vector<LocationRecord>& records, SealedLocations* sealed = nullptr) {
  PoolData pool;
  std::vector<std::size_t> truth;
  for (std::size_t l = 0; l < records.size(); ++l) {
    for (int copy = 0; copy < 4; ++copy) {
      for (View v : {View::kDrone, View::kSatellite}) {
        const auto& img = v == View::kDrone ? records[l].drone_images[0] : records[l].satellite_images[0];
        pool.ids.push_back("u" + std::to_string(pool.ids.size()));
        pool.views.push_back(v);
        pool.images.push_back(to_tensor(img.image));
        truth.push_back(l);
      }
    }
  }
  if (sealed != nullptr) {
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.location_id);
    *sealed = SealedLocations(ids, truth);
  }
  return pool;
}

}  // namespace

TEST(Config, DefaultsMirrorTheTrainingRecipe) {
  ExperimentConfig c;
  EXPECT_DOUBLE_EQ(c.weights.mse, 0.6);
  EXPECT_DOUBLE_EQ(c.weights.ce, 0.1);
  EXPECT_DOUBLE_EQ(c.weights.infonce, 1.0);
  EXPECT_DOUBLE_EQ(c.dbscan_drone.eps, 0.40);
  EXPECT_DOUBLE_EQ(c.dbscan_satellite.eps, 0.30);
  EXPECT_EQ(c.dbscan_drone.min_samples, 4u);
  EXPECT_EQ(c.cdis_epochs, 1u);
  EXPECT_EQ(c.cdts_epochs, 30u);
  EXPECT_DOUBLE_EQ(c.lr_cdis, 1e-3);
  EXPECT_DOUBLE_EQ(c.lr_cdts, 2.5e-4);
  EXPECT_EQ(c.cdts_optimizer, "sgd");
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.momentum, 0.1);
  EXPECT_DOUBLE_EQ(c.temperature, 0.05);
  EXPECT_EQ(c.threads, 1u);
}

TEST(Config, TextRoundTripReproducesEveryKey) {
  ExperimentConfig c;
  c.setting = Setting::kIII;
  c.gt_ratio = 0.02;
  c.momentum = 0.9;
  c.widths = {8, 16};
  c.lr_cdts = 0.1 + 0.2;  // not exactly representable in short decimal
  c.init_checkpoint = "a/b.ckpt";
  c.freeze_backbone = true;
  c.cdts_optimizer = "adamw";
  ExperimentConfig back;
  apply_config_text(back, c.to_text());
  EXPECT_EQ(back.to_kv(), c.to_kv());
  EXPECT_EQ(back.lr_cdts, c.lr_cdts);
}

TEST(Config, ParseErrorsCarryLineNumbers) {
  ExperimentConfig c;
  try {
    apply_config_text(c, "# comment\nseed = 4\n\nbogus = 1\n");
    FAIL() << "unknown key accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_EQ(c.seed, 4u);
  EXPECT_THROW(apply_config_text(c, "seed = -3"), ParseError);
  EXPECT_THROW(apply_config_text(c, "gt_ratio = 0.1x"), ParseError);
  EXPECT_THROW(apply_config_text(c, "just words"), ParseError);
  EXPECT_THROW(apply_config_text(c, "setting = iv"), ParseError);
  apply_config_text(c, "dbscan.min_samples = 6  # both views\n");
  EXPECT_EQ(c.dbscan_drone.min_samples, 6u);
  EXPECT_EQ(c.dbscan_satellite.min_samples, 6u);
}

TEST(Config, ValidationRejectsInconsistentSettings) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.setting = Setting::kIII;
  EXPECT_THROW(c.validate(), ConfigError);  // no checkpoint
  c.init_checkpoint = "x.ckpt";
  EXPECT_NO_THROW(c.validate());
  c = small_config();
  c.setting = Setting::kI;
  c.gt_ratio = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.gt_ratio = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.widths = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.set("optim.cdts", "adam");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PairBatches, CoverEveryPairOnceWithDistinctLocations) {
  const auto records = small_records(5, 3);
  auto paired = PairedData::from_records(records);
  paired.drones[2].pop_back();  // uneven drone counts
  Rng rng(1);
  const auto batches = pair_batches(paired, 2, rng);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& b : batches) {
    EXPECT_LE(b.size(), 2u);
    std::set<std::size_t> locs;
    for (const auto& p : b) {
      EXPECT_TRUE(locs.insert(p.first).second) << "location repeated in a batch";
      EXPECT_TRUE(seen.insert(p).second) << "pair visited twice";
    }
  }
  EXPECT_EQ(seen.size(), 14u);
  EXPECT_THROW(pair_batches(paired, 0, rng), std::invalid_argument);
}

TEST(EmbedAll, ThreadCountDoesNotChangeResults) {
  const auto records = small_records(3, 3);
  CdisNet net(model_config(small_config(), 3));
  std::vector<Tensor> images;
  for (const auto& r : records) {
    for (const auto& d : r.drone_images) images.push_back(to_tensor(d.image));
  }
  const auto one = embed_all(net, images, 1);
  const auto three = embed_all(net, images, 3);
  EXPECT_EQ(one, three);
  for (const auto& v : one) {
    double n = 0;
    for (double x : v) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(CdtsEpoch, FullySupervisedNeverClusters) {
  const auto cfg = small_config();
  const auto records = small_records(3, 2);
  const auto paired = PairedData::from_records(records);
  CdisNet net(model_config(cfg, 3));
  Trainer trainer(net, cfg);
  Sgd sgd(cfg.lr_cdts);
  Rng rng(0);
  const auto stats = trainer.cdts_epoch(paired, PoolData{}, nullptr, sgd, rng);
  EXPECT_EQ(stats.drone_clusters, 0u);
  EXPECT_EQ(stats.satellite_clusters, 0u);
  EXPECT_FALSE(trainer.drone_memory().has_value());
  EXPECT_FALSE(trainer.satellite_memory().has_value());
  EXPECT_EQ(stats.steps, 2u);  // 3 locations x 2 drones in batches of 4 distinct locations
  EXPECT_EQ(stats.loss_drone, 0.0);
  EXPECT_EQ(stats.loss_satellite, 0.0);
  EXPECT_GT(stats.loss_l1, 0.0);
  EXPECT_EQ(stats.loss_total, stats.loss_l1);
}

TEST(CdtsEpoch, WithoutPairsTheLossIsBothContrastiveTerms) {
  auto cfg = small_config();
  cfg.dbscan_drone.eps = cfg.dbscan_satellite.eps = 1e-9;
  const auto records = small_records(3, 1);
  const auto pool = duplicated_pool(records);
  CdisNet net(model_config(cfg, 2));
  Trainer trainer(net, cfg);
  Sgd sgd(cfg.lr_cdts);
  Rng rng(0);
  const auto stats = trainer.cdts_epoch(PairedData{}, pool, nullptr, sgd, rng);
  EXPECT_EQ(stats.drone_clusters, 3u);
  EXPECT_EQ(stats.satellite_clusters, 3u);
  EXPECT_EQ(stats.loss_l1, 0.0);
  EXPECT_GT(stats.loss_drone, 0.0);
  EXPECT_GT(stats.loss_satellite, 0.0);
  EXPECT_NEAR(stats.loss_total, stats.loss_drone + stats.loss_satellite, 1e-9);
}

TEST(CdtsEpoch, TotalLossIsTheSumOfItsComponents) {
  auto cfg = small_config();
  cfg.dbscan_drone.eps = cfg.dbscan_satellite.eps = 1e-9;
  const auto records = small_records(3, 2);
  const auto paired = PairedData::from_records({records[0], records[1]});
  SealedLocations sealed;
  const auto pool = duplicated_pool(records, &sealed);
  CdisNet net(model_config(cfg, 2));
  Trainer trainer(net, cfg);
  Sgd sgd(cfg.lr_cdts);
  Rng rng(0);
  for (int epoch = 0; epoch < 2; ++epoch) {
    const auto stats = trainer.cdts_epoch(paired, pool, &sealed, sgd, rng);
    EXPECT_EQ(stats.epoch, static_cast<std::size_t>(epoch));
    EXPECT_GT(stats.loss_l1, 0.0);
    EXPECT_GT(stats.loss_drone, 0.0);
    EXPECT_GT(stats.loss_satellite, 0.0);
    EXPECT_NEAR(stats.loss_total, stats.loss_l1 + stats.loss_drone + stats.loss_satellite, 1e-9);
    ASSERT_TRUE(stats.drone_purity.has_value());
    EXPECT_DOUBLE_EQ(*stats.drone_purity, 1.0);
    // Memories match the assignment and stay unit norm after the updates.
    for (const auto* memory : {&trainer.drone_memory(), &trainer.satellite_memory()}) {
      ASSERT_TRUE(memory->has_value());
      EXPECT_EQ((*memory)->count, 3u);
      EXPECT_GT((*memory)->iteration, 0u);
      for (std::size_t k = 0; k < (*memory)->count; ++k) {
        double n = 0;
        for (double x : (*memory)->centroid(k)) n += x * x;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
      }
    }
  }
}

TEST(CdtsEpoch, CollapsedViewIsSkipped) {
  auto cfg = small_config();
  cfg.dbscan_drone.eps = 1e-9;
  cfg.dbscan_satellite.eps = 0.0;  // every satellite is noise
  const auto records = small_records(2, 1);
  const auto pool = duplicated_pool(records);
  CdisNet net(model_config(cfg, 2));
  Trainer trainer(net, cfg);
  Sgd sgd(cfg.lr_cdts);
  Rng rng(0);
  const auto stats = trainer.cdts_epoch(PairedData{}, pool, nullptr, sgd, rng);
  EXPECT_FALSE(stats.drone_skipped);
  EXPECT_TRUE(stats.satellite_skipped);
  EXPECT_EQ(stats.satellite_clusters, 0u);
  EXPECT_EQ(stats.loss_satellite, 0.0);
  EXPECT_GT(stats.loss_drone, 0.0);
  EXPECT_FALSE(trainer.satellite_memory().has_value());
}

TEST(CdtsEpoch, PurityDoesNotDecreaseOnSeparableData) {
  // Noise-free, lightly transformed views: the embedding already separates
  // the locations, and training on the pseudo-labels must not undo that.
  std::size_t monotone_trials = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = small_config();
    cfg.input_size = 64;
    cfg.widths = {16, 24, 32};
    cfg.lr_cdts = ExperimentConfig{}.lr_cdts;
    cfg.seed = seed;
    cfg.dbscan_drone.eps = 0.02;
    cfg.dbscan_satellite.eps = 0.0;
    SyntheticSpec spec;
    spec.num_locations = 6;
    spec.drone_views_per_location = 5;
    spec.image_size = 64;
    spec.confusion = 0.0;
    spec.view_transform_strength = 0.02;
    spec.seed = seed;
    const auto records = synthetic_records(synth_render(spec));
    const auto split = split_supervision(records, 0.0, seed);
    const auto pool = PoolData::from_pool(split.unpaired);
    CdisNet net(model_config(cfg, 2));
    Trainer trainer(net, cfg);
    Sgd sgd(cfg.lr_cdts);
    Rng rng(seed);
    double previous = -1.0;
    bool monotone = true;
    for (int epoch = 0; epoch < 5; ++epoch) {
      const auto stats = trainer.cdts_epoch(PairedData{}, pool, &split.sealed, sgd, rng);
      const double p = stats.drone_purity.value_or(0.0);
      if (p + 1e-12 < previous) monotone = false;
      previous = p;
    }
    if (monotone) ++monotone_trials;
  }
  EXPECT_GE(monotone_trials, 4u);
}

TEST(Experiment, SettingIIWithAllPairsSkipsTransfer) {
  auto cfg = small_config();
  cfg.gt_ratio = 1.0;
  cfg.cdts_epochs = 3;
  const auto records = small_records(3, 2);
  const auto split = split_supervision(records, 1.0, 0);
  std::size_t callbacks = 0;
  const auto result = run_supervised_transfer(cfg, split, [&](const EpochStats&) { ++callbacks; });
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_EQ(result.log[0].phase, "cdis");
  EXPECT_EQ(callbacks, 1u);
  EXPECT_EQ(result.transfer_epochs, 0u);
}

TEST(Experiment, SettingIIRunsBothPhases) {
  auto cfg = small_config();
  cfg.gt_ratio = 0.5;
  cfg.cdts_epochs = 2;
  const auto records = small_records(4, 2);
  const auto split = split_supervision(records, 0.5, 0);
  const auto result = run_supervised_transfer(cfg, split);
  ASSERT_EQ(result.log.size(), 3u);
  EXPECT_EQ(result.log[0].phase, "cdis");
  EXPECT_EQ(result.log[1].phase, "cdts");
  EXPECT_EQ(result.transfer_epochs, 2u);
  EXPECT_TRUE(result.log[1].drone_purity.has_value() || result.log[1].drone_skipped);
  EXPECT_EQ(result.model->config().num_classes, 2u);
}

TEST(Experiment, RunsAreReproducible) {
  auto cfg = small_config();
  cfg.gt_ratio = 0.5;
  cfg.cdts_epochs = 1;
  cfg.dbscan_drone.eps = 0.05;
  const auto records = small_records(4, 2);
  const auto split = split_supervision(records, 0.5, 0);
  const auto a = run_supervised_transfer(cfg, split);
  const auto b = run_supervised_transfer(cfg, split);
  ASSERT_EQ(a.model->params().size(), b.model->params().size());
  for (std::size_t i = 0; i < a.model->params().size(); ++i) {
    EXPECT_EQ(cdikt::testing::to_vec(a.model->params().items()[i].second),
              cdikt::testing::to_vec(b.model->params().items()[i].second));
  }
  EXPECT_EQ(a.log.back().to_json().substr(0, 60), b.log.back().to_json().substr(0, 60));
}

TEST(Experiment, TransferOptimizerIsConfigurable) {
  auto cfg = small_config();
  cfg.gt_ratio = 0.5;
  cfg.cdts_epochs = 1;
  cfg.supervised_only = true;
  const auto records = small_records(4, 2);
  const auto split = split_supervision(records, 0.5, 0);
  const auto sgd = run_supervised_transfer(cfg, split);
  cfg.cdts_optimizer = "adamw";
  const auto adamw = run_supervised_transfer(cfg, split);
  ASSERT_EQ(sgd.log.size(), 2u);
  // Same first phase, different update rule afterwards.
  EXPECT_EQ(sgd.log[0].loss_total, adamw.log[0].loss_total);
  const auto& a = sgd.model->params().items()[0].second;
  const auto& b = adamw.model->params().items()[0].second;
  EXPECT_NE(cdikt::testing::to_vec(a), cdikt::testing::to_vec(b));
}

// The adaptation entry point accepts only the label-free pool handle.
static_assert(std::is_invocable_v<decltype(&run_unpaired_adaptation), const ExperimentConfig&, const CdisNet&,
                                  const UnpairedPool&, const EpochCallback&>);
static_assert(!std::is_invocable_v<decltype(&run_unpaired_adaptation), const ExperimentConfig&, const CdisNet&,
                                   const SupervisionSplit&, const EpochCallback&>);
static_assert(!std::is_invocable_v<decltype(&run_unpaired_adaptation), const ExperimentConfig&, const CdisNet&,
                                   const std::vector<LocationRecord>&, const EpochCallback&>);

TEST(Experiment, UnpairedAdaptationSeesNoLabels) {
  auto cfg = small_config();
  cfg.setting = Setting::kIII;
  cfg.gt_ratio = 0.0;
  cfg.cdts_epochs = 2;
  cfg.dbscan_drone.eps = 0.05;
  CdisNet initial(model_config(cfg, 2));
  const auto split = split_supervision(small_records(3, 4), 0.0, 0);
  const auto result = run_unpaired_adaptation(cfg, initial, split.unpaired);
  ASSERT_EQ(result.log.size(), 2u);
  for (const auto& s : result.log) {
    EXPECT_EQ(s.phase, "cdts");
    EXPECT_EQ(s.loss_l1, 0.0);
    EXPECT_FALSE(s.drone_purity.has_value());
    EXPECT_FALSE(s.satellite_purity.has_value());
  }
  EXPECT_THROW(run_unpaired_adaptation(cfg, initial, UnpairedPool{}), DataError);
  auto wrong = cfg;
  wrong.input_size = 32;
  EXPECT_THROW(run_unpaired_adaptation(wrong, initial, split.unpaired), ConfigError);
}

TEST(Evaluation, PerfectEmbeddingOfIdenticalViews) {
  // Zero transform and zero noise: drone views equal the satellite view.
  SyntheticSpec spec;
  spec.num_locations = 4;
  spec.drone_views_per_location = 2;
  spec.image_size = 16;
  spec.confusion = 0.0;
  spec.view_transform_strength = 0.0;
  const auto records = synthetic_records(synth_render(spec));
  CdisNet net(model_config(small_config(), 4));
  for (Direction d : {Direction::kDroneToSatellite, Direction::kSatelliteToDrone}) {
    const auto m = evaluate_model(net, records, d, 0);
    EXPECT_DOUBLE_EQ(m.r1, 1.0);
    EXPECT_DOUBLE_EQ(m.ap, 1.0);
    EXPECT_EQ(m.queries, d == Direction::kDroneToSatellite ? 8u : 4u);
  }
}

// A fresh network is at chance only when the satellites carry no signal
// about their drones. With real pairs its random features still keep colour
// similarity, so it lands well above 1/N.
TEST(Evaluation, FreshModelIsAtChanceAgainstUnrelatedSatellites) {
  double unrelated = 0.0, paired = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    SyntheticSpec spec;
    spec.num_locations = 4;
    spec.image_size = 16;
    spec.seed = 100 + s;
    auto records = synthetic_records(synth_render(spec));
    spec.seed = 900 + s;
    const auto others = synthetic_records(synth_render(spec));
    auto cfg = small_config();
    cfg.seed = s;
    CdisNet net(model_config(cfg, 4));
    paired += evaluate_model(net, records, Direction::kDroneToSatellite, 0).r1 / seeds;
    for (std::size_t l = 0; l < records.size(); ++l) records[l].satellite_images = others[l].satellite_images;
    unrelated += evaluate_model(net, records, Direction::kDroneToSatellite, 0).r1 / seeds;
  }
  EXPECT_NEAR(unrelated, 0.25, 0.1);
  EXPECT_GT(paired, unrelated + 0.2);
}

TEST(Experiment, SettingIOverfitsItsTrainingPairs) {
  SyntheticSpec spec;
  spec.num_locations = 4;
  spec.drone_views_per_location = 1;
  spec.image_size = 16;
  const auto records = synthetic_records(synth_render(spec));
  auto cfg = small_config();
  cfg.setting = Setting::kI;
  cfg.gt_ratio = 1.0;
  const auto split = split_supervision(records, 1.0, 0);
  const PairedData paired = PairedData::from_records(split.paired);
  CdisNet net(model_config(cfg, paired.size()));
  std::vector<std::pair<std::size_t, std::size_t>> batch;
  for (std::size_t l = 0; l < paired.size(); ++l) batch.push_back({l, 0});
  AdamW optimizer(cfg.lr_cdis);
  Rng rng(5);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    net.params().zero_grad();
    auto terms = l1_on_batch(net, paired, batch, cfg, rng);
    (step == 0 ? first : last) = terms.total.item();
    terms.total.backward();
    optimizer.step(net.params());
  }
  EXPECT_LT(last, 0.1 * first);
  EXPECT_DOUBLE_EQ(evaluate_model(net, records, Direction::kDroneToSatellite, 0).r1, 1.0);
}

TEST(Evaluation, ExportWritesOneRecordPerImage) {
  const auto records = small_records(2, 3);
  CdisNet net(model_config(small_config(), 2));
  const auto path = fs::temp_directory_path() / "cdikt_export_test.emb";
  export_embeddings(net, records, path);
  const auto file = read_embeddings(path);
  EXPECT_EQ(file.records.size(), 8u);
  EXPECT_EQ(file.view_tag, "mixed");
  EXPECT_EQ(file.dim, 8u);
  const auto direct = embed_records(net, records);
  for (std::size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(file.records[i].vector, direct[i].vector);
    EXPECT_EQ(file.records[i].location, direct[i].location);
  }
  export_embeddings(net, {}, path);
  EXPECT_TRUE(read_embeddings(path).records.empty());
  fs::remove(path);
}

TEST(EpochStats, JsonCarriesTheLogFields) {
  EpochStats s;
  s.phase = "cdts";
  s.drone_clusters = 3;
  s.drone_purity = 0.5;
  const auto j = s.to_json();
  for (const char* key : {"\"K\":3", "\"L\":0", "\"drone_purity\":0.5", "\"satellite_purity\":null", "\"loss_total\""}) {
    EXPECT_NE(j.find(key), std::string::npos) << key;
  }
}
