#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>

#include "cdikt/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("cdikt_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" CDIKT_CLI "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  // Tiny model and images so a full train command takes about a second.
  static std::string small() {
    return "--set model.input_size=32 --set model.widths=4,8 --set batch_size=4 ";
  }

  void synth(const std::string& name, int locations = 6, int style = 0) const {
    ASSERT_EQ(run("synth --out " + name + " --locations " + std::to_string(locations) +
                  " --views 4 --size 32 --seed 3 --style " + std::to_string(style))
                  .code,
              0);
  }

  static std::vector<nlohmann::json> jsonl(const fs::path& p) {
    std::vector<nlohmann::json> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
    return rows;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SynthIsDeterministicAndLoads) {
  ASSERT_EQ(run("synth --out a --locations 8 --seed 7 --size 32").code, 0);
  ASSERT_EQ(run("synth --out b --locations 8 --seed 7 --size 32").code, 0);
  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), path("a"));
    EXPECT_EQ(slurp(e.path()), slurp(path("b") / rel)) << rel;
    files.insert(rel.string());
  }
  EXPECT_FALSE(files.empty());
  const auto report = cdikt::load_dataset(path("a"), 32);
  EXPECT_EQ(report.records.size(), 8u);
  EXPECT_TRUE(report.rejected.empty());
}

TEST_F(Cli, MissingOutputIsAUsageError) {
  EXPECT_EQ(run("synth --locations 8").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --setting bogus --data x --out y").code, 2);
}

TEST_F(Cli, ConfigPrecedence) {
  std::ofstream(path("run.cfg")) << "# test\nseed = 5\nmemory.momentum = 0.3\n";
  auto r = run("train --config run.cfg --print-config");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("seed = 5"), std::string::npos);
  EXPECT_NE(r.out.find("memory.momentum = 0.3"), std::string::npos);
  EXPECT_NE(r.out.find("batch_size = 16"), std::string::npos);  // default
  r = run("train --config run.cfg --set seed=6 --print-config");
  EXPECT_NE(r.out.find("seed = 6"), std::string::npos);
  r = run("train --config run.cfg --set seed=6 --seed 7 --print-config");
  EXPECT_NE(r.out.find("seed = 7"), std::string::npos);
  std::ofstream(path("bad.cfg")) << "seed = 1\nnot_a_key = 2\n";
  r = run("train --config bad.cfg --print-config");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, FullySupervisedRunNeverClusters) {
  synth("data");
  auto r = run("train --data data --setting i --gt-ratio 1.0 --out run " + small() + "--set epochs.cdis=2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = jsonl(path("run/train_log.jsonl"));
  ASSERT_EQ(log.size(), 2u);
  for (const auto& row : log) EXPECT_EQ(row["phase"], "cdis");
  for (const char* f : {"model.ckpt", "report.json", "manifest.json", "config.txt", "split.txt"}) {
    EXPECT_TRUE(fs::exists(path("run") / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(slurp(path("run/manifest.json")));
  for (const char* key : {"build", "config", "split", "timings_seconds", "command"}) {
    EXPECT_TRUE(manifest.contains(key)) << key;
  }
  EXPECT_EQ(manifest["split"]["paired"].size(), 6u);
}

TEST_F(Cli, FewShotRunTransfersAfterOneSupervisedEpoch) {
  synth("data", 10);
  auto r = run("train --data data --setting ii --gt-ratio 0.2 --out run " + small() +
               "--set epochs.cdts=3 --set dbscan.eps_drone=0.05 --set dbscan.eps_satellite=0.05");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = jsonl(path("run/train_log.jsonl"));
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0]["phase"], "cdis");
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(log[i]["phase"], "cdts");
  const auto manifest = nlohmann::json::parse(slurp(path("run/manifest.json")));
  EXPECT_EQ(manifest["split"]["paired"].size(), 2u);
}

TEST_F(Cli, ResolvedConfigReplaysBitExactly) {
  synth("data", 8);
  const std::string common = small() + "--set epochs.cdts=2 --set dbscan.eps_drone=0.05 ";
  ASSERT_EQ(run("train --data data --gt-ratio 0.25 --out one " + common).code, 0);
  ASSERT_EQ(run("train --config one/config.txt --out two").code, 0);
  EXPECT_EQ(slurp(path("one/model.ckpt")), slurp(path("two/model.ckpt")));
  EXPECT_EQ(slurp(path("one/report.json")), slurp(path("two/report.json")));
  // Worker count does not change results.
  ASSERT_EQ(run("--threads 3 train --config one/config.txt --out three").code, 0);
  EXPECT_EQ(slurp(path("one/model.ckpt")), slurp(path("three/model.ckpt")));
}

TEST_F(Cli, CollapseInEveryEpochGetsItsOwnExitCode) {
  synth("data", 8);
  auto r = run("train --data data --gt-ratio 0.25 --out run " + small() +
               "--set epochs.cdts=2 --set dbscan.eps_drone=0 --set dbscan.eps_satellite=0");
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("collapsed"), std::string::npos);
}

TEST_F(Cli, UnpairedAdaptationNeedsACheckpointAndIgnoresFolderNames) {
  synth("a", 6, 0);
  synth("b", 6, 1);
  EXPECT_EQ(run("train --setting iii --gt-ratio 0 --data b --out x").code, 2);
  ASSERT_EQ(run("train --data a --gt-ratio 0.5 --out src " + small() + "--set epochs.cdts=1").code, 0);
  // Same images under different location names, in the same sorted order.
  fs::create_directories(path("renamed"));
  for (const auto& e : fs::directory_iterator(path("b"))) {
    fs::copy(e.path(), path("renamed") / ("Z" + e.path().filename().string()), fs::copy_options::recursive);
  }
  const std::string adapt = "--setting iii --gt-ratio 0 --init-checkpoint src/model.ckpt " + small() +
                            "--set epochs.cdts=2 --set dbscan.eps_drone=0.05 --set dbscan.eps_satellite=0.05 ";
  auto r = run("train --data b --out adapted " + adapt);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run("train --data renamed --out adapted2 " + adapt).code, 0);
  EXPECT_EQ(slurp(path("adapted/model.ckpt")), slurp(path("adapted2/model.ckpt")));
  EXPECT_NE(slurp(path("adapted/model.ckpt")), slurp(path("src/model.ckpt")));
  for (const auto& row : jsonl(path("adapted/train_log.jsonl"))) EXPECT_EQ(row["phase"], "cdts");
  // A checkpoint of another input size cannot seed the run.
  EXPECT_EQ(run("train --data b --out bad " + adapt + "--set model.input_size=48").code, 2);
}

TEST_F(Cli, EvalReportsBothDirectionsAndDiagnosesMismatch) {
  synth("data");
  ASSERT_EQ(run("train --data data --setting i --gt-ratio 1 --out run " + small()).code, 0);
  auto r = run("eval --checkpoint run/model.ckpt --data data --report rep.json --embeddings emb.txt");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = nlohmann::json::parse(slurp(path("rep.json")));
  for (const char* d : {"d2s", "s2d"}) {
    for (const char* col : {"R@1", "R@5", "R@10", "AP", "overlap"}) EXPECT_TRUE(rep[d].contains(col)) << d << col;
  }
  EXPECT_TRUE(fs::exists(path("emb.txt")));
  EXPECT_EQ(run("eval --checkpoint run/model.ckpt --data data --direction sideways").code, 2);
  EXPECT_EQ(run("eval --checkpoint missing.ckpt --data data").code, 5);
  std::ofstream(path("other.cfg")) << "model.widths = 4,12\nmodel.input_size = 32\n";
  r = run("eval --checkpoint run/model.ckpt --data data --config other.cfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("does not match"), std::string::npos);
}

TEST_F(Cli, ClusterCommand) {
  std::ofstream(path("four.txt")) << "2 4 d\na d - 0.6 0.8\nb d - 0.6 0.8\nc d - 0.6 0.8\nd d - 0.6 0.8\n";
  auto r = run("cluster --embeddings four.txt --eps 0.4 --min-samples 4 --out labels.txt --summary sum.json");
  ASSERT_EQ(r.code, 0) << r.err;
  auto summary = nlohmann::json::parse(slurp(path("sum.json")));
  EXPECT_EQ(summary["clusters"], 1);
  EXPECT_EQ(slurp(path("labels.txt")), "a 0\nb 0\nc 0\nd 0\n");
  r = run("cluster --embeddings four.txt --eps 0 --summary sum0.json");
  ASSERT_EQ(r.code, 0);
  summary = nlohmann::json::parse(slurp(path("sum0.json")));
  EXPECT_EQ(summary["clusters"], 0);
  EXPECT_EQ(summary["noise"], 4);

  std::ofstream(path("two.txt")) << "2 8 d\n"
                                 << "a d - 1 0\nb d - 1 0\nc d - 1 0\nd d - 1 0\n"
                                 << "e d - 0 1\nf d - 0 1\ng d - 0 1\nh d - 0 1\n";
  ASSERT_EQ(run("cluster --embeddings two.txt --eps 0.1 --out l2.txt --summary s2.json").code, 0);
  std::set<std::string> distinct;
  std::istringstream labels(slurp(path("l2.txt")));
  std::string id, label;
  while (labels >> id >> label) {
    if (label != "-1") distinct.insert(label);
  }
  EXPECT_EQ(nlohmann::json::parse(slurp(path("s2.json")))["clusters"], distinct.size());
  EXPECT_EQ(distinct.size(), 2u);

  std::ofstream(path("broken.txt")) << "2 2 d\na d - 1 0\nb d -\n";
  r = run("cluster --embeddings broken.txt");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST_F(Cli, SelfcheckPassesAndNamesAnInjectedFault) {
  auto r = run("selfcheck");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("selfcheck passed"), std::string::npos);
  r = run("selfcheck --inject-fault conv2d_depthwise");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("FAIL gradient"), std::string::npos);
  EXPECT_NE(r.out.find("conv2d_depthwise seed"), std::string::npos) << r.out;
}
