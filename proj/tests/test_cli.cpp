#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "pclformer_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run(const std::string& args) {
  const auto out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd =
      std::string("\"") + PCLFORMER_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const char* synth_config = R"({"seed": 5, "n_videos": 6, "T_range": [48, 64], "num_classes": 2, "dim": 3,
  "n_tokens": 2, "actions_per_video": [1, 2], "action_len_range": [12, 16], "min_gap": 4})";

const char* train_config = R"({"seed": 5, "epochs": 2, "learning_rate": 0.001, "window": 16,
  "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "mlp_hidden": 16}})";

// Builds the dataset and one trained run shared by most tests.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto dir = work_dir();
    spit(dir / "synth.json", synth_config);
    spit(dir / "train.json", train_config);
    ASSERT_EQ(run("synth --config " + q(dir / "synth.json") + " --out " + q(dir / "data")).code, 0);
    const auto r = run("train --config " + q(dir / "train.json") + " --data " + q(dir / "data") + " --out " +
                       q(dir / "run"));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path dir() { return work_dir(); }
};

json manifest(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_F(CliTest, HelpListsEveryFlagWithDefaults) {
  const auto top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* cmd : {"synth", "train", "infer", "eval", "ablate"}) {
    EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
    const auto r = run(std::string(cmd) + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const char* flag : {"--config", "--seed", "--out", "--profile", "--threads"}) {
      EXPECT_NE(r.out.find(flag), std::string::npos) << cmd << " " << flag;
    }
    EXPECT_NE(r.out.find("[1]"), std::string::npos) << cmd << " shows the --threads default";
  }
  const auto infer = run("infer --help");
  EXPECT_NE(infer.out.find("[test]"), std::string::npos);
  const auto eval = run("eval --help");
  EXPECT_NE(eval.out.find("[csv]"), std::string::npos);
  EXPECT_NE(eval.out.find("--thresholds"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("synth --out " + q(dir() / "x") + " --bogus 1").code, 2);
  EXPECT_EQ(run("train --data " + q(dir() / "missing") + " --out " + q(dir() / "x")).code, 2);
}

TEST_F(CliTest, MissingSeedNamesTheField) {
  spit(dir() / "noseed.json", R"({"n_videos": 3})");
  const auto r = run("synth --config " + q(dir() / "noseed.json") + " --out " + q(dir() / "noseed"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
  // The same document is fine once the seed comes from the command line.
  EXPECT_EQ(run("synth --config " + q(dir() / "noseed.json") + " --seed 3 --out " + q(dir() / "seeded")).code, 0);

  spit(dir() / "badfield.json", R"({"seed": 1, "n_videos": "many"})");
  const auto bad = run("synth --config " + q(dir() / "badfield.json") + " --out " + q(dir() / "bad"));
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("n_videos"), std::string::npos);
}

TEST_F(CliTest, SynthIsDeterministic) {
  ASSERT_EQ(run("synth --config " + q(dir() / "synth.json") + " --out " + q(dir() / "data2")).code, 0);
  const auto a = manifest(dir() / "data" / "manifest.json"), b = manifest(dir() / "data2" / "manifest.json");
  EXPECT_EQ(a["outputs"]["dataset"]["sha256"], b["outputs"]["dataset"]["sha256"]);
  EXPECT_EQ(a["config"], b["config"]);
  EXPECT_EQ(a["command"], "synth");
  EXPECT_TRUE(a.contains("tool_version"));
  EXPECT_EQ(slurp(dir() / "data" / "annotations.json"), slurp(dir() / "data2" / "annotations.json"));
}

TEST_F(CliTest, TrainWritesArtifactsAndResolvedProfile) {
  for (const char* f : {"checkpoint.bin", "train_log.json", "test_annotations.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir() / "run" / f)) << f;
  }
  const auto m = manifest(dir() / "run" / "manifest.json");
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["config"]["profile"], "thumos-like");
  EXPECT_EQ(m["config"]["nms_tiou"], 0.4);
  EXPECT_EQ(m["config"]["eval_thresholds"].size(), 7u);
  EXPECT_EQ(m["config"]["epochs"], 2);
  EXPECT_EQ(json::parse(slurp(dir() / "run" / "train_log.json"))["epochs"].size(), 2u);

  const auto r = run("train --config " + q(dir() / "train.json") + " --profile anet-like --epochs 1 --data " +
                     q(dir() / "data") + " --out " + q(dir() / "run_anet"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = manifest(dir() / "run_anet" / "manifest.json");
  EXPECT_EQ(a["config"]["profile"], "anet-like");
  EXPECT_EQ(a["config"]["nms_tiou"], 0.5);
  EXPECT_EQ(a["config"]["eval_thresholds"], json::parse("[0.5, 0.75, 0.95]"));
  EXPECT_EQ(a["config"]["epochs"], 1);
  // A one-epoch checkpoint loads and runs.
  EXPECT_EQ(run("infer --checkpoint " + q(dir() / "run_anet" / "checkpoint.bin") + " --data " + q(dir() / "data") +
                " --out " + q(dir() / "anet_preds.json"))
                .code,
            0);
}

TEST_F(CliTest, TrainThenInferIsByteReproducible) {
  const auto r = run("train --config " + q(dir() / "train.json") + " --data " + q(dir() / "data") + " --out " +
                     q(dir() / "run2"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir() / "run" / "checkpoint.bin"), slurp(dir() / "run2" / "checkpoint.bin"));
  EXPECT_EQ(slurp(dir() / "run" / "train_log.json"), slurp(dir() / "run2" / "train_log.json"));
  const auto ma = manifest(dir() / "run" / "manifest.json"), mb = manifest(dir() / "run2" / "manifest.json");
  for (const char* role : {"checkpoint", "train_log", "test_annotations"}) {
    EXPECT_EQ(ma["outputs"][role]["sha256"], mb["outputs"][role]["sha256"]) << role;
  }

  for (const char* name : {"p1.json", "p2.json"}) {
    ASSERT_EQ(run("infer --checkpoint " + q(dir() / "run" / "checkpoint.bin") + " --data " + q(dir() / "data") +
                  " --threads 2 --out " + q(dir() / name))
                  .code,
              0);
  }
  EXPECT_EQ(slurp(dir() / "p1.json"), slurp(dir() / "p2.json"));
  EXPECT_TRUE(fs::exists(dir() / "p1.manifest.json"));
}

TEST_F(CliTest, ManifestReplayReproducesTheCheckpoint) {
  const auto r = run("train --config " + q(dir() / "run" / "manifest.json") + " --data " + q(dir() / "data") +
                     " --out " + q(dir() / "replay"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir() / "run" / "checkpoint.bin"), slurp(dir() / "replay" / "checkpoint.bin"));
}

TEST_F(CliTest, NoBrmAblationBypassesRefinement) {
  const auto complete = run("infer --checkpoint " + q(dir() / "run" / "checkpoint.bin") + " --data " +
                            q(dir() / "data") + " --out " + q(dir() / "complete.json"));
  ASSERT_EQ(complete.code, 0);
  EXPECT_EQ(complete.err.find("brm calls 0"), std::string::npos);
  const auto r = run("infer --checkpoint " + q(dir() / "run" / "checkpoint.bin") + " --data " + q(dir() / "data") +
                     " --ablation no_brm --out " + q(dir() / "nobrm.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("brm calls 0"), std::string::npos) << r.err;
  EXPECT_EQ(manifest(dir() / "nobrm.manifest.json")["config"]["ablation"], "no_brm");
  EXPECT_EQ(run("infer --checkpoint " + q(dir() / "run" / "checkpoint.bin") + " --data " + q(dir() / "data") +
                " --ablation no_proposals --out " + q(dir() / "bad.json"))
                .code,
            2);
}

TEST_F(CliTest, EmptyTestSplitGivesEmptyPredictionFile) {
  spit(dir() / "all.json", R"({"seed": 5, "epochs": 1, "train_fraction": 1.0, "window": 16,
    "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "mlp_hidden": 16}})");
  ASSERT_EQ(run("train --config " + q(dir() / "all.json") + " --data " + q(dir() / "data") + " --out " +
                q(dir() / "run_all"))
                .code,
            0);
  ASSERT_EQ(run("infer --checkpoint " + q(dir() / "run_all" / "checkpoint.bin") + " --data " + q(dir() / "data") +
                " --out " + q(dir() / "empty.json"))
                .code,
            0);
  EXPECT_EQ(json::parse(slurp(dir() / "empty.json")), json::array());
}

TEST_F(CliTest, IncompatibleFeaturesExitTwoWithDims) {
  spit(dir() / "wide.json", R"({"seed": 6, "n_videos": 2, "T_range": [48, 64], "num_classes": 2, "dim": 4,
    "n_tokens": 2, "actions_per_video": [1, 1], "action_len_range": [12, 16]})");
  ASSERT_EQ(run("synth --config " + q(dir() / "wide.json") + " --out " + q(dir() / "wide")).code, 0);
  const auto r = run("infer --videos all --checkpoint " + q(dir() / "run" / "checkpoint.bin") + " --data " +
                     q(dir() / "wide") + " --out " + q(dir() / "wide.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("expected"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("found"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find('3'), std::string::npos);
  EXPECT_NE(r.err.find('4'), std::string::npos);
}

TEST_F(CliTest, DivergentTrainingExitsThreeWithEpoch) {
  spit(dir() / "diverge.json", R"({"seed": 5, "epochs": 4, "learning_rate": 1e300, "window": 16,
    "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "mlp_hidden": 16}})");
  const auto r = run("train --config " + q(dir() / "diverge.json") + " --data " + q(dir() / "data") + " --out " +
                     q(dir() / "diverge"));
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("epoch"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalIsStableUnderReorderingAndExpandsThresholds) {
  const auto preds_path = dir() / "all_preds.json";
  ASSERT_EQ(run("infer --videos all --checkpoint " + q(dir() / "run" / "checkpoint.bin") + " --data " +
                q(dir() / "data") + " --out " + q(preds_path))
                .code,
            0);
  auto preds = json::parse(slurp(preds_path));
  ASSERT_GT(preds.size(), 1u);
  std::reverse(preds.begin(), preds.end());
  spit(dir() / "reversed.json", preds.dump());
  const auto ann = q(dir() / "data" / "annotations.json");
  ASSERT_EQ(run("eval --predictions " + q(preds_path) + " --annotations " + ann + " --thresholds 0.1:0.1:0.7 --out " +
                q(dir() / "r1.csv"))
                .code,
            0);
  ASSERT_EQ(run("eval --predictions " + q(dir() / "reversed.json") + " --annotations " + ann + " --out " +
                q(dir() / "r2.csv"))
                .code,
            0);
  const auto report = slurp(dir() / "r1.csv");
  EXPECT_EQ(report, slurp(dir() / "r2.csv"));
  std::size_t map_rows = 0;
  std::istringstream lines(report);
  for (std::string line; std::getline(lines, line);) map_rows += line.rfind("mAP,", 0) == 0;
  EXPECT_EQ(map_rows, 7u);
  EXPECT_EQ(manifest(dir() / "r1.manifest.json")["config"]["eval_thresholds"],
            json::parse("[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]"));
}

TEST_F(CliTest, EvalRejectsUnknownVideos) {
  spit(dir() / "stray.json",
       R"([{"video_id": "nowhere_1", "t_s": 0, "t_e": 4, "class": 1, "score": 0.5},
           {"video_id": "nowhere_2", "t_s": 0, "t_e": 4, "class": 1, "score": 0.5}])");
  const auto r = run("eval --predictions " + q(dir() / "stray.json") + " --annotations " +
                     q(dir() / "data" / "annotations.json") + " --out " + q(dir() / "stray.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nowhere_1"), std::string::npos);
  EXPECT_NE(r.err.find("nowhere_2"), std::string::npos);
}

TEST_F(CliTest, PerfectPredictionsScoreOne) {
  const auto ann = json::parse(slurp(dir() / "data" / "annotations.json"));
  json preds = json::array();
  for (const auto& v : ann["videos"]) {
    for (const auto& inst : v["instances"]) {
      preds.push_back(
          {{"video_id", v["video_id"]}, {"t_s", inst["t_s"]}, {"t_e", inst["t_e"]}, {"class", inst["c"]}, {"score", 1.0}});
    }
  }
  spit(dir() / "perfect.json", preds.dump());
  ASSERT_EQ(run("eval --format plotdata --predictions " + q(dir() / "perfect.json") + " --annotations " +
                q(dir() / "data" / "annotations.json") + " --out " + q(dir() / "perfect.dat"))
                .code,
            0);
  const auto text = slurp(dir() / "perfect.dat");
  const auto pos = text.find("Avg ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_DOUBLE_EQ(std::stod(text.substr(pos + 4)), 1.0);
}
