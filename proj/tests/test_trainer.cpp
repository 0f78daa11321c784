#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "pclformer/error.hpp"
#include "pclformer/io.hpp"
#include "pclformer/trainer.hpp"

using namespace pclformer;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_data(std::uint64_t seed) {
  SynthConfig s;
  s.seed = seed;
  s.n_videos = 8;
  s.T_range = {48, 64};
  s.num_classes = 2;
  s.dim = 3;
  s.n_tokens = 2;
  s.actions_per_video = {1, 2};
  s.action_len_range = {12, 16};
  return s;
}

TrainConfig tiny_train(std::uint64_t seed) {
  TrainConfig t;
  t.seed = seed;
  t.epochs = 2;
  t.learning_rate = 1e-3;
  t.window = 16;
  t.block.d_model = 8;
  t.block.n_heads = 2;
  t.block.n_layers = 1;
  t.block.mlp_hidden = 8;
  return t;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pclformer_trainer_test";
  fs::create_directories(dir);
  return dir / name;
}

// Fraction of ground-truth instances matched by a same-class prediction at tIoU >= tiou.
double coverage(const std::vector<Prediction>& preds, const Dataset& ds, double tiou) {
  std::size_t hit = 0, total = 0;
  for (const auto& ann : ds.annotations)
    for (const auto& inst : ann.instances) {
      ++total;
      for (const auto& p : preds) {
        if (p.video_id == ann.video_id && p.c == inst.c && temporal_iou(p.interval(), to_interval(inst)) >= tiou) {
          ++hit;
          break;
        }
      }
    }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

TEST(TrainerTest, AblationNamesAndProfiles) {
  for (auto a : {Ablation::complete, Ablation::cl_former, Ablation::pc_former, Ablation::no_brm}) {
    EXPECT_EQ(parse_ablation(to_string(a)), a);
  }
  EXPECT_THROW(parse_ablation("w/o"), ConfigError);
  TrainConfig cfg;
  EXPECT_EQ(cfg.learning_rate, 1e-4);
  EXPECT_EQ(cfg.weight_decay, 1e-4);
  EXPECT_EQ(cfg.batch_size, 1u);
  EXPECT_EQ(cfg.epochs, 20);
  EXPECT_EQ(cfg.post.nms_tiou, 0.4);
  apply_profile(cfg, "anet-like");
  EXPECT_EQ(cfg.post.nms_tiou, 0.5);
  EXPECT_EQ(cfg.eval_thresholds, (std::vector<double>{0.5, 0.75, 0.95}));
  apply_profile(cfg, "thumos-like");
  EXPECT_EQ(cfg.post.nms_tiou, 0.4);
  EXPECT_EQ(cfg.eval_thresholds, thumos_thresholds());
  EXPECT_THROW(apply_profile(cfg, "hacs"), ConfigError);
  EXPECT_EQ(nms_sweep(), (std::vector<double>{0.2, 0.3, 0.4, 0.5}));
  EXPECT_EQ(segment_length_sweep(), (std::vector<std::size_t>{16, 32, 64, 128}));
}

TEST(TrainerTest, DeterministicLogsAndCheckpoints) {
  const auto ds = synthesize_dataset(tiny_data(1));
  const auto cfg = tiny_train(5);
  auto a = train(cfg, ds);
  auto b = train(cfg, ds);
  ASSERT_EQ(a.log.epochs.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    const auto& la = a.log.epochs[e].loss;
    const auto& lb = b.log.epochs[e].loss;
    EXPECT_EQ(la.l_total, lb.l_total);
    EXPECT_EQ(la.l_total, la.l_softmax + cfg.lambda * la.l_overlap);
    EXPECT_EQ(la.l_softmax, la.proposal_softmax + la.classifier_softmax + la.localizer_softmax);
    EXPECT_GT(a.log.epochs[e].steps, 0u);
  }
  save_trained(scratch("a.ckpt"), a.trained);
  save_trained(scratch("b.ckpt"), b.trained);
  EXPECT_EQ(file_bytes(scratch("a.ckpt")), file_bytes(scratch("b.ckpt")));
  EXPECT_EQ(a.trained.test_videos, b.trained.test_videos);
  EXPECT_EQ(a.trained.train_videos.size() + a.trained.test_videos.size(), ds.size());

  auto other = cfg;
  other.seed = 6;
  save_trained(scratch("c.ckpt"), train(other, ds).trained);
  EXPECT_NE(file_bytes(scratch("a.ckpt")), file_bytes(scratch("c.ckpt")));
}

TEST(TrainerTest, CheckpointRoundTripReproducesInference) {
  const auto ds = synthesize_dataset(tiny_data(2));
  auto cfg = tiny_train(7);
  cfg.post.proposal_threshold = 0.0;
  cfg.post.score_threshold = 0.0;
  auto result = train(cfg, ds);
  const auto opts = default_infer_options(result.trained);
  const auto before = infer_dataset(result.trained, ds, opts);
  EXPECT_FALSE(before.empty());
  save_trained(scratch("rt.ckpt"), result.trained);
  const auto loaded = load_trained(scratch("rt.ckpt"));
  EXPECT_EQ(infer_dataset(loaded, ds, default_infer_options(loaded)), before);
  EXPECT_EQ(loaded.test_videos, result.trained.test_videos);
  EXPECT_EQ(loaded.config.seed, cfg.seed);
  // Thread count never changes the output.
  EXPECT_EQ(infer_dataset(loaded, ds, opts, 3), before);
}

TEST(TrainerTest, AblationCallAccounting) {
  const auto ds = synthesize_dataset(tiny_data(3));
  auto cfg = tiny_train(8);
  cfg.epochs = 1;
  auto result = train(cfg, ds);
  auto& model = *result.trained.model;
  auto opts = default_infer_options(result.trained);
  opts.post.proposal_threshold = 0.0;

  auto run = [&](Ablation a) {
    opts.ablation = a;
    model.reset_call_counts();
    InferStats stats;
    infer_dataset(result.trained, ds, opts, 1, &stats);
    return std::make_pair(stats, model.call_counts());
  };

  auto [pc, pc_calls] = run(Ablation::pc_former);
  EXPECT_EQ(pc_calls.localizer, 0u);
  EXPECT_GT(pc_calls.classifier, 0u);

  opts.post.proposal_threshold = 1.1;  // would discard every segment if the filter ran
  auto [cl, cl_calls] = run(Ablation::cl_former);
  EXPECT_EQ(cl_calls.proposal, 0u);
  EXPECT_EQ(cl.survivors, cl.segments);
  EXPECT_EQ(cl_calls.classifier, cl.segments);

  auto [none, none_calls] = run(Ablation::complete);
  EXPECT_EQ(none.survivors, 0u);
  EXPECT_EQ(none_calls.classifier, 0u);
  EXPECT_EQ(none_calls.localizer, 0u);
  EXPECT_TRUE(infer(result.trained, ds.features[0], opts).empty());

  opts.post.proposal_threshold = 0.0;
  auto [nb, nb_calls] = run(Ablation::no_brm);
  EXPECT_EQ(nb.brm_calls, 0u);
  EXPECT_EQ(nb.nms_calls, ds.size());
  auto [full, full_calls] = run(Ablation::complete);
  EXPECT_EQ(full.brm_calls, ds.size());
  EXPECT_EQ(full_calls.localizer, full.survivors);
}

TEST(TrainerTest, InferRejectsMismatchedFeatures) {
  const auto ds = synthesize_dataset(tiny_data(4));
  auto cfg = tiny_train(9);
  cfg.epochs = 1;
  auto result = train(cfg, ds);
  auto video = ds.features[0];
  video.dim = 4;
  video.data.resize(video.T * video.n_tokens * 4, 0.0);
  try {
    infer(result.trained, video, default_infer_options(result.trained));
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('4'), std::string::npos);
  }
}

TEST(TrainerTest, DegenerateDatasetsAreRejected) {
  auto ds = synthesize_dataset(tiny_data(5));
  auto empty = ds;
  for (auto& a : empty.annotations) a.instances.clear();
  EXPECT_THROW(train(tiny_train(1), empty), TrainingError);

  auto cfg = tiny_train(1);
  cfg.epochs = 0;
  EXPECT_THROW(train(cfg, ds), ConfigError);
}

TEST(TrainerTest, EmptyTestSplitWhenTrainingOnEverything) {
  const auto ds = synthesize_dataset(tiny_data(6));
  auto cfg = tiny_train(2);
  cfg.epochs = 1;
  cfg.train_fraction = 1.0;
  auto result = train(cfg, ds);
  EXPECT_TRUE(result.trained.test_videos.empty());
  EXPECT_EQ(test_split(cfg, ds).size(), 0u);
}

TEST(TrainerTest, AblationGridShape) {
  auto data = tiny_data(7);
  data.n_videos = 6;
  const auto ds = synthesize_dataset(data);
  auto cfg = tiny_train(3);
  cfg.epochs = 1;
  const auto grid = ablate(cfg, ds);
  for (const char* key : {"module/complete", "module/cl_former", "module/pc_former", "module/no_brm", "nms/0.2",
                          "nms/0.3", "nms/0.4", "nms/0.5"}) {
    EXPECT_EQ(grid.reports.count(key), 1u) << key;
  }
  std::size_t modules = 0, lengths = 0;
  for (const auto& [key, report] : grid.reports) {
    modules += key.rfind("module/", 0) == 0;
    lengths += key.rfind("length/", 0) == 0;
    for (double m : report.map) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
  }
  for (const auto& [key, reason] : grid.skipped) {
    lengths += key.rfind("length/", 0) == 0;
    EXPECT_FALSE(reason.empty());
  }
  EXPECT_EQ(modules, 4u);
  EXPECT_EQ(lengths, 4u);
}

// One model trained on separable data, shared by the statistical checks.
class TrainedOnSeparableData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthConfig s;
    s.seed = 31;
    s.n_videos = 24;
    s.T_range = {192, 256};
    s.num_classes = 3;
    s.action_len_range = {56, 64};
    s.actions_per_video = {1, 2};
    data_ = new Dataset(synthesize_dataset(s));
    TrainConfig t;
    t.seed = 31;
    t.epochs = 12;
    t.learning_rate = 1e-3;
    result_ = new TrainResult(train(t, *data_));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete data_;
  }
  static Dataset* data_;
  static TrainResult* result_;
};

Dataset* TrainedOnSeparableData::data_ = nullptr;
TrainResult* TrainedOnSeparableData::result_ = nullptr;

TEST_F(TrainedOnSeparableData, LossDecreases) {
  const auto& epochs = result_->log.epochs;
  EXPECT_LT(epochs.back().loss.l_total, epochs.front().loss.l_total);
}

TEST_F(TrainedOnSeparableData, HeldOutProposalAndClassAccuracy) {
  const auto& trained = result_->trained;
  const auto test = test_split(trained.config, *data_);
  NoGradGuard no_grad;
  std::size_t positives = 0, action_hits = 0, class_hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto segs = generate_segments(test.features[i], trained.config.window, trained.config.overlap_fraction);
    for (const auto& l : label_classification_data(segs, test.annotations[i])) {
      if (l.proposal_label != 1) continue;
      ++positives;
      const auto p = trained.model->proposal_forward(l.segment.features);
      action_hits += p.at(1) > 0.5;
      const auto c = trained.model->classification_forward(l.segment.features);
      std::size_t best = 1;
      for (std::size_t k = 2; k < c.numel(); ++k)
        if (c.at(k) > c.at(best)) best = k;
      class_hits += static_cast<int>(best) == l.class_label;
    }
  }
  ASSERT_GT(positives, 10u);
  EXPECT_GE(static_cast<double>(action_hits) / static_cast<double>(positives), 0.9);
  EXPECT_GE(static_cast<double>(class_hits) / static_cast<double>(positives), 0.9);
}

TEST_F(TrainedOnSeparableData, LocalizerPrefersHigherOverlap) {
  const auto& trained = result_->trained;
  NoGradGuard no_grad;
  double high = 0.0, mid = 0.0;
  std::size_t n_high = 0, n_mid = 0;
  for (std::size_t i = 0; i < data_->size(); ++i) {
    const auto& ann = data_->annotations[i];
    // Windows at every frame offset give a dense spread of overlaps.
    const auto segs = generate_segments(data_->features[i], trained.config.window, 63.0 / 64.0);
    for (const auto& seg : segs) {
      const auto m = best_instance(seg.span(), ann);
      if (m.instance < 0 || m.iou < 0.7) continue;
      const int c = ann.instances[static_cast<std::size_t>(m.instance)].c;
      const double conf = trained.model->localization_forward(seg.features).at(static_cast<std::size_t>(c));
      if (m.iou >= 0.9) {
        high += conf;
        ++n_high;
      } else if (m.iou < 0.8) {
        mid += conf;
        ++n_mid;
      }
    }
  }
  ASSERT_GT(n_high, 0u);
  ASSERT_GT(n_mid, 0u);
  EXPECT_GT(high / static_cast<double>(n_high), mid / static_cast<double>(n_mid));
}

TEST(TrainerNoiseFree, PredictionsCoverGroundTruth) {
  SynthConfig s;
  s.seed = 41;
  s.n_videos = 24;
  s.T_range = {320, 448};
  s.num_classes = 3;
  s.noise_sigma = 0.0;
  // Same shape as the benchmark set: actions longer than a window, separated by background.
  s.action_len_range = {64, 96};
  s.actions_per_video = {1, 3};
  s.min_gap = 8;
  const auto ds = synthesize_dataset(s);
  TrainConfig t;
  t.seed = 41;
  t.epochs = 12;
  t.learning_rate = 1e-3;
  auto result = train(t, ds);
  const auto test = test_split(t, ds);
  const auto preds = infer_dataset(result.trained, test, default_infer_options(result.trained));
  EXPECT_GE(coverage(preds, test, 0.5), 0.9);
}
