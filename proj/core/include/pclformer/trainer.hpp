#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pclformer/losses.hpp"
#include "pclformer/metrics.hpp"
#include "pclformer/model.hpp"
#include "pclformer/postprocess.hpp"
#include "pclformer/synth.hpp"

namespace pclformer {

enum class Ablation { complete, cl_former, pc_former, no_brm };

std::string to_string(Ablation a);
// Accepts complete, cl_former, pc_former, no_brm. Throws ConfigError.
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 1;  // videos per optimizer step
  double lambda = 0.5;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::complete;
  std::size_t window = 64;
  double overlap_fraction = 0.5;
  double train_fraction = 0.5;   // 1.0 trains on every video
  double negative_ratio = 3.0;   // negatives kept per positive, per sub-task and video
  bool independent_subnetworks = false;
  std::string profile = "thumos-like";
  std::vector<double> eval_thresholds = thumos_thresholds();
  BlockConfig block;             // block.t_len follows `window`
  PostprocessConfig post;        // post.nms_tiou is the NMS threshold

  void validate() const;
  ModelConfig model_config(std::size_t input_dim, std::size_t n_tokens, int num_classes) const;
};

// Applies a named dataset profile: thumos-like (NMS 0.4, tIoU 0.1..0.7) or
// anet-like (NMS 0.5, tIoU {0.5, 0.75, 0.95}). Throws ConfigError.
void apply_profile(TrainConfig& cfg, const std::string& profile);

struct EpochRecord {
  int epoch = 0;
  std::size_t steps = 0;
  LossReport loss;  // means over the epoch's steps
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

// A trained PCL-Former with everything inference needs.
struct TrainedModel {
  TrainConfig config;
  int num_classes = 0;
  std::size_t input_dim = 0;
  std::size_t n_tokens = 0;
  std::vector<std::string> train_videos;
  std::vector<std::string> test_videos;
  std::unique_ptr<PCLFormer> model;
};

struct TrainResult {
  TrainedModel trained;
  TrainLog log;
};

// Splits `dataset` by (train_fraction, seed), then runs AdamW on the
// combined objective, one step per `batch_size` videos. Throws
// TrainingError when a sub-task lacks positives or negatives and
// NumericalError on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const Dataset& dataset);

struct InferOptions {
  Ablation ablation = Ablation::complete;
  PostprocessConfig post;
};

struct InferStats {
  std::size_t segments = 0;
  std::size_t survivors = 0;
  std::size_t brm_calls = 0;
  std::size_t nms_calls = 0;
};

InferOptions default_infer_options(const TrainedModel& trained);

// Segments -> proposal filter -> classify and localize survivors -> score
// -> BRM -> NMS. Throws CheckpointError when the features do not match.
std::vector<Prediction> infer(const TrainedModel& trained, const VideoFeatures& video, const InferOptions& options,
                              InferStats* stats = nullptr);

// Runs infer over every video, spread over `threads` workers; the result
// is in dataset order regardless of thread count.
std::vector<Prediction> infer_dataset(const TrainedModel& trained, const Dataset& dataset,
                                      const InferOptions& options, std::size_t threads = 1,
                                      InferStats* stats = nullptr);

struct AblationResult {
  std::map<std::string, MetricsReport> reports;  // keyed "module/<name>", "nms/<t>", "length/<L>"
  std::map<std::string, std::string> skipped;    // cells whose training was impossible, with the reason
};

std::vector<double> nms_sweep();
std::vector<std::size_t> segment_length_sweep();

// Evaluates the module grid {cl_former, pc_former, no_brm, complete}, the
// NMS sweep, and the segment-length sweep on the held-out split.
AblationResult ablate(const TrainConfig& base, const Dataset& dataset, std::size_t threads = 1);

// Held-out side of the split used by train().
Dataset test_split(const TrainConfig& cfg, const Dataset& dataset);

// Checkpoint I/O for trained models; round-trips bit-exactly.
void save_trained(const std::filesystem::path& path, const TrainedModel& trained);
TrainedModel load_trained(const std::filesystem::path& path);

}  // namespace pclformer
