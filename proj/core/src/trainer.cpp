#include "pclformer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "pclformer/checkpoint.hpp"
#include "pclformer/config.hpp"
#include "pclformer/error.hpp"
#include "pclformer/ops.hpp"
#include "pclformer/optimizer.hpp"
#include "pclformer/random.hpp"

namespace pclformer {

using nlohmann::json;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::complete: return "complete";
    case Ablation::cl_former: return "cl_former";
    case Ablation::pc_former: return "pc_former";
    case Ablation::no_brm: return "no_brm";
  }
  return "complete";
}

Ablation parse_ablation(const std::string& name) {
  for (auto a : {Ablation::complete, Ablation::cl_former, Ablation::pc_former, Ablation::no_brm}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation '" + name + "' (expected complete, cl_former, pc_former or no_brm)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("config field 'epochs' must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("config field 'learning_rate' must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("config field 'weight_decay' must be >= 0");
  if (batch_size < 1) throw ConfigError("config field 'batch_size' must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("config field 'lambda' must be >= 0");
  if (!(alpha > 0.0)) throw ConfigError("config field 'alpha' must be > 0");
  if (window < 1) throw ConfigError("config field 'window' must be >= 1");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw ConfigError("config field 'overlap_fraction' must lie in [0, 1)");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("config field 'train_fraction' must lie in (0, 1]");
  }
  if (!(negative_ratio > 0.0)) throw ConfigError("config field 'negative_ratio' must be > 0");
  if (!(post.nms_tiou > 0.0 && post.nms_tiou < 1.0)) throw ConfigError("config field 'nms_tiou' must lie in (0, 1)");
  if (!(post.proposal_threshold >= 0.0 && post.proposal_threshold <= 1.0)) {
    throw ConfigError("config field 'proposal_threshold' must lie in [0, 1]");
  }
  if (!(post.merge_iou > 0.0 && post.merge_iou <= 1.0)) throw ConfigError("config field 'merge_iou' must lie in (0, 1]");
  if (eval_thresholds.empty()) throw ConfigError("config field 'eval_thresholds' must not be empty");
  for (double t : eval_thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("config field 'eval_thresholds' values must lie in (0, 1)");
  }
  BlockConfig b = block;
  b.t_len = window;
  try {
    b.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig TrainConfig::model_config(std::size_t input_dim, std::size_t n_tokens, int num_classes) const {
  ModelConfig m;
  m.block = block;
  m.block.t_len = window;
  m.block.n_tokens = n_tokens;
  m.input_dim = input_dim;
  m.num_classes = static_cast<std::size_t>(num_classes);
  m.alpha = alpha;
  m.lambda = lambda;
  m.seed = derive_key(seed, "model");
  return m;
}

void apply_profile(TrainConfig& cfg, const std::string& profile) {
  if (profile == "thumos-like") {
    cfg.post.nms_tiou = 0.4;
    cfg.eval_thresholds = thumos_thresholds();
  } else if (profile == "anet-like") {
    cfg.post.nms_tiou = 0.5;
    cfg.eval_thresholds = anet_thresholds();
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected thumos-like or anet-like)");
  }
  cfg.profile = profile;
}

namespace {

std::pair<Dataset, Dataset> split_for(const TrainConfig& cfg, const Dataset& dataset) {
  if (cfg.train_fraction >= 1.0) {
    Dataset empty;
    empty.num_classes = dataset.num_classes;
    empty.n_tokens = dataset.n_tokens;
    empty.dim = dataset.dim;
    return {dataset, std::move(empty)};
  }
  return split_dataset(dataset, cfg.train_fraction, derive_key(cfg.seed, "split"));
}

std::vector<std::string> video_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& a : ds.annotations) ids.push_back(a.video_id);
  return ids;
}

// One training example for one sub-task.
struct Example {
  std::size_t segment = 0;
  std::size_t label = 0;          // softmax target
  std::size_t overlap_label = 0;  // class of the max-IoU instance, for the overlap term
  double v = 0.0;
  bool positive = false;          // side of the negative cap this example counts on
  bool in_softmax = true;         // mid-band localizer examples only feed the overlap term
};

struct VideoExamples {
  std::vector<Segment> segments;
  std::vector<Example> proposal;
  std::vector<Example> classifier;
  std::vector<Example> localizer;
};

VideoExamples build_examples(const VideoFeatures& feat, const VideoAnnotation& ann, const TrainConfig& cfg) {
  VideoExamples ex;
  ex.segments = generate_segments(feat, cfg.window, cfg.overlap_fraction);
  for (std::size_t i = 0; i < ex.segments.size(); ++i) {
    const BestMatch m = best_instance(ex.segments[i].span(), ann);
    const std::size_t cls = m.instance >= 0 ? static_cast<std::size_t>(ann.instances[m.instance].c) : 0;
    const bool pos = m.iou > kPositiveIoU;
    const bool neg = m.iou < kNegativeIoU;
    if (pos || neg) {
      ex.proposal.push_back({i, pos ? 1u : 0u, 0, m.iou, pos, true});
      ex.classifier.push_back({i, pos ? cls : 0, 0, m.iou, pos, true});
    }
    ex.localizer.push_back({i, pos ? cls : 0, cls, m.iou, !neg, pos || neg});
  }
  return ex;
}

// Keeps every positive and at most ratio * max(1, positives) negatives,
// chosen by a seeded partial shuffle; the result keeps segment order.
std::vector<Example> balance(const std::vector<Example>& all, double ratio, CounterRng& rng) {
  std::vector<Example> pos, neg;
  for (const auto& e : all) (e.positive ? pos : neg).push_back(e);
  const auto cap = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(std::max<std::size_t>(1, pos.size()))));
  if (neg.size() > cap) {
    for (std::size_t i = 0; i < cap; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(neg.size() - 1)));
      std::swap(neg[i], neg[j]);
    }
    neg.resize(cap);
  }
  std::vector<Example> out = std::move(pos);
  out.insert(out.end(), neg.begin(), neg.end());
  std::sort(out.begin(), out.end(), [](const Example& a, const Example& b) { return a.segment < b.segment; });
  return out;
}

void require_both(const std::vector<VideoExamples>& videos, std::vector<Example> VideoExamples::*member,
                  const char* task) {
  bool pos = false, neg = false;
  for (const auto& v : videos) {
    for (const auto& e : v.*member) {
      if (e.in_softmax) (e.label > 0 ? pos : neg) = true;
    }
  }
  if (!pos || !neg) {
    throw TrainingError(std::string("training split has no ") + (pos ? "negative" : "positive") + " segments for the " +
                        task + " (window too long or short for the annotated actions?)");
  }
}

struct StepTerms {
  Tensor loss;
  LossReport report;
  bool empty = true;
};

StepTerms video_loss(const PCLFormer& model, const TrainConfig& cfg, const VideoExamples& ex, CounterRng& rng) {
  StepTerms out;
  const auto prop = balance(ex.proposal, cfg.negative_ratio, rng);
  const auto cls = balance(ex.classifier, cfg.negative_ratio, rng);
  const auto loc = balance(ex.localizer, cfg.negative_ratio, rng);
  const bool use_proposal = cfg.ablation != Ablation::cl_former;
  const bool use_localizer = cfg.ablation != Ablation::pc_former;

  std::vector<Tensor> terms;
  auto softmax_term = [&](const std::vector<Example>& items, auto forward, double& slot) {
    if (items.empty()) return;
    std::vector<Tensor> probs;
    std::vector<std::size_t> labels;
    for (const auto& e : items) {
      probs.push_back((model.*forward)(ex.segments[e.segment].features));
      labels.push_back(e.label);
    }
    Tensor l = softmax_loss(probs, labels);
    slot = l.item();
    terms.push_back(l);
    return;
  };
  if (use_proposal) softmax_term(prop, &PCLFormer::proposal_forward, out.report.proposal_softmax);
  softmax_term(cls, &PCLFormer::classification_forward, out.report.classifier_softmax);
  if (use_localizer && !loc.empty()) {
    std::vector<Tensor> probs, banded;
    std::vector<std::size_t> labels, overlap_labels;
    std::vector<double> vs;
    for (const auto& e : loc) {
      probs.push_back(model.localization_forward(ex.segments[e.segment].features));
      overlap_labels.push_back(e.overlap_label);
      vs.push_back(e.v);
      if (e.in_softmax) {
        banded.push_back(probs.back());
        labels.push_back(e.label);
      }
    }
    Tensor ls = softmax_loss(banded, labels);
    Tensor lo = overlap_loss(probs, overlap_labels, vs, cfg.alpha);
    out.report.localizer_softmax = ls.item();
    out.report.localizer_overlap = lo.item();
    terms.push_back(ls);
    terms.push_back(ops::scale(lo, cfg.lambda));
  }
  out.report.finalize(cfg.lambda);
  if (terms.empty()) return out;
  out.empty = false;
  out.loss = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.loss = ops::add(out.loss, terms[i]);
  return out;
}

void accumulate(LossReport& into, const LossReport& r) {
  into.proposal_softmax += r.proposal_softmax;
  into.classifier_softmax += r.classifier_softmax;
  into.localizer_softmax += r.localizer_softmax;
  into.localizer_overlap += r.localizer_overlap;
}

}  // namespace

Dataset test_split(const TrainConfig& cfg, const Dataset& dataset) { return split_for(cfg, dataset).second; }

TrainResult train(const TrainConfig& cfg_in, const Dataset& dataset) {
  TrainConfig cfg = cfg_in;
  cfg.block.t_len = cfg.window;
  cfg.block.n_tokens = dataset.n_tokens;
  cfg.validate();
  validate_dataset(dataset);
  if (dataset.size() == 0) throw InputError("train: dataset is empty");

  auto [train_set, test_set] = split_for(cfg, dataset);

  std::vector<VideoExamples> videos;
  videos.reserve(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    videos.push_back(build_examples(train_set.features[i], train_set.annotations[i], cfg));
  }
  if (cfg.ablation != Ablation::cl_former) require_both(videos, &VideoExamples::proposal, "proposal network");
  require_both(videos, &VideoExamples::classifier, "classification network");
  if (cfg.ablation != Ablation::pc_former) require_both(videos, &VideoExamples::localizer, "localization network");

  TrainResult result;
  TrainedModel& trained = result.trained;
  trained.config = cfg;
  trained.num_classes = dataset.num_classes;
  trained.input_dim = dataset.dim;
  trained.n_tokens = dataset.n_tokens;
  trained.train_videos = video_ids(train_set);
  trained.test_videos = video_ids(test_set);
  trained.model = std::make_unique<PCLFormer>(cfg.model_config(dataset.dim, dataset.n_tokens, dataset.num_classes));
  PCLFormer& model = *trained.model;

  AdamW opt(model.parameters().tensors(),
            AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::uint64_t epoch_key = derive_key(cfg.seed, "epochs");

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    CounterRng rng(derive_key(epoch_key, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(videos.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    }

    EpochRecord record;
    record.epoch = epoch;
    std::size_t counted = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      opt.zero_grad();
      LossReport step;
      std::size_t in_batch = 0;
      for (std::size_t k = b; k < end; ++k) {
        StepTerms terms = video_loss(model, cfg, videos[order[k]], rng);
        if (terms.empty) continue;
        if (!std::isfinite(terms.loss.item())) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " on video " +
                                   train_set.annotations[order[k]].video_id,
                               epoch);
        }
        const double weight = 1.0 / static_cast<double>(end - b);
        ComputeGraph graph = ComputeGraph::trace(ops::scale(terms.loss, weight));
        graph.backward();
        accumulate(step, terms.report);
        ++in_batch;
      }
      if (in_batch == 0) continue;
      opt.step();
      accumulate(record.loss, step);
      counted += in_batch;
      ++record.steps;
    }
    if (counted > 0) {
      const double inv = 1.0 / static_cast<double>(counted);
      record.loss.proposal_softmax *= inv;
      record.loss.classifier_softmax *= inv;
      record.loss.localizer_softmax *= inv;
      record.loss.localizer_overlap *= inv;
    }
    record.loss.finalize(cfg.lambda);
    if (!std::isfinite(record.loss.l_total)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch), epoch);
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(record);
  }
  return result;
}

InferOptions default_infer_options(const TrainedModel& trained) {
  return {trained.config.ablation, trained.config.post};
}

namespace {

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void check_compatible(const TrainedModel& trained, const VideoFeatures& video) {
  if (video.n_tokens != trained.n_tokens || video.dim != trained.input_dim) {
    throw CheckpointError("video " + video.video_id + " does not match the checkpoint: expected [n_tokens=" +
                          std::to_string(trained.n_tokens) + ", dim=" + std::to_string(trained.input_dim) +
                          "], found [n_tokens=" + std::to_string(video.n_tokens) + ", dim=" +
                          std::to_string(video.dim) + "]");
  }
}

}  // namespace

std::vector<Prediction> infer(const TrainedModel& trained, const VideoFeatures& video, const InferOptions& options,
                              InferStats* stats) {
  if (!trained.model) throw ContractError("infer: model is not loaded");
  check_compatible(trained, video);
  NoGradGuard no_grad;
  const PCLFormer& model = *trained.model;
  const auto& cfg = trained.config;
  const auto segments = generate_segments(video, cfg.window, cfg.overlap_fraction);

  std::vector<std::size_t> survivors;
  if (options.ablation == Ablation::cl_former) {
    survivors.resize(segments.size());
    std::iota(survivors.begin(), survivors.end(), 0);
  } else {
    std::vector<std::vector<double>> proposal_probs;
    for (const auto& s : segments) proposal_probs.push_back(to_vector(model.proposal_forward(s.features)));
    survivors = filter_segments(proposal_probs, options.post.proposal_threshold);
  }

  std::vector<Segment> kept;
  std::vector<std::vector<double>> class_probs, loc_conf;
  for (std::size_t i : survivors) {
    kept.push_back(segments[i]);
    class_probs.push_back(to_vector(model.classification_forward(segments[i].features)));
    if (options.ablation == Ablation::pc_former) {
      loc_conf.emplace_back();
    } else {
      loc_conf.push_back(to_vector(model.localization_forward(segments[i].features)));
    }
  }
  auto preds = score_predictions(kept, class_probs, loc_conf);
  std::size_t brm_calls = 0;
  if (options.ablation != Ablation::no_brm) {
    preds = brm_refine(preds, options.post.score_threshold, options.post.merge_iou, options.post.merge);
    brm_calls = 1;
  }
  preds = nms(preds, options.post.nms_tiou);
  if (stats) {
    stats->segments += segments.size();
    stats->survivors += survivors.size();
    stats->brm_calls += brm_calls;
    stats->nms_calls += 1;
  }
  return preds;
}

std::vector<Prediction> infer_dataset(const TrainedModel& trained, const Dataset& dataset,
                                      const InferOptions& options, std::size_t threads, InferStats* stats) {
  const std::size_t n = dataset.size();
  std::vector<std::vector<Prediction>> per_video(n);
  std::vector<InferStats> per_stats(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) per_video[i] = infer(trained, dataset.features[i], options, &per_stats[i]);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += threads) {
            per_video[i] = infer(trained, dataset.features[i], options, &per_stats[i]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.insert(out.end(), per_video[i].begin(), per_video[i].end());
    if (stats) {
      stats->segments += per_stats[i].segments;
      stats->survivors += per_stats[i].survivors;
      stats->brm_calls += per_stats[i].brm_calls;
      stats->nms_calls += per_stats[i].nms_calls;
    }
  }
  return out;
}

std::vector<double> nms_sweep() { return {0.2, 0.3, 0.4, 0.5}; }
std::vector<std::size_t> segment_length_sweep() { return {16, 32, 64, 128}; }

namespace {

std::string format_key(const char* prefix, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s/%g", prefix, value);
  return buf;
}

}  // namespace

AblationResult ablate(const TrainConfig& base, const Dataset& dataset, std::size_t threads) {
  AblationResult result;
  TrainConfig cfg = base;
  cfg.ablation = Ablation::complete;
  const Dataset test = test_split(cfg, dataset);
  if (test.size() == 0) throw InputError("ablate: the held-out split is empty; use train_fraction < 1");
  const auto gts = flatten_ground_truth(test.annotations);

  const TrainResult run = train(cfg, dataset);
  const auto evaluate = [&](const TrainedModel& trained, const InferOptions& opts) {
    return mean_ap(infer_dataset(trained, test, opts, threads), gts, cfg.eval_thresholds);
  };

  for (auto a : {Ablation::cl_former, Ablation::pc_former, Ablation::no_brm, Ablation::complete}) {
    InferOptions opts = default_infer_options(run.trained);
    opts.ablation = a;
    result.reports["module/" + to_string(a)] = evaluate(run.trained, opts);
  }
  for (double t : nms_sweep()) {
    InferOptions opts = default_infer_options(run.trained);
    opts.post.nms_tiou = t;
    result.reports[format_key("nms", t)] = evaluate(run.trained, opts);
  }
  for (std::size_t len : segment_length_sweep()) {
    const std::string key = "length/" + std::to_string(len);
    if (len == cfg.window) {
      result.reports[key] = result.reports.at("module/complete");
      continue;
    }
    TrainConfig lcfg = cfg;
    lcfg.window = len;
    try {
      const TrainResult lrun = train(lcfg, dataset);
      result.reports[key] = evaluate(lrun.trained, default_infer_options(lrun.trained));
    } catch (const TrainingError& e) {
      result.skipped[key] = e.what();
    }
  }
  return result;
}

void save_trained(const std::filesystem::path& path, const TrainedModel& trained) {
  if (!trained.model) throw ContractError("save_trained: model is not loaded");
  json meta{{"config", json::parse(train_config_to_json(trained.config))},
            {"num_classes", trained.num_classes},
            {"input_dim", trained.input_dim},
            {"n_tokens", trained.n_tokens},
            {"train_videos", trained.train_videos},
            {"test_videos", trained.test_videos}};
  write_checkpoint(path, meta.dump(), trained.model->parameters());
}

TrainedModel load_trained(const std::filesystem::path& path) {
  const CheckpointFile file = read_checkpoint(path);
  TrainedModel trained;
  try {
    const json meta = json::parse(file.metadata);
    trained.config = train_config_from_json(meta.at("config").dump());
    trained.num_classes = meta.at("num_classes").get<int>();
    trained.input_dim = meta.at("input_dim").get<std::size_t>();
    trained.n_tokens = meta.at("n_tokens").get<std::size_t>();
    trained.train_videos = meta.at("train_videos").get<std::vector<std::string>>();
    trained.test_videos = meta.at("test_videos").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " has malformed metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + " has an invalid config: " + e.what());
  }
  trained.config.block.n_tokens = trained.n_tokens;
  trained.model = std::make_unique<PCLFormer>(
      trained.config.model_config(trained.input_dim, trained.n_tokens, trained.num_classes));
  load_parameters(file, trained.model->parameters());
  return trained;
}

}  // namespace pclformer
