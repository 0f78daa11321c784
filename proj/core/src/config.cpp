#include "pclformer/config.hpp"

#include <set>

#include <json.hpp>

#include "pclformer/error.hpp"

namespace pclformer {

using nlohmann::json;

namespace {

json parse_document(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (doc.contains("config") && doc["config"].is_object()) return doc["config"];
  return doc;
}

void reject_unknown(const json& doc, const std::set<std::string>& known) {
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown config field '" + key + "'");
  }
}

template <class T>
void read(const json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

void read_range(const json& doc, const char* key, Range& out) {
  if (!doc.contains(key)) return;
  const auto& v = doc.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ConfigError(std::string("config field '") + key + "' must be [min, max] integers");
  }
  out = {v[0].get<long>(), v[1].get<long>()};
}

std::uint64_t read_seed(const json& doc) {
  if (!doc.contains("seed")) throw ConfigError("missing required field 'seed'");
  const auto& s = doc.at("seed");
  if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<long long>() < 0)) {
    throw ConfigError("config field 'seed' must be a non-negative integer");
  }
  return s.get<std::uint64_t>();
}

}  // namespace

SynthConfig synth_config_from_json(const std::string& text) {
  const json doc = parse_document(text);
  reject_unknown(doc, {"seed", "n_videos", "T_range", "num_classes", "dim", "n_tokens", "actions_per_video",
                       "action_len_range", "min_gap", "noise_sigma", "class_sep"});
  SynthConfig cfg;
  cfg.seed = read_seed(doc);
  read(doc, "n_videos", cfg.n_videos);
  read_range(doc, "T_range", cfg.T_range);
  read(doc, "num_classes", cfg.num_classes);
  read(doc, "dim", cfg.dim);
  read(doc, "n_tokens", cfg.n_tokens);
  read_range(doc, "actions_per_video", cfg.actions_per_video);
  read_range(doc, "action_len_range", cfg.action_len_range);
  read(doc, "min_gap", cfg.min_gap);
  read(doc, "noise_sigma", cfg.noise_sigma);
  read(doc, "class_sep", cfg.class_sep);
  cfg.validate();
  return cfg;
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  json doc{{"seed", cfg.seed},
           {"n_videos", cfg.n_videos},
           {"T_range", {cfg.T_range.min, cfg.T_range.max}},
           {"num_classes", cfg.num_classes},
           {"dim", cfg.dim},
           {"n_tokens", cfg.n_tokens},
           {"actions_per_video", {cfg.actions_per_video.min, cfg.actions_per_video.max}},
           {"action_len_range", {cfg.action_len_range.min, cfg.action_len_range.max}},
           {"min_gap", cfg.min_gap},
           {"noise_sigma", cfg.noise_sigma},
           {"class_sep", cfg.class_sep}};
  return doc.dump(2);
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
  const json doc = parse_document(text);
  reject_unknown(doc, {"seed", "epochs", "learning_rate", "weight_decay", "batch_size", "lambda", "alpha",
                       "ablation", "window", "overlap_fraction", "train_fraction", "negative_ratio",
                       "independent_subnetworks", "profile", "eval_thresholds", "nms_tiou", "proposal_threshold",
                       "score_threshold", "merge_iou", "brm_merge", "model"});
  TrainConfig cfg = std::move(base);
  cfg.seed = read_seed(doc);
  if (doc.contains("profile")) {
    std::string profile;
    read(doc, "profile", profile);
    apply_profile(cfg, profile);
  }
  read(doc, "epochs", cfg.epochs);
  read(doc, "learning_rate", cfg.learning_rate);
  read(doc, "weight_decay", cfg.weight_decay);
  read(doc, "batch_size", cfg.batch_size);
  read(doc, "lambda", cfg.lambda);
  read(doc, "alpha", cfg.alpha);
  if (doc.contains("ablation")) {
    std::string name;
    read(doc, "ablation", name);
    cfg.ablation = parse_ablation(name);
  }
  read(doc, "window", cfg.window);
  read(doc, "overlap_fraction", cfg.overlap_fraction);
  read(doc, "train_fraction", cfg.train_fraction);
  read(doc, "negative_ratio", cfg.negative_ratio);
  read(doc, "independent_subnetworks", cfg.independent_subnetworks);
  read(doc, "eval_thresholds", cfg.eval_thresholds);
  read(doc, "nms_tiou", cfg.post.nms_tiou);
  read(doc, "proposal_threshold", cfg.post.proposal_threshold);
  read(doc, "score_threshold", cfg.post.score_threshold);
  read(doc, "merge_iou", cfg.post.merge_iou);
  read(doc, "brm_merge", cfg.post.merge);
  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    if (!m.is_object()) throw ConfigError("config field 'model' must be an object");
    reject_unknown(m, {"d_model", "n_heads", "n_layers", "mlp_hidden", "decoder_layers", "ln_eps"});
    read(m, "d_model", cfg.block.d_model);
    read(m, "n_heads", cfg.block.n_heads);
    read(m, "n_layers", cfg.block.n_layers);
    read(m, "mlp_hidden", cfg.block.mlp_hidden);
    read(m, "decoder_layers", cfg.block.decoder_layers);
    read(m, "ln_eps", cfg.block.ln_eps);
  }
  cfg.block.t_len = cfg.window;
  cfg.validate();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json doc{{"seed", cfg.seed},
           {"profile", cfg.profile},
           {"epochs", cfg.epochs},
           {"learning_rate", cfg.learning_rate},
           {"weight_decay", cfg.weight_decay},
           {"batch_size", cfg.batch_size},
           {"lambda", cfg.lambda},
           {"alpha", cfg.alpha},
           {"ablation", to_string(cfg.ablation)},
           {"window", cfg.window},
           {"overlap_fraction", cfg.overlap_fraction},
           {"train_fraction", cfg.train_fraction},
           {"negative_ratio", cfg.negative_ratio},
           {"independent_subnetworks", cfg.independent_subnetworks},
           {"eval_thresholds", cfg.eval_thresholds},
           {"nms_tiou", cfg.post.nms_tiou},
           {"proposal_threshold", cfg.post.proposal_threshold},
           {"score_threshold", cfg.post.score_threshold},
           {"merge_iou", cfg.post.merge_iou},
           {"brm_merge", cfg.post.merge},
           {"model",
            {{"d_model", cfg.block.d_model},
             {"n_heads", cfg.block.n_heads},
             {"n_layers", cfg.block.n_layers},
             {"mlp_hidden", cfg.block.mlp_hidden},
             {"decoder_layers", cfg.block.decoder_layers},
             {"ln_eps", cfg.block.ln_eps}}}};
  return doc.dump(2);
}

}  // namespace pclformer
