#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pclformer/config.hpp"
#include "pclformer/error.hpp"
#include "pclformer/io.hpp"
#include "pclformer/metrics.hpp"
#include "pclformer/synth.hpp"
#include "pclformer/trainer.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace pclformer;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 2;
constexpr int exit_numerical = 3;

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string hash_file(const fs::path& path) { return sha256_hex(read_text(path)); }

// One digest for a directory: the hash of the sorted (relative path, file hash) list.
std::string hash_directory(const fs::path& dir) {
  std::vector<std::string> lines;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    lines.push_back(fs::relative(entry.path(), dir).generic_string() + " " + hash_file(entry.path()));
  }
  std::sort(lines.begin(), lines.end());
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  return sha256_hex(joined);
}

std::string hash_path(const fs::path& path) {
  if (fs::is_directory(path)) return hash_directory(path);
  if (fs::is_regular_file(path)) return hash_file(path);
  throw InputError("input path does not exist: " + path.string());
}

struct Manifest {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  json options = json::object();

  void add_input(const std::string& role, const fs::path& path) {
    inputs[role] = {{"path", path.string()}, {"sha256", hash_path(path)}};
  }
  void add_output(const std::string& role, const fs::path& path) {
    outputs[role] = {{"path", path.string()}, {"sha256", hash_path(path)}};
  }
  void write(const fs::path& path) const {
    json doc{{"command", command},
             {"tool_version", PCLFORMER_VERSION},
             {"seed", seed},
             {"config", config},
             {"options", options},
             {"inputs", inputs},
             {"outputs", outputs}};
    write_text(path, doc.dump(2) + "\n");
  }
};

// Config document as an object; a manifest contributes its "config" member.
json load_config_document(const std::string& path) {
  if (path.empty()) return json::object();
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  if (doc.contains("config") && doc.contains("command")) doc = doc.at("config");
  return doc;
}

void inject_seed(json& doc, const std::optional<std::uint64_t>& seed) {
  if (seed) doc["seed"] = *seed;
  if (!doc.contains("seed")) throw ConfigError("missing required field 'seed' (set it in --config or pass --seed)");
}

// Output sibling for commands that write a single file.
fs::path manifest_beside(const fs::path& out) {
  return out.parent_path() / (out.stem().string() + ".manifest.json");
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::string num(double v, const char* fmt = "%g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Shared options every subcommand accepts.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string profile;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool out_required, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON config file or a run manifest to replay")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed; overrides the config file's seed");
  auto* out = cmd->add_option("--out", c.out, out_help);
  if (out_required) out->required();
  cmd->add_option("--profile", c.profile, "Dataset profile: thumos-like or anet-like (overrides the config file)")
      ->check(CLI::IsMember({"thumos-like", "anet-like"}));
  cmd->add_option("--threads", c.threads, "Worker threads for inference")->check(CLI::PositiveNumber);
}

// defaults -> config file (its own profile first) -> --profile -> other flags
TrainConfig resolve_train_config(const Common& c) {
  json doc = load_config_document(c.config);
  inject_seed(doc, c.seed);
  TrainConfig cfg = train_config_from_json(doc.dump());
  if (!c.profile.empty()) apply_profile(cfg, c.profile);
  return cfg;
}

int cmd_synth(const Common& c) {
  json doc = load_config_document(c.config);
  inject_seed(doc, c.seed);
  const SynthConfig cfg = synth_config_from_json(doc.dump());
  const Dataset ds = synthesize_dataset(cfg);
  validate_dataset(ds);
  const fs::path out = c.out;
  write_dataset(out, ds);

  Manifest m;
  m.command = "synth";
  m.config = json::parse(synth_config_to_json(cfg));
  m.seed = cfg.seed;
  if (!c.config.empty()) m.add_input("config", c.config);
  m.add_output("dataset", out);
  m.write(out / "manifest.json");
  std::cerr << "synth: wrote " << ds.size() << " videos to " << out.string() << "\n";
  return exit_ok;
}

json train_log_json(const TrainLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"steps", e.steps},
                      {"l_total", e.loss.l_total},
                      {"l_softmax", e.loss.l_softmax},
                      {"l_overlap", e.loss.l_overlap},
                      {"proposal_softmax", e.loss.proposal_softmax},
                      {"classifier_softmax", e.loss.classifier_softmax},
                      {"localizer_softmax", e.loss.localizer_softmax},
                      {"localizer_overlap", e.loss.localizer_overlap}});
  }
  return {{"epochs", epochs}};
}

int cmd_train(const Common& c, const std::string& data, const std::optional<int>& epochs) {
  TrainConfig cfg = resolve_train_config(c);
  if (epochs) cfg.epochs = *epochs;
  cfg.validate();
  const Dataset ds = read_dataset(data);
  validate_dataset(ds);

  const auto start = std::chrono::steady_clock::now();
  const TrainResult run = train(cfg, ds);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path out = c.out;
  fs::create_directories(out);
  save_trained(out / "checkpoint.bin", run.trained);
  // Wall-clock time goes to stderr so that every file stays byte-reproducible.
  write_text(out / "train_log.json", train_log_json(run.log).dump(2) + "\n");
  const Dataset held_out = test_split(cfg, ds);
  write_annotations(out / "test_annotations.json", AnnotationSet{ds.num_classes, held_out.annotations});

  Manifest m;
  m.command = "train";
  m.config = json::parse(train_config_to_json(cfg));
  m.seed = cfg.seed;
  if (!c.config.empty()) m.add_input("config", c.config);
  m.add_input("dataset", data);
  m.add_output("checkpoint", out / "checkpoint.bin");
  m.add_output("train_log", out / "train_log.json");
  m.add_output("test_annotations", out / "test_annotations.json");
  m.write(out / "manifest.json");
  for (const auto& e : run.log.epochs) {
    std::cerr << "epoch " << e.epoch << ": loss " << e.loss.l_total << " (" << num(e.seconds, "%.2f") << " s)\n";
  }
  std::cerr << "train: " << run.log.epochs.size() << " epochs in " << num(seconds, "%.1f") << " s, "
            << held_out.size() << " held-out videos\n";
  return exit_ok;
}

Dataset select_videos(const Dataset& ds, const std::vector<std::string>& ids) {
  Dataset out;
  out.num_classes = ds.num_classes;
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!wanted.count(ds.annotations[i].video_id)) continue;
    out.annotations.push_back(ds.annotations[i]);
    out.features.push_back(ds.features[i]);
    seen.insert(ds.annotations[i].video_id);
  }
  std::string missing;
  for (const auto& id : ids) {
    if (!seen.count(id)) missing += (missing.empty() ? "" : ", ") + id;
  }
  if (!missing.empty()) throw InputError("dataset lacks held-out videos recorded in the checkpoint: " + missing);
  return out;
}

struct InferFlags {
  std::string checkpoint;
  std::string data;
  std::string videos = "test";
  std::string ablation;
  std::optional<double> nms_tiou;
};

int cmd_infer(const Common& c, const InferFlags& f) {
  const TrainedModel trained = load_trained(f.checkpoint);
  const Dataset ds = read_dataset(f.data);
  const Dataset chosen = f.videos == "all" ? ds : select_videos(ds, trained.test_videos);

  InferOptions opts = default_infer_options(trained);
  TrainConfig resolved = trained.config;
  if (!c.profile.empty()) {
    apply_profile(resolved, c.profile);
    opts.post.nms_tiou = resolved.post.nms_tiou;
  }
  if (!f.ablation.empty()) opts.ablation = parse_ablation(f.ablation);
  if (f.nms_tiou) opts.post.nms_tiou = *f.nms_tiou;
  resolved.ablation = opts.ablation;
  resolved.post = opts.post;
  resolved.validate();

  InferStats stats;
  const auto preds = infer_dataset(trained, chosen, opts, c.threads, &stats);
  const fs::path out = c.out;
  ensure_parent(out);
  write_predictions(out, preds);

  Manifest m;
  m.command = "infer";
  m.config = json::parse(train_config_to_json(resolved));
  m.seed = resolved.seed;
  m.options = {{"videos", f.videos}};
  m.add_input("checkpoint", f.checkpoint);
  m.add_input("dataset", f.data);
  m.add_output("predictions", out);
  m.write(manifest_beside(out));
  std::cerr << "infer: " << chosen.size() << " videos, " << stats.segments << " segments, " << stats.survivors
            << " proposals kept, " << preds.size() << " predictions (brm calls " << stats.brm_calls << ", nms calls "
            << stats.nms_calls << ")\n";
  return exit_ok;
}

struct EvalFlags {
  std::string predictions;
  std::string annotations;
  std::string thresholds;
  std::string format = "csv";
};

int cmd_eval(const Common& c, const EvalFlags& f) {
  TrainConfig profile_cfg;
  if (!c.profile.empty()) apply_profile(profile_cfg, c.profile);
  const std::vector<double> thresholds =
      f.thresholds.empty() ? profile_cfg.eval_thresholds : parse_thresholds(f.thresholds);
  const ReportFormat format = parse_report_format(f.format);

  const auto preds = read_predictions(f.predictions);
  const AnnotationSet ann = read_annotations(f.annotations);
  std::set<std::string> known;
  for (const auto& v : ann.videos) known.insert(v.video_id);
  std::set<std::string> unknown;
  for (const auto& p : preds) {
    if (!known.count(p.video_id)) unknown.insert(p.video_id);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
    throw InputError("predictions reference video_id(s) absent from the annotations: " + list);
  }

  const MetricsReport report = mean_ap(preds, flatten_ground_truth(ann.videos), thresholds);
  const fs::path out = c.out;
  ensure_parent(out);
  write_text(out, emit_report(report, format));

  Manifest m;
  m.command = "eval";
  m.config = {{"profile", profile_cfg.profile}, {"eval_thresholds", thresholds}, {"format", f.format}};
  m.seed = c.seed.value_or(0);
  m.add_input("predictions", f.predictions);
  m.add_input("annotations", f.annotations);
  m.add_output("report", out);
  m.write(manifest_beside(out));
  std::cerr << "eval: avg mAP " << num(report.average_map, "%.4f") << " over " << thresholds.size()
            << " thresholds\n";
  return exit_ok;
}

std::string cell_file(std::string key) {
  std::replace(key.begin(), key.end(), '/', '_');
  return key + ".csv";
}

std::string pct(double v) { return num(100.0 * v, "%.1f"); }

std::string summary_table(const AblationResult& result, const TrainConfig& cfg) {
  std::string s;
  const auto& th = cfg.eval_thresholds;
  auto header = [&](const std::string& first) {
    std::string h = first;
    for (double t : th) h += " | " + num(t);
    return h + " | Avg\n";
  };
  auto row = [&](const std::string& label, const std::string& key) {
    std::string r = label;
    if (auto it = result.skipped.find(key); it != result.skipped.end()) return r + " | skipped: " + it->second + "\n";
    const auto& rep = result.reports.at(key);
    for (double m : rep.map) r += " | " + pct(m);
    return r + " | " + pct(rep.average_map) + "\n";
  };

  s += "Impact of individual modules (mAP % at tIoU)\n";
  s += header("module");
  s += row("CL-Former", "module/cl_former");
  s += row("PC-Former", "module/pc_former");
  s += row("w/o BRM", "module/no_brm");
  s += row("complete", "module/complete");

  s += "\nImpact of the NMS threshold (mAP % at tIoU, columns are NMS thresholds)\n";
  std::string h = "tIoU";
  for (double t : nms_sweep()) h += " | " + num(t);
  s += h + "\n";
  for (std::size_t i = 0; i < th.size(); ++i) {
    std::string r = num(th[i]);
    for (double t : nms_sweep()) r += " | " + pct(result.reports.at("nms/" + num(t)).map[i]);
    s += r + "\n";
  }
  std::string avg = "Avg";
  for (double t : nms_sweep()) avg += " | " + pct(result.reports.at("nms/" + num(t)).average_map);
  s += avg + "\n";

  s += "\nImpact of the segment length (mAP % at tIoU)\n";
  s += header("length");
  for (std::size_t len : segment_length_sweep()) s += row(std::to_string(len), "length/" + std::to_string(len));
  return s;
}

int cmd_ablate(const Common& c, const std::string& data) {
  TrainConfig cfg = resolve_train_config(c);
  cfg.validate();
  const Dataset ds = read_dataset(data);
  validate_dataset(ds);
  const AblationResult result = ablate(cfg, ds, c.threads);

  const fs::path out = c.out;
  fs::create_directories(out);
  Manifest m;
  m.command = "ablate";
  m.config = json::parse(train_config_to_json(cfg));
  m.seed = cfg.seed;
  if (!c.config.empty()) m.add_input("config", c.config);
  m.add_input("dataset", data);
  for (const auto& [key, report] : result.reports) {
    write_text(out / cell_file(key), emit_report(report, ReportFormat::csv));
    m.add_output(key, out / cell_file(key));
  }
  json skipped = json::object();
  for (const auto& [key, reason] : result.skipped) skipped[key] = reason;
  m.options = {{"skipped", skipped}};
  write_text(out / "summary.txt", summary_table(result, cfg));
  m.add_output("summary", out / "summary.txt");
  m.write(out / "manifest.json");
  std::cout << summary_table(result, cfg);
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal action localization with proposal, classification and localization transformers"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(PCLFORMER_VERSION));
  app.require_subcommand(1);

  Common synth_c, train_c, infer_c, eval_c, ablate_c;

  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  add_common(synth, synth_c, true, "Output dataset directory");

  std::string train_data;
  std::optional<int> epochs;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, log and manifest");
  add_common(train_cmd, train_c, true, "Output run directory");
  train_cmd->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--epochs", epochs, "Override the number of epochs");

  InferFlags infer_f;
  auto* infer_cmd = app.add_subcommand("infer", "Run the localization pipeline and write predictions");
  add_common(infer_cmd, infer_c, true, "Output prediction file");
  infer_cmd->add_option("--checkpoint", infer_f.checkpoint, "Checkpoint written by train")
      ->required()
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--data", infer_f.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--videos", infer_f.videos, "Videos to process: the held-out split or all")
      ->check(CLI::IsMember({"test", "all"}));
  infer_cmd->add_option("--ablation", infer_f.ablation, "complete, cl_former, pc_former or no_brm (default: checkpoint's)");
  infer_cmd->add_option("--nms-tiou", infer_f.nms_tiou, "Override the NMS threshold");

  EvalFlags eval_f;
  auto* eval_cmd = app.add_subcommand("eval", "Compute mAP at tIoU thresholds");
  add_common(eval_cmd, eval_c, true, "Output report file");
  eval_cmd->add_option("--predictions", eval_f.predictions, "Prediction file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--annotations", eval_f.annotations, "Annotation file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--thresholds", eval_f.thresholds,
                       "tIoU thresholds as a:step:b or a comma list (default: the profile's set, 0.1:0.1:0.7)");
  eval_cmd->add_option("--format", eval_f.format, "Report format")->check(CLI::IsMember({"csv", "table", "plotdata"}));

  std::string ablate_data;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the module, NMS and segment-length ablation grids");
  add_common(ablate_cmd, ablate_c, true, "Output directory for per-cell reports and the summary");
  ablate_cmd->add_option("--data", ablate_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*train_cmd) return cmd_train(train_c, train_data, epochs);
    if (*infer_cmd) return cmd_infer(infer_c, infer_f);
    if (*eval_cmd) return cmd_eval(eval_c, eval_f);
    if (*ablate_cmd) return cmd_ablate(ablate_c, ablate_data);
  } catch (const NumericalError& e) {
    std::cerr << "error: training diverged at epoch " << e.epoch() << ": " << e.what() << "\n";
    return exit_numerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}
