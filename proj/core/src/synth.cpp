#include "pclformer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pclformer/error.hpp"
#include "pclformer/io.hpp"
#include "pclformer/random.hpp"

namespace pclformer {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  auto range_ok = [](const Range& r, long floor, const char* name) {
    if (r.min < floor || r.max < r.min) {
      throw ConfigError(std::string("synth config: ") + name + " must satisfy " + std::to_string(floor) +
                        " <= min <= max");
    }
  };
  if (n_videos == 0) throw ConfigError("synth config: n_videos must be >= 1");
  range_ok(T_range, 1, "T_range");
  range_ok(actions_per_video, 0, "actions_per_video");
  range_ok(action_len_range, 1, "action_len_range");
  if (num_classes < 1) throw ConfigError("synth config: num_classes must be >= 1");
  if (dim == 0) throw ConfigError("synth config: dim must be >= 1");
  if (n_tokens == 0) throw ConfigError("synth config: n_tokens must be >= 1");
  if (min_gap < 0) throw ConfigError("synth config: min_gap must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth config: noise_sigma must be >= 0");
  if (!(class_sep > 0.0)) throw ConfigError("synth config: class_sep must be > 0");
}

std::vector<std::vector<double>> class_means(const SynthConfig& cfg) {
  CounterRng rng(derive_key(cfg.seed, "class_means"));
  std::vector<std::vector<double>> means;
  const bool orthogonal = static_cast<std::size_t>(cfg.num_classes) <= cfg.dim;
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::vector<double> mu(cfg.dim);
    double norm = 0.0;
    // Redraw in the (measure-zero) case of a vanishing residual.
    while (norm < 1e-6) {
      for (auto& x : mu) x = rng.normal();
      if (orthogonal) {
        for (const auto& prev : means) {
          double dot = 0.0, pn = 0.0;
          for (std::size_t k = 0; k < cfg.dim; ++k) {
            dot += mu[k] * prev[k];
            pn += prev[k] * prev[k];
          }
          for (std::size_t k = 0; k < cfg.dim; ++k) mu[k] -= dot / pn * prev[k];
        }
      }
      norm = std::sqrt(std::inner_product(mu.begin(), mu.end(), mu.begin(), 0.0));
    }
    for (auto& x : mu) x *= cfg.class_sep / norm;
    means.push_back(std::move(mu));
  }
  return means;
}

namespace {

std::string video_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video_%04zu", index);
  return buf;
}

}  // namespace

Dataset synthesize_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const auto means = class_means(cfg);
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.n_tokens = cfg.n_tokens;
  ds.dim = cfg.dim;
  const std::uint64_t videos_key = derive_key(cfg.seed, "videos");

  for (std::size_t v = 0; v < cfg.n_videos; ++v) {
    CounterRng rng(derive_key(videos_key, v));
    VideoAnnotation ann;
    ann.video_id = video_name(v);
    ann.T = rng.uniform_int(cfg.T_range.min, cfg.T_range.max);
    const long count = rng.uniform_int(cfg.actions_per_video.min, cfg.actions_per_video.max);

    std::vector<long> lengths(static_cast<std::size_t>(count));
    long occupied = 0;
    for (auto& len : lengths) {
      len = rng.uniform_int(cfg.action_len_range.min, cfg.action_len_range.max);
      occupied += len;
    }
    occupied += count > 1 ? (count - 1) * cfg.min_gap : 0;
    const long slack = ann.T - occupied;
    if (slack < 0) {
      throw InputError("synth: video " + ann.video_id + " cannot fit " + std::to_string(count) + " actions (" +
                       std::to_string(occupied) + " frames) into T=" + std::to_string(ann.T));
    }
    // Distribute the slack over count + 1 gaps by sorted uniform cut points.
    std::vector<long> cuts(static_cast<std::size_t>(count));
    for (auto& cut : cuts) cut = rng.uniform_int(0, slack);
    std::sort(cuts.begin(), cuts.end());
    long cursor = 0, prev_cut = 0;
    for (long i = 0; i < count; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      cursor += cuts[idx] - prev_cut;
      prev_cut = cuts[idx];
      const int c = static_cast<int>(rng.uniform_int(1, cfg.num_classes));
      ann.instances.push_back({cursor, cursor + lengths[idx], c});
      cursor += lengths[idx] + cfg.min_gap;
    }

    VideoFeatures feat;
    feat.video_id = ann.video_id;
    feat.T = static_cast<std::size_t>(ann.T);
    feat.n_tokens = cfg.n_tokens;
    feat.dim = cfg.dim;
    feat.data.resize(feat.T * cfg.n_tokens * cfg.dim);
    std::vector<int> frame_class(feat.T, 0);
    for (const auto& inst : ann.instances) {
      for (long f = inst.t_s; f < inst.t_e; ++f) frame_class[static_cast<std::size_t>(f)] = inst.c;
    }
    std::size_t k = 0;
    for (std::size_t f = 0; f < feat.T; ++f) {
      const int c = frame_class[f];
      for (std::size_t tok = 0; tok < cfg.n_tokens; ++tok) {
        for (std::size_t j = 0; j < cfg.dim; ++j) {
          const double mu = c > 0 ? means[static_cast<std::size_t>(c - 1)][j] : 0.0;
          feat.data[k++] = mu + cfg.noise_sigma * rng.normal();
        }
      }
    }
    ds.features.push_back(std::move(feat));
    ds.annotations.push_back(std::move(ann));
  }
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InputError("split: train fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw InputError("split: fraction " + std::to_string(train_fraction) + " of " + std::to_string(n) +
                     " videos leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(derive_key(seed, "split"));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->num_classes = dataset.num_classes;
    d->n_tokens = dataset.n_tokens;
    d->dim = dataset.dim;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& side = in_train[i] ? train : test;
    side.features.push_back(dataset.features[i]);
    side.annotations.push_back(dataset.annotations[i]);
  }
  return {std::move(train), std::move(test)};
}

void validate_dataset(const Dataset& dataset) {
  if (dataset.features.size() != dataset.annotations.size()) {
    throw InputError("dataset: feature and annotation counts differ");
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ann = dataset.annotations[i];
    const auto& feat = dataset.features[i];
    ann.validate(dataset.num_classes);
    if (feat.video_id != ann.video_id) throw InputError("dataset: feature blob order differs at " + ann.video_id);
    if (feat.T != static_cast<std::size_t>(ann.T) || feat.n_tokens != dataset.n_tokens || feat.dim != dataset.dim ||
        feat.data.size() != feat.T * feat.n_tokens * feat.dim) {
      throw InputError("dataset: video " + ann.video_id + " has inconsistent feature extents");
    }
    auto sorted = ann.instances;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t_s < b.t_s; });
    for (std::size_t k = 1; k < sorted.size(); ++k) {
      if (sorted[k].t_s < sorted[k - 1].t_e) throw InputError("dataset: overlapping instances in " + ann.video_id);
    }
  }
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "features");
  AnnotationSet set{dataset.num_classes, dataset.annotations};
  write_annotations(dir / "annotations.json", set);
  for (const auto& f : dataset.features) write_features(dir / "features" / (f.video_id + ".bin"), f);
}

Dataset read_dataset(const fs::path& dir) {
  const auto set = read_annotations(dir / "annotations.json");
  Dataset ds;
  ds.num_classes = set.num_classes;
  for (const auto& ann : set.videos) {
    auto feat = read_features(dir / "features" / (ann.video_id + ".bin"));
    if (ds.features.empty()) {
      ds.n_tokens = feat.n_tokens;
      ds.dim = feat.dim;
    }
    ds.features.push_back(std::move(feat));
    ds.annotations.push_back(ann);
  }
  if (ds.num_classes == 0) {
    for (const auto& a : ds.annotations) {
      for (const auto& inst : a.instances) ds.num_classes = std::max(ds.num_classes, inst.c);
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace pclformer
