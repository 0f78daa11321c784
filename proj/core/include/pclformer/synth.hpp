#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pclformer/segments.hpp"

namespace pclformer {

struct Range {
  long min = 0;
  long max = 0;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_videos = 40;
  Range T_range{192, 320};
  int num_classes = 4;
  std::size_t dim = 16;
  std::size_t n_tokens = 4;
  Range actions_per_video{1, 3};
  Range action_len_range{48, 64};
  long min_gap = 0;  // background frames required between planted actions
  double noise_sigma = 1.0;
  double class_sep = 5.0;

  // Throws ConfigError on an empty range or bad scalar.
  void validate() const;
};

// Features and annotations of one dataset, index-aligned.
struct Dataset {
  int num_classes = 0;
  std::size_t n_tokens = 0;
  std::size_t dim = 0;
  std::vector<VideoFeatures> features;
  std::vector<VideoAnnotation> annotations;

  std::size_t size() const noexcept { return annotations.size(); }
};

// Background tokens ~ N(0, sigma^2 I); tokens inside an instance of class c
// ~ N(mu_c, sigma^2 I) with |mu_c| = class_sep. Class means are
// orthogonalized when C <= dim. Video i draws from a stream derived from
// (seed, i), so videos can be generated independently. Throws InputError
// naming the video when its actions cannot be packed without overlap.
Dataset synthesize_dataset(const SynthConfig& cfg);

// Class means used by synthesize_dataset, [C][dim].
std::vector<std::vector<double>> class_means(const SynthConfig& cfg);

// Seeded video-level split; both sides keep the dataset's order. Throws
// InputError when either side would be empty.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double train_fraction, std::uint64_t seed);

// Dataset directory: annotations.json plus features/<video_id>.bin.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

// Re-checks every annotation invariant, feature extents, and the
// non-overlap of planted instances. Throws InputError on the first failure.
void validate_dataset(const Dataset& dataset);

}  // namespace pclformer
