#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pclformer/tensor.hpp"

namespace pclformer {

// One ground-truth action: frames [t_s, t_e) of class c (1-based).
struct ActionInstance {
  long t_s = 0;
  long t_e = 0;
  int c = 1;

  friend bool operator==(const ActionInstance&, const ActionInstance&) = default;
};

struct VideoAnnotation {
  std::string video_id;
  long T = 0;
  std::vector<ActionInstance> instances;

  // Throws InputError unless 0 <= t_s < t_e <= T and 1 <= c <= num_classes
  // (num_classes == 0 skips the class check).
  void validate(int num_classes = 0) const;

  friend bool operator==(const VideoAnnotation&, const VideoAnnotation&) = default;
};

// Per-frame token features of one video, row-major [T x n_tokens x dim].
struct VideoFeatures {
  std::string video_id;
  std::size_t T = 0;
  std::size_t n_tokens = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  bool operator==(const VideoFeatures&) const = default;
};

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

struct Segment {
  std::string video_id;
  std::size_t start = 0;
  std::size_t length = 0;        // window size in frames
  std::size_t valid_length = 0;  // frames backed by the video; the rest are zero padding
  Tensor features;               // [length x n_tokens x dim]

  // Temporal extent covered by real frames.
  Interval span() const {
    return {static_cast<double>(start), static_cast<double>(start + valid_length)};
  }
};

inline constexpr int kIgnoredLabel = -1;
inline constexpr double kPositiveIoU = 0.7;
inline constexpr double kNegativeIoU = 0.3;

struct LabeledSegment {
  Segment segment;
  int proposal_label = kIgnoredLabel;  // 1 action, 0 background, -1 ignored
  int class_label = kIgnoredLabel;     // 0 background, 1..C action, -1 ignored
  double v = 0.0;                      // max IoU with any ground-truth instance
};

// Cuts sliding windows of `window` frames. stride = max(1, round(window *
// (1 - overlap_fraction))); starts run 0, stride, ... while start + window <= T.
// A video shorter than the window yields one zero-padded segment.
std::vector<Segment> generate_segments(const VideoFeatures& video, std::size_t window, double overlap_fraction);

std::size_t segment_stride(std::size_t window, double overlap_fraction);

// |a n b| / |a u b|. Throws InputError on an interval with start >= end.
double temporal_iou(const Interval& a, const Interval& b);

inline Interval to_interval(const ActionInstance& a) {
  return {static_cast<double>(a.t_s), static_cast<double>(a.t_e)};
}

struct BestMatch {
  double iou = 0.0;
  int instance = -1;  // index into annotation.instances, -1 when none overlaps
};

// Highest-IoU instance for an interval; ties go to the earlier t_s.
BestMatch best_instance(const Interval& span, const VideoAnnotation& annotation);

// Positive (v > 0.7) and negative (v < 0.3) windows only; the mid band is dropped.
std::vector<LabeledSegment> label_proposal_data(const std::vector<Segment>& segments,
                                                const VideoAnnotation& annotation);
// Same bands; positives carry the class of their max-IoU instance, negatives 0.
std::vector<LabeledSegment> label_classification_data(const std::vector<Segment>& segments,
                                                      const VideoAnnotation& annotation);
// Every segment, with its overlap v; class label only above 0.7, else 0.
std::vector<LabeledSegment> label_localization_data(const std::vector<Segment>& segments,
                                                    const VideoAnnotation& annotation);

}  // namespace pclformer
