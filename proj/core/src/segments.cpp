#include "pclformer/segments.hpp"

#include <algorithm>
#include <cmath>

#include "pclformer/error.hpp"

namespace pclformer {

void VideoAnnotation::validate(int num_classes) const {
  if (T <= 0) throw InputError("video " + video_id + ": T must be positive");
  for (const auto& a : instances) {
    if (!(0 <= a.t_s && a.t_s < a.t_e && a.t_e <= T)) {
      throw InputError("video " + video_id + ": instance [" + std::to_string(a.t_s) + ", " + std::to_string(a.t_e) +
                       ") violates 0 <= t_s < t_e <= " + std::to_string(T));
    }
    if (a.c < 1 || (num_classes > 0 && a.c > num_classes)) {
      throw InputError("video " + video_id + ": class " + std::to_string(a.c) + " out of range");
    }
  }
}

std::size_t segment_stride(std::size_t window, double overlap_fraction) {
  const double raw = static_cast<double>(window) * (1.0 - overlap_fraction);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(raw)));
}

std::vector<Segment> generate_segments(const VideoFeatures& video, std::size_t window, double overlap_fraction) {
  if (window == 0) throw InputError("generate_segments: window must be >= 1");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw InputError("generate_segments: overlap fraction must lie in [0, 1)");
  }
  if (video.T == 0) throw InputError("generate_segments: video " + video.video_id + " is empty");
  const std::size_t frame = video.n_tokens * video.dim;
  if (video.data.size() != video.T * frame) {
    throw DimensionError("generate_segments: video " + video.video_id + " has " + std::to_string(video.data.size()) +
                         " values, expected " + std::to_string(video.T * frame));
  }
  const std::size_t stride = segment_stride(window, overlap_fraction);
  std::vector<Segment> out;
  auto cut = [&](std::size_t start) {
    const std::size_t valid = std::min(window, video.T - start);
    std::vector<double> buf(window * frame, 0.0);
    std::copy_n(video.data.begin() + static_cast<std::ptrdiff_t>(start * frame), valid * frame, buf.begin());
    out.push_back({video.video_id, start, window, valid, Tensor({window, video.n_tokens, video.dim}, std::move(buf))});
  };
  if (video.T < window) {
    cut(0);
    return out;
  }
  for (std::size_t start = 0; start + window <= video.T; start += stride) cut(start);
  return out;
}

double temporal_iou(const Interval& a, const Interval& b) {
  if (!(a.start < a.end) || !(b.start < b.end)) {
    throw InputError("temporal_iou: degenerate interval");
  }
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return inter / uni;
}

BestMatch best_instance(const Interval& span, const VideoAnnotation& annotation) {
  BestMatch best;
  for (std::size_t i = 0; i < annotation.instances.size(); ++i) {
    const auto& inst = annotation.instances[i];
    const double iou = temporal_iou(span, to_interval(inst));
    if (iou <= 0.0) continue;
    const bool better = best.instance < 0 || iou > best.iou ||
                        (iou == best.iou && inst.t_s < annotation.instances[best.instance].t_s);
    if (better) {
      best.iou = iou;
      best.instance = static_cast<int>(i);
    }
  }
  return best;
}

namespace {

LabeledSegment label_one(const Segment& seg, const VideoAnnotation& annotation, bool with_class) {
  const BestMatch m = best_instance(seg.span(), annotation);
  LabeledSegment out{seg, kIgnoredLabel, kIgnoredLabel, m.iou};
  if (m.iou > kPositiveIoU) {
    out.proposal_label = 1;
    out.class_label = with_class ? annotation.instances[m.instance].c : kIgnoredLabel;
  } else if (m.iou < kNegativeIoU) {
    out.proposal_label = 0;
    out.class_label = with_class ? 0 : kIgnoredLabel;
  }
  return out;
}

std::vector<LabeledSegment> label_banded(const std::vector<Segment>& segments, const VideoAnnotation& annotation,
                                         bool with_class) {
  std::vector<LabeledSegment> out;
  for (const auto& seg : segments) {
    auto labeled = label_one(seg, annotation, with_class);
    if (labeled.proposal_label != kIgnoredLabel) out.push_back(std::move(labeled));
  }
  return out;
}

}  // namespace

std::vector<LabeledSegment> label_proposal_data(const std::vector<Segment>& segments,
                                                const VideoAnnotation& annotation) {
  return label_banded(segments, annotation, false);
}

std::vector<LabeledSegment> label_classification_data(const std::vector<Segment>& segments,
                                                      const VideoAnnotation& annotation) {
  return label_banded(segments, annotation, true);
}

std::vector<LabeledSegment> label_localization_data(const std::vector<Segment>& segments,
                                                    const VideoAnnotation& annotation) {
  std::vector<LabeledSegment> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) {
    auto labeled = label_one(seg, annotation, true);
    if (labeled.class_label == kIgnoredLabel) labeled.class_label = 0;
    out.push_back(std::move(labeled));
  }
  return out;
}

}  // namespace pclformer
