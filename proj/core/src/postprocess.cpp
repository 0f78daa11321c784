#include "pclformer/postprocess.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

#include "pclformer/error.hpp"

namespace pclformer {

bool ranks_before(const Prediction& a, const Prediction& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.t_s != b.t_s) return a.t_s < b.t_s;
  if (a.c != b.c) return a.c < b.c;
  return std::tie(a.video_id, a.t_e) < std::tie(b.video_id, b.t_e);
}

std::vector<std::size_t> filter_segments(const std::vector<std::vector<double>>& proposal_probs, double threshold) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < proposal_probs.size(); ++i) {
    if (proposal_probs[i].size() != 2) throw DimensionError("filter_segments: expected probability pairs");
    if (proposal_probs[i][1] >= threshold) keep.push_back(i);
  }
  return keep;
}

std::vector<Prediction> score_predictions(const std::vector<Segment>& segments,
                                          const std::vector<std::vector<double>>& class_probs,
                                          const std::vector<std::vector<double>>& loc_confidence) {
  if (segments.size() != class_probs.size() || segments.size() != loc_confidence.size()) {
    throw DimensionError("score_predictions: segment, class and confidence lists differ in length");
  }
  std::vector<Prediction> out;
  out.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& probs = class_probs[i];
    if (probs.size() < 2) throw DimensionError("score_predictions: need at least one action class");
    std::size_t best = 1;
    for (std::size_t c = 2; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) best = c;
    }
    double score = probs[best];
    if (!loc_confidence[i].empty()) {
      if (loc_confidence[i].size() != probs.size()) {
        throw DimensionError("score_predictions: confidence width differs from class width");
      }
      score *= loc_confidence[i][best];
    }
    const auto span = segments[i].span();
    out.push_back({segments[i].video_id, span.start, span.end, static_cast<int>(best), score});
  }
  return out;
}

std::vector<Prediction> brm_refine(const std::vector<Prediction>& preds, double score_threshold, double merge_iou,
                                   bool merge) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw ParameterError("brm_refine: score threshold must lie in [0, 1]");
  }
  std::vector<Prediction> kept;
  for (const auto& p : preds) {
    if (p.score >= score_threshold) kept.push_back(p);
  }
  if (!merge || kept.size() < 2) return kept;

  // Union-find over pairs that share video and class and overlap enough.
  std::vector<std::size_t> parent(kept.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (kept[i].c != kept[j].c || kept[i].video_id != kept[j].video_id) continue;
      if (temporal_iou(kept[i].interval(), kept[j].interval()) >= merge_iou) {
        const auto a = root(i), b = root(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }
  std::vector<Prediction> merged;
  std::vector<std::size_t> slot(kept.size(), kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto r = root(i);
    if (slot[r] == kept.size()) {
      slot[r] = merged.size();
      merged.push_back(kept[i]);
      continue;
    }
    auto& m = merged[slot[r]];
    m.t_s = std::min(m.t_s, kept[i].t_s);
    m.t_e = std::max(m.t_e, kept[i].t_e);
    m.score = std::max(m.score, kept[i].score);
  }
  return merged;
}

std::vector<Prediction> nms(const std::vector<Prediction>& preds, double tiou_threshold) {
  if (!(tiou_threshold > 0.0 && tiou_threshold < 1.0)) {
    throw ParameterError("nms: tIoU threshold must lie in (0, 1)");
  }
  std::vector<Prediction> order = preds;
  std::sort(order.begin(), order.end(), ranks_before);
  std::vector<Prediction> kept;
  for (const auto& p : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Prediction& k) {
      return k.c == p.c && k.video_id == p.video_id && temporal_iou(k.interval(), p.interval()) > tiou_threshold;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

}  // namespace pclformer
