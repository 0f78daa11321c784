#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pclformer/segments.hpp"

namespace pclformer {

struct Prediction {
  std::string video_id;
  double t_s = 0.0;
  double t_e = 0.0;
  int c = 1;
  double score = 0.0;

  Interval interval() const { return {t_s, t_e}; }
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

// Score descending, then t_s ascending, class ascending, video id.
bool ranks_before(const Prediction& a, const Prediction& b);

struct PostprocessConfig {
  double proposal_threshold = 0.5;  // keep segments with p_action >= this
  double score_threshold = 0.1;     // BRM drops predictions scoring below this
  double merge_iou = 0.3;           // BRM merges same-class pairs with IoU >= this
  bool merge = true;
  double nms_tiou = 0.4;
};

// Indices of segments whose p_action (entry 1 of each pair) reaches the threshold.
std::vector<std::size_t> filter_segments(const std::vector<std::vector<double>>& proposal_probs,
                                         double threshold = 0.5);

// One prediction per segment: c = argmax over classes 1..C of class_probs,
// score = class_probs[c] * loc_confidence[c]. An empty loc_confidence row
// scores with the class probability alone.
std::vector<Prediction> score_predictions(const std::vector<Segment>& segments,
                                          const std::vector<std::vector<double>>& class_probs,
                                          const std::vector<std::vector<double>>& loc_confidence);

// Drops predictions below score_threshold, then (when merge is on) replaces
// every connected group of same-video, same-class predictions linked by
// pairwise IoU >= merge_iou with their span union at the group's max score.
std::vector<Prediction> brm_refine(const std::vector<Prediction>& preds, double score_threshold,
                                   double merge_iou = 0.3, bool merge = true);

// Greedy NMS per (video, class) in ranks_before order: keep the head,
// suppress same-class predictions with IoU > tiou_threshold. Output is in
// rank order.
std::vector<Prediction> nms(const std::vector<Prediction>& preds, double tiou_threshold);

}  // namespace pclformer
