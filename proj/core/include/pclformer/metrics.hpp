#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pclformer/postprocess.hpp"
#include "pclformer/segments.hpp"

namespace pclformer {

// Ground-truth instance tagged with its video, for cross-video evaluation.
struct GroundTruth {
  std::string video_id;
  ActionInstance instance;
};

std::vector<GroundTruth> flatten_ground_truth(const std::vector<VideoAnnotation>& annotations);

// Interpolated average precision of one class. Predictions are ranked by
// ranks_before; each takes the highest-IoU unmatched ground truth of its
// video when that IoU >= tiou. Throws InputError when gts is empty.
double average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, double tiou);

struct MetricsReport {
  std::vector<double> thresholds;
  std::vector<int> classes;                        // classes with >= 1 GT
  std::map<std::pair<int, double>, double> ap;     // (class, tiou) -> AP
  std::vector<double> map;                         // per threshold
  double average_map = 0.0;
  std::size_t gt_count = 0;
  std::size_t prediction_count = 0;

  double ap_at(int c, double tiou) const { return ap.at({c, tiou}); }
  double map_at(double tiou) const;
};

// Throws InputError when there is no ground truth at all or a threshold
// lies outside (0, 1).
MetricsReport mean_ap(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                      const std::vector<double>& thresholds);

enum class ReportFormat { table, csv, plotdata };

// Throws InputError on an unknown name.
ReportFormat parse_report_format(const std::string& name);

std::string emit_report(const MetricsReport& report, ReportFormat format);

// Threshold sets used by the two benchmark protocols.
std::vector<double> thumos_thresholds();
std::vector<double> anet_thresholds();

// Parses "a:step:b" (inclusive range) or a comma-separated list.
std::vector<double> parse_thresholds(const std::string& text);

}  // namespace pclformer
