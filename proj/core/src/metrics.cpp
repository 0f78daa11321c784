#include "pclformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>

#include "pclformer/error.hpp"

namespace pclformer {

std::vector<GroundTruth> flatten_ground_truth(const std::vector<VideoAnnotation>& annotations) {
  std::vector<GroundTruth> out;
  for (const auto& video : annotations) {
    for (const auto& inst : video.instances) out.push_back({video.video_id, inst});
  }
  return out;
}

double average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, double tiou) {
  if (gts.empty()) throw InputError("average_precision: no ground truth for this class");
  std::vector<Prediction> ranked = preds;
  std::sort(ranked.begin(), ranked.end(), ranks_before);

  std::unordered_map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < gts.size(); ++i) by_video[gts[i].video_id].push_back(i);
  std::vector<bool> matched(gts.size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& p = ranked[k];
    double best_iou = -1.0;
    std::size_t best = gts.size();
    if (auto it = by_video.find(p.video_id); it != by_video.end()) {
      for (auto g : it->second) {
        if (matched[g]) continue;
        const double iou = temporal_iou(p.interval(), to_interval(gts[g].instance));
        if (iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
    }
    if (best < gts.size() && best_iou >= tiou) {
      matched[best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

double MetricsReport::map_at(double tiou) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == tiou) return map[i];
  }
  throw InputError("metrics report has no threshold " + std::to_string(tiou));
}

MetricsReport mean_ap(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                      const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw InputError("mean_ap: empty threshold list");
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw InputError("mean_ap: threshold " + std::to_string(t) + " outside (0, 1)");
  }
  if (gts.empty()) throw InputError("mean_ap: no ground-truth instances");

  MetricsReport report;
  report.thresholds = thresholds;
  report.gt_count = gts.size();
  report.prediction_count = preds.size();
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.instance.c);
  report.classes.assign(classes.begin(), classes.end());

  std::map<int, std::vector<Prediction>> preds_by_class;
  std::map<int, std::vector<GroundTruth>> gts_by_class;
  for (const auto& p : preds) preds_by_class[p.c].push_back(p);
  for (const auto& g : gts) gts_by_class[g.instance.c].push_back(g);

  double total = 0.0;
  for (double t : thresholds) {
    double sum = 0.0;
    for (int c : report.classes) {
      const double ap = average_precision(preds_by_class[c], gts_by_class[c], t);
      report.ap[{c, t}] = ap;
      sum += ap;
    }
    const double m = sum / static_cast<double>(report.classes.size());
    report.map.push_back(m);
    total += m;
  }
  report.average_map = total / static_cast<double>(thresholds.size());
  return report;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "table") return ReportFormat::table;
  if (name == "csv") return ReportFormat::csv;
  if (name == "plotdata") return ReportFormat::plotdata;
  throw InputError("unknown report format '" + name + "' (expected table, csv or plotdata)");
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tiou_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

}  // namespace

std::string emit_report(const MetricsReport& report, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::csv:
      os << "class,tiou,ap\n";
      for (int c : report.classes) {
        for (double t : report.thresholds) os << c << ',' << tiou_label(t) << ',' << fixed(report.ap_at(c, t)) << '\n';
      }
      for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
        os << "mAP," << tiou_label(report.thresholds[i]) << ',' << fixed(report.map[i]) << '\n';
      }
      os << "avg_mAP,all," << fixed(report.average_map) << '\n';
      break;
    case ReportFormat::plotdata:
      os << "# tiou mAP\n";
      for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
        os << tiou_label(report.thresholds[i]) << ' ' << fixed(report.map[i]) << '\n';
      }
      os << "Avg " << fixed(report.average_map) << '\n';
      break;
    case ReportFormat::table: {
      os << "mAP (%) at tIoU\n";
      os << "class ";
      for (double t : report.thresholds) os << "| " << tiou_label(t) << ' ';
      os << "| Avg\n";
      for (int c : report.classes) {
        double avg = 0.0;
        os << c << ' ';
        for (double t : report.thresholds) {
          os << "| " << fixed(100.0 * report.ap_at(c, t), 1) << ' ';
          avg += report.ap_at(c, t);
        }
        os << "| " << fixed(100.0 * avg / static_cast<double>(report.thresholds.size()), 1) << '\n';
      }
      os << "mAP ";
      for (double m : report.map) os << "| " << fixed(100.0 * m, 1) << ' ';
      os << "| " << fixed(100.0 * report.average_map, 1) << '\n';
      os << "ground truth: " << report.gt_count << ", predictions: " << report.prediction_count << '\n';
      break;
    }
  }
  return os.str();
}

std::vector<double> thumos_thresholds() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}; }
std::vector<double> anet_thresholds() { return {0.5, 0.75, 0.95}; }

std::vector<double> parse_thresholds(const std::string& text) {
  auto parse_number = [&](const std::string& text) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw InputError("bad threshold list '" + text + "'");
    }
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 3) throw InputError("range thresholds need the form start:step:stop, got '" + text + "'");
    const double lo = parse_number(parts[0]), step = parse_number(parts[1]), hi = parse_number(parts[2]);
    if (!(step > 0.0) || hi < lo) throw InputError("bad threshold range '" + text + "'");
    const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (long i = 0; i < count; ++i) {
      // Snap to 9 decimals so 0.1:0.1:0.7 yields the literal values.
      out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
    }
  } else {
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) out.push_back(parse_number(part));
  }
  if (out.empty()) throw InputError("no thresholds in '" + text + "'");
  for (double t : out) {
    if (!(t > 0.0 && t < 1.0)) throw InputError("threshold " + std::to_string(t) + " outside (0, 1)");
  }
  return out;
}

}  // namespace pclformer
