#include "fedn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedn {

EvalData EvalData::from_files(const std::vector<PredictionRecord>& predictions,
                              const std::vector<VideoAnnotation>& annotations) {
  EvalData data;
  for (const VideoAnnotation& ann : annotations) {
    auto& ivs = data.gt_intervals[ann.video_id];
    auto& cats = data.gt_categories[ann.video_id];
    for (const ExpressionEvent& ev : ann.events) {
      ivs.emplace_back(ev.onset, ev.offset);
      cats.push_back(ev.category);
    }
    data.predictions[ann.video_id];  // ensure the video exists even if silent
  }
  for (const PredictionRecord& r : predictions) {
    ScoredDetection det;
    det.interval = Interval(r.onset, r.offset);
    det.confidence = r.confidence;
    det.category = r.category;
    data.predictions[r.video_id].push_back(std::move(det));
  }
  return data;
}

void EvalData::add_video(const std::string& video_id, std::vector<ScoredDetection> preds,
                         const VideoAnnotation& annotation) {
  predictions[video_id] = std::move(preds);
  auto& ivs = gt_intervals[video_id];
  auto& cats = gt_categories[video_id];
  for (const ExpressionEvent& ev : annotation.events) {
    ivs.emplace_back(ev.onset, ev.offset);
    cats.push_back(ev.category);
  }
}

std::size_t EvalData::num_gts() const {
  std::size_t n = 0;
  for (const auto& [vid, ivs] : gt_intervals) n += ivs.size();
  return n;
}

double f1_from_counts(long tp, long fp, long fn) {
  if (tp == 0) return 0.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

namespace {

constexpr double kSpottingIoU = 0.5;

std::vector<Interval> video_gts(const EvalData& data, const std::string& vid) {
  auto it = data.gt_intervals.find(vid);
  return it == data.gt_intervals.end() ? std::vector<Interval>{} : it->second;
}

}  // namespace

SpottingCounts spotting_f1(const EvalData& data) {
  SpottingCounts counts;
  for (const auto& [vid, preds] : data.predictions) {
    const MatchResult m = match_greedy(preds, video_gts(data, vid), kSpottingIoU);
    counts.tp += m.tp();
    counts.fp += m.fp();
    counts.fn += m.fn();
  }
  // Videos with gts but no prediction entry (defensive; from_files inserts both).
  for (const auto& [vid, gts] : data.gt_intervals)
    if (!data.predictions.count(vid)) counts.fn += static_cast<long>(gts.size());

  if (counts.tp + counts.fp + counts.fn == 0) {
    counts.f1 = 1.0;  // correct silence on background-only data, flagged
    counts.trivially_perfect = true;
  } else {
    counts.f1 = f1_from_counts(counts.tp, counts.fp, counts.fn);
  }
  return counts;
}

std::optional<double> recognition_f1(const EvalData& data) {
  long matched = 0, correct = 0;
  for (const auto& [vid, preds] : data.predictions) {
    const MatchResult m = match_greedy(preds, video_gts(data, vid), kSpottingIoU);
    const auto& cats = data.gt_categories.at(vid);
    for (std::size_t pi = 0; pi < m.pred_to_gt.size(); ++pi) {
      const int gi = m.pred_to_gt[pi];
      if (gi < 0) continue;
      ++matched;
      if (preds[pi].category == cats[gi]) ++correct;
    }
  }
  if (matched == 0) return std::nullopt;
  // Micro-F1 over matched pairs equals label accuracy on the matched set.
  return static_cast<double>(correct) / matched;
}

namespace {

struct RankedPred {
  const std::string* video;
  const ScoredDetection* det;
};

// Global confidence ranking with a deterministic tie order.
std::vector<RankedPred> rank_predictions(
    const std::map<std::string, std::vector<ScoredDetection>>& preds) {
  std::vector<RankedPred> ranked;
  for (const auto& [vid, dets] : preds)
    for (const ScoredDetection& d : dets) ranked.push_back({&vid, &d});
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedPred& a, const RankedPred& b) {
    if (a.det->confidence != b.det->confidence) return a.det->confidence > b.det->confidence;
    if (*a.video != *b.video) return *a.video < *b.video;
    if (a.det->interval.start != b.det->interval.start)
      return a.det->interval.start < b.det->interval.start;
    if (a.det->interval.end != b.det->interval.end)
      return a.det->interval.end < b.det->interval.end;
    return a.det->category < b.det->category;
  });
  return ranked;
}

// 101-point interpolated AP over one prediction/gt family.
std::optional<double> ap_core(const std::map<std::string, std::vector<ScoredDetection>>& preds,
                              const std::map<std::string, std::vector<Interval>>& gts,
                              double iou_threshold) {
  std::size_t total_gts = 0;
  for (const auto& [vid, ivs] : gts) total_gts += ivs.size();
  if (total_gts == 0) return std::nullopt;

  std::map<std::string, std::vector<char>> taken;
  for (const auto& [vid, ivs] : gts) taken[vid].assign(ivs.size(), 0);

  const std::vector<RankedPred> ranked = rank_predictions(preds);
  std::vector<double> precision, recall;
  precision.reserve(ranked.size());
  recall.reserve(ranked.size());
  long tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& rp = ranked[i];
    bool is_tp = false;
    auto git = gts.find(*rp.video);
    if (git != gts.end()) {
      auto& flags = taken[*rp.video];
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t gi = 0; gi < git->second.size(); ++gi) {
        if (flags[gi]) continue;
        const double v = iou(rp.det->interval, git->second[gi]);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(gi);
        }
      }
      if (best >= 0) {
        flags[best] = 1;
        is_tp = true;
      }
    }
    if (is_tp) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gts));
  }

  // Monotone (running-max from the right) interpolation.
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double ap = 0.0;
  for (int j = 0; j <= 100; ++j) {
    const double r = j / 100.0;
    double p = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= r - 1e-12) {
        p = precision[i];
        break;
      }
    }
    ap += p;
  }
  return ap / 101.0;
}

}  // namespace

std::optional<double> average_precision(const EvalData& data, double iou_threshold,
                                        bool class_aware) {
  if (!class_aware) return ap_core(data.predictions, data.gt_intervals, iou_threshold);

  int max_cat = -1;
  for (const auto& [vid, cats] : data.gt_categories)
    for (int c : cats) max_cat = std::max(max_cat, c);
  if (max_cat < 0) return std::nullopt;

  double sum = 0.0;
  int present = 0;
  for (int c = 0; c <= max_cat; ++c) {
    std::map<std::string, std::vector<ScoredDetection>> preds_c;
    std::map<std::string, std::vector<Interval>> gts_c;
    std::size_t n_gts = 0;
    for (const auto& [vid, ivs] : data.gt_intervals) {
      const auto& cats = data.gt_categories.at(vid);
      auto& dst = gts_c[vid];
      for (std::size_t i = 0; i < ivs.size(); ++i)
        if (cats[i] == c) dst.push_back(ivs[i]);
      n_gts += dst.size();
    }
    if (n_gts == 0) continue;  // categories without gts do not enter the mean
    for (const auto& [vid, dets] : data.predictions) {
      auto& dst = preds_c[vid];
      for (const ScoredDetection& d : dets)
        if (d.category == c) dst.push_back(d);
    }
    const auto ap = ap_core(preds_c, gts_c, iou_threshold);
    sum += ap.value_or(0.0);
    ++present;
  }
  if (present == 0) return std::nullopt;
  return sum / present;
}

ApCurve map_range(const EvalData& data, bool class_aware) {
  ApCurve curve;
  double sum = 0.0;
  int present = 0;
  for (int i = 0; i < 10; ++i) {
    const double t = 0.50 + 0.05 * i;
    curve.thresholds.push_back(t);
    const auto ap = average_precision(data, t, class_aware);
    curve.ap.push_back(ap);
    if (ap) {
      sum += *ap;
      ++present;
    }
  }
  if (present > 0) curve.mean = sum / present;
  return curve;
}

std::vector<std::vector<long>> confusion_matrix(const EvalData& data, int num_categories) {
  std::vector<std::vector<long>> m(num_categories, std::vector<long>(num_categories, 0));
  for (const auto& [vid, preds] : data.predictions) {
    const MatchResult match = match_greedy(preds, video_gts(data, vid), kSpottingIoU);
    const auto& cats = data.gt_categories.at(vid);
    for (std::size_t pi = 0; pi < match.pred_to_gt.size(); ++pi) {
      const int gi = match.pred_to_gt[pi];
      if (gi < 0) continue;
      const int true_cat = cats[gi];
      const int pred_cat = preds[pi].category;
      if (true_cat >= 0 && true_cat < num_categories && pred_cat >= 0 &&
          pred_cat < num_categories)
        ++m[true_cat][pred_cat];
    }
  }
  return m;
}

EvalReport evaluate(const EvalData& data, int num_categories, bool spotting_only) {
  EvalReport rep;
  rep.spotting_only = spotting_only;
  const SpottingCounts counts = spotting_f1(data);
  rep.tp = counts.tp;
  rep.fp = counts.fp;
  rep.fn = counts.fn;
  rep.spotting_f1 = counts.f1;
  rep.trivially_perfect = counts.trivially_perfect;
  rep.spotting_ap = map_range(data, false);
  rep.spotting_map = rep.spotting_ap.mean;
  if (!spotting_only) {
    rep.recognition_f1 = recognition_f1(data);
    rep.detection_ap = map_range(data, true);
    rep.detection_map = rep.detection_ap.mean;
    rep.confusion = confusion_matrix(data, num_categories);
  }
  return rep;
}

namespace {

// Paper table conventions: F1 x 100 with one decimal, mAP x 1000.
std::string fmt_f1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

std::string fmt_map(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v * 1000.0);
  return buf;
}

std::string opt_f1(const std::optional<double>& v) { return v ? fmt_f1(*v) : "-"; }
std::string opt_map(const std::optional<double>& v) { return v ? fmt_map(*v) : "-"; }

bool report_is_empty(const EvalReport& r) {
  return r.tp == 0 && r.fp == 0 && r.fn == 0 && !r.trivially_perfect &&
         !r.spotting_map && !r.detection_map && !r.recognition_f1 && r.confusion.empty();
}

}  // namespace

std::string format_report(const EvalReport& report, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::delimited) {
    out << "metric\tvalue\n";
    if (report_is_empty(report)) return out.str();
    out << "tp\t" << report.tp << "\n";
    out << "fp\t" << report.fp << "\n";
    out << "fn\t" << report.fn << "\n";
    out << "spotting_f1\t" << fmt_f1(report.spotting_f1) << "\n";
    out << "trivially_perfect\t" << (report.trivially_perfect ? 1 : 0) << "\n";
    out << "recognition_f1\t" << opt_f1(report.recognition_f1) << "\n";
    out << "spotting_map\t" << opt_map(report.spotting_map) << "\n";
    out << "detection_map\t" << opt_map(report.detection_map) << "\n";
    for (std::size_t i = 0; i < report.spotting_ap.thresholds.size(); ++i) {
      char key[48];
      std::snprintf(key, sizeof(key), "spotting_ap@%.2f", report.spotting_ap.thresholds[i]);
      out << key << "\t" << opt_map(report.spotting_ap.ap[i]) << "\n";
    }
    for (std::size_t i = 0; i < report.detection_ap.thresholds.size(); ++i) {
      char key[48];
      std::snprintf(key, sizeof(key), "detection_ap@%.2f", report.detection_ap.thresholds[i]);
      out << key << "\t" << opt_map(report.detection_ap.ap[i]) << "\n";
    }
    for (std::size_t r = 0; r < report.confusion.size(); ++r) {
      out << "confusion_" << r << "\t";
      for (std::size_t c = 0; c < report.confusion[r].size(); ++c)
        out << (c ? "," : "") << report.confusion[r][c];
      out << "\n";
    }
    return out.str();
  }

  out << "TP\tFP\tFN\tF1-S\tF1-R\tmAP-S\tmAP-D\n";
  if (report_is_empty(report)) return out.str();
  out << report.tp << "\t" << report.fp << "\t" << report.fn << "\t"
      << fmt_f1(report.spotting_f1) << (report.trivially_perfect ? "*" : "") << "\t"
      << opt_f1(report.recognition_f1) << "\t" << opt_map(report.spotting_map) << "\t"
      << opt_map(report.detection_map) << "\n";
  if (report.trivially_perfect)
    out << "(* no ground truth and no predictions: F1 1 by convention)\n";
  if (!report.spotting_ap.thresholds.empty()) {
    out << "\nAP vs IoU (x1000)\nIoU";
    for (double t : report.spotting_ap.thresholds) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "\t%.2f", t);
      out << buf;
    }
    out << "\nS";
    for (const auto& ap : report.spotting_ap.ap) out << "\t" << opt_map(ap);
    out << "\n";
    if (!report.detection_ap.thresholds.empty() && !report.spotting_only) {
      out << "D";
      for (const auto& ap : report.detection_ap.ap) out << "\t" << opt_map(ap);
      out << "\n";
    }
  }
  if (!report.confusion.empty()) {
    out << "\nConfusion (rows = true, cols = predicted)\n";
    for (const auto& row : report.confusion) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "\t" : "") << row[c];
      out << "\n";
    }
  }
  return out.str();
}

void emit_report(const EvalReport& report, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_report: cannot open " + path);
  out << format_report(report, format);
  if (!out) throw std::runtime_error("emit_report: write failed for " + path);
}

EvalReport parse_delimited_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("parse_delimited_report: cannot open " + path);
  EvalReport rep;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "metric\tvalue") continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": no tab");
    const std::string key = line.substr(0, tab);
    const std::string value = line.substr(tab + 1);
    const bool absent = (value == "-");
    auto num = [&]() { return std::stod(value); };
    if (key == "tp") rep.tp = std::stol(value);
    else if (key == "fp") rep.fp = std::stol(value);
    else if (key == "fn") rep.fn = std::stol(value);
    else if (key == "spotting_f1") rep.spotting_f1 = num() / 100.0;
    else if (key == "trivially_perfect") rep.trivially_perfect = value == "1";
    else if (key == "recognition_f1") {
      if (!absent) rep.recognition_f1 = num() / 100.0;
    } else if (key == "spotting_map") {
      if (!absent) rep.spotting_map = num() / 1000.0;
    } else if (key == "detection_map") {
      if (!absent) rep.detection_map = num() / 1000.0;
    } else if (key.rfind("spotting_ap@", 0) == 0) {
      rep.spotting_ap.thresholds.push_back(std::stod(key.substr(12)));
      rep.spotting_ap.ap.push_back(absent ? std::optional<double>{}
                                          : std::optional<double>{num() / 1000.0});
    } else if (key.rfind("detection_ap@", 0) == 0) {
      rep.detection_ap.thresholds.push_back(std::stod(key.substr(13)));
      rep.detection_ap.ap.push_back(absent ? std::optional<double>{}
                                           : std::optional<double>{num() / 1000.0});
    } else if (key.rfind("confusion_", 0) == 0) {
      std::vector<long> row;
      std::stringstream ss(value);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stol(cell));
      rep.confusion.push_back(std::move(row));
    }
    // Unknown keys are ignored so reports stay forward-compatible.
  }
  rep.spotting_ap.mean = rep.spotting_map;
  rep.detection_ap.mean = rep.detection_map;
  return rep;
}

}  // namespace fedn
