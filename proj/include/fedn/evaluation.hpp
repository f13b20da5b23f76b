#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedn/interval.hpp"
#include "fedn/pipeline.hpp"
#include "fedn/synthetic.hpp"

namespace fedn {

// Predictions and ground truth grouped per video.
struct EvalData {
  std::map<std::string, std::vector<ScoredDetection>> predictions;
  std::map<std::string, std::vector<Interval>> gt_intervals;
  std::map<std::string, std::vector<int>> gt_categories;

  static EvalData from_files(const std::vector<PredictionRecord>& predictions,
                             const std::vector<VideoAnnotation>& annotations);
  void add_video(const std::string& video_id, std::vector<ScoredDetection> preds,
                 const VideoAnnotation& annotation);
  std::size_t num_gts() const;
};

struct SpottingCounts {
  long tp = 0, fp = 0, fn = 0;
  double f1 = 0.0;
  bool trivially_perfect = false;  // no gts and no predictions anywhere
};

double f1_from_counts(long tp, long fp, long fn);

// CASME protocol: greedy confidence-ordered matching at IoU >= 0.5,
// category-agnostic; F1 = 2tp / (2tp + fp + fn).
SpottingCounts spotting_f1(const EvalData& data);

// Micro-F1 over the spotting true positives' labels (equals accuracy on the
// matched set); absent when there are no true positives.
std::optional<double> recognition_f1(const EvalData& data);

// 101-point interpolated average precision at one IoU threshold, predictions
// ranked globally by confidence, matched greedily per video. class_aware
// averages per-category AP over categories with at least one gt. Absent when
// there are no ground truths (no category with a gt).
std::optional<double> average_precision(const EvalData& data, double iou_threshold,
                                        bool class_aware);

struct ApCurve {
  std::vector<double> thresholds;            // 0.50 .. 0.95 step 0.05
  std::vector<std::optional<double>> ap;     // aligned with thresholds
  std::optional<double> mean;                // mean of present APs; absent if none
};

ApCurve map_range(const EvalData& data, bool class_aware);

// Row = true category, column = predicted; counts spotting true positives only.
std::vector<std::vector<long>> confusion_matrix(const EvalData& data, int num_categories);

struct EvalReport {
  long tp = 0, fp = 0, fn = 0;
  double spotting_f1 = 0.0;
  bool trivially_perfect = false;
  std::optional<double> recognition_f1;
  ApCurve spotting_ap;   // class-agnostic
  ApCurve detection_ap;  // class-aware
  std::optional<double> spotting_map;
  std::optional<double> detection_map;
  std::vector<std::vector<long>> confusion;
  bool spotting_only = false;  // suppresses recognition/detection columns
};

EvalReport evaluate(const EvalData& data, int num_categories, bool spotting_only = false);

enum class ReportFormat { text_table, delimited };

// F1 columns are printed x100, mAP columns x1000.
std::string format_report(const EvalReport& report, ReportFormat format);
void emit_report(const EvalReport& report, const std::string& path, ReportFormat format);
EvalReport parse_delimited_report(const std::string& path);

}  // namespace fedn
