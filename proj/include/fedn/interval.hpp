#pragma once

#include <optional>
#include <vector>

namespace fedn {

// Half-open temporal span [start, end) in frame units. end > start always;
// a degenerate or inverted pair is rejected at construction.
struct Interval {
  double start = 0.0;
  double end = 1.0;

  Interval() = default;
  Interval(double s, double e);

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }

  bool operator==(const Interval& o) const { return start == o.start && end == o.end; }
};

// Detection tuple: interval + confidence + per-category scores + label.
struct ScoredDetection {
  Interval interval;
  double confidence = 0.0;
  std::vector<double> category_scores;
  int category = 0;
};

// Lowest index wins ties, matching the detection tuple contract.
int argmax_lowest(const std::vector<double>& v);

// 1D intersection-over-union. Touching endpoints count as disjoint.
double iou(const Interval& a, const Interval& b);

// Generalized IoU: IoU - (|hull| - |union|) / |hull|.
double giou(const Interval& a, const Interval& b);

// Distance IoU: IoU - (center distance)^2 / |hull|^2.
double diou(const Interval& a, const Interval& b);

// Loss value plus analytic gradient w.r.t. the predicted endpoints.
struct IntervalLossGrad {
  double loss = 0.0;
  double d_start = 0.0;
  double d_end = 0.0;
};

// loss = 1 - diou(pred, gt), differentiated in closed form. Piecewise in the
// overlap regime; at regime boundaries the left-regime derivative is used.
IntervalLossGrad diou_loss_with_grad(const Interval& pred, const Interval& gt);
IntervalLossGrad giou_loss_with_grad(const Interval& pred, const Interval& gt);
IntervalLossGrad iou_loss_with_grad(const Interval& pred, const Interval& gt);

// Greedy NMS by descending confidence (ties: earlier start, then lower
// category index). Detections overlapping a kept one with IoU strictly above
// the threshold are dropped. Output is ordered by descending confidence.
std::vector<ScoredDetection> nms(std::vector<ScoredDetection> detections,
                                 double iou_threshold);

// Greedy one-to-one matching of predictions to ground-truth intervals.
struct MatchResult {
  std::vector<int> pred_to_gt;  // per prediction: matched gt index or -1
  std::vector<int> gt_to_pred;  // per gt: matched prediction index or -1

  int tp() const;
  int fp() const { return static_cast<int>(pred_to_gt.size()) - tp(); }
  int fn() const { return static_cast<int>(gt_to_pred.size()) - tp(); }
};

// Predictions are visited in descending confidence (ties: earlier start, then
// lower category index); each takes the unmatched gt of highest IoU >=
// iou_threshold, requiring equal category when require_category is set.
MatchResult match_greedy(const std::vector<ScoredDetection>& preds,
                         const std::vector<Interval>& gts, double iou_threshold,
                         bool require_category = false,
                         const std::vector<int>& gt_categories = {});

}  // namespace fedn
