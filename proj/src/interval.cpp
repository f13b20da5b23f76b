#include "fedn/interval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedn {

Interval::Interval(double s, double e) : start(s), end(e) {
  if (!(e > s) || !std::isfinite(s) || !std::isfinite(e))
    throw std::invalid_argument("Interval: require finite end > start");
}

int argmax_lowest(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("argmax_lowest: empty");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

double intersection_len(const Interval& a, const Interval& b) {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

double hull_len(const Interval& a, const Interval& b) {
  return std::max(a.end, b.end) - std::min(a.start, b.start);
}

}  // namespace

double iou(const Interval& a, const Interval& b) {
  const double inter = intersection_len(a, b);
  const double uni = a.length() + b.length() - inter;
  return inter / uni;
}

double giou(const Interval& a, const Interval& b) {
  const double inter = intersection_len(a, b);
  const double uni = a.length() + b.length() - inter;
  const double hull = hull_len(a, b);
  return inter / uni - (hull - uni) / hull;
}

double diou(const Interval& a, const Interval& b) {
  const double inter = intersection_len(a, b);
  const double uni = a.length() + b.length() - inter;
  const double hull = hull_len(a, b);
  const double dc = a.center() - b.center();
  return inter / uni - (dc * dc) / (hull * hull);
}

namespace {

// Shared piecewise derivative bookkeeping for the IoU family. All regime
// indicators resolve ties toward the left regime (the configuration attained
// by an infinitesimally smaller endpoint); the boundary set has measure zero.
struct IoUParts {
  double inter, uni, hull;
  double di_ds, di_de;  // d intersection / d pred endpoints
  double du_ds, du_de;  // d union
  double dh_ds, dh_de;  // d hull
};

IoUParts iou_parts(const Interval& p, const Interval& g) {
  IoUParts r{};
  r.inter = intersection_len(p, g);
  r.uni = p.length() + g.length() - r.inter;
  r.hull = hull_len(p, g);
  if (r.inter > 0.0) {
    r.di_ds = (p.start > g.start) ? -1.0 : 0.0;
    r.di_de = (p.end <= g.end) ? 1.0 : 0.0;
  }
  r.du_ds = -1.0 - r.di_ds;
  r.du_de = 1.0 - r.di_de;
  r.dh_ds = (p.start <= g.start) ? -1.0 : 0.0;
  r.dh_de = (p.end >= g.end) ? 1.0 : 0.0;
  return r;
}

}  // namespace

IntervalLossGrad iou_loss_with_grad(const Interval& pred, const Interval& gt) {
  const IoUParts q = iou_parts(pred, gt);
  const double u2 = q.uni * q.uni;
  IntervalLossGrad out;
  out.loss = 1.0 - q.inter / q.uni;
  out.d_start = -(q.di_ds * q.uni - q.inter * q.du_ds) / u2;
  out.d_end = -(q.di_de * q.uni - q.inter * q.du_de) / u2;
  return out;
}

IntervalLossGrad giou_loss_with_grad(const Interval& pred, const Interval& gt) {
  const IoUParts q = iou_parts(pred, gt);
  const double u2 = q.uni * q.uni;
  const double h2 = q.hull * q.hull;
  // giou = iou - 1 + uni/hull
  IntervalLossGrad out;
  out.loss = 1.0 - (q.inter / q.uni - (q.hull - q.uni) / q.hull);
  const double diou_ds = (q.di_ds * q.uni - q.inter * q.du_ds) / u2;
  const double diou_de = (q.di_de * q.uni - q.inter * q.du_de) / u2;
  out.d_start = -(diou_ds + (q.du_ds * q.hull - q.uni * q.dh_ds) / h2);
  out.d_end = -(diou_de + (q.du_de * q.hull - q.uni * q.dh_de) / h2);
  return out;
}

IntervalLossGrad diou_loss_with_grad(const Interval& pred, const Interval& gt) {
  const IoUParts q = iou_parts(pred, gt);
  const double u2 = q.uni * q.uni;
  const double h2 = q.hull * q.hull;
  const double dc = pred.center() - gt.center();
  IntervalLossGrad out;
  out.loss = 1.0 - (q.inter / q.uni - dc * dc / h2);
  const double diou_ds = (q.di_ds * q.uni - q.inter * q.du_ds) / u2;
  const double diou_de = (q.di_de * q.uni - q.inter * q.du_de) / u2;
  // d(dc^2/h^2)/dx = dc/h^2 - 2 dc^2 dh/h^3, since d(dc)/d(start|end) = 1/2.
  const double pen_ds = dc / h2 - 2.0 * dc * dc * q.dh_ds / (h2 * q.hull);
  const double pen_de = dc / h2 - 2.0 * dc * dc * q.dh_de / (h2 * q.hull);
  out.d_start = -diou_ds + pen_ds;
  out.d_end = -diou_de + pen_de;
  return out;
}

namespace {

// Deterministic total order: confidence desc, start asc, category asc, end asc.
bool detection_before(const ScoredDetection& a, const ScoredDetection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.interval.start != b.interval.start) return a.interval.start < b.interval.start;
  if (a.category != b.category) return a.category < b.category;
  return a.interval.end < b.interval.end;
}

}  // namespace

std::vector<ScoredDetection> nms(std::vector<ScoredDetection> detections,
                                 double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: iou_threshold must be in (0,1)");
  std::stable_sort(detections.begin(), detections.end(), detection_before);
  std::vector<ScoredDetection> kept;
  kept.reserve(detections.size());
  for (const ScoredDetection& cand : detections) {
    bool suppressed = false;
    for (const ScoredDetection& k : kept) {
      if (iou(cand.interval, k.interval) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

int MatchResult::tp() const {
  return static_cast<int>(std::count_if(pred_to_gt.begin(), pred_to_gt.end(),
                                        [](int g) { return g >= 0; }));
}

MatchResult match_greedy(const std::vector<ScoredDetection>& preds,
                         const std::vector<Interval>& gts, double iou_threshold,
                         bool require_category,
                         const std::vector<int>& gt_categories) {
  if (require_category && gt_categories.size() != gts.size())
    throw std::invalid_argument("match_greedy: gt_categories size mismatch");

  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return detection_before(preds[a], preds[b]);
  });

  MatchResult result;
  result.pred_to_gt.assign(preds.size(), -1);
  result.gt_to_pred.assign(gts.size(), -1);

  for (int pi : order) {
    const ScoredDetection& p = preds[pi];
    int best_gt = -1;
    double best_iou = 0.0;
    for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
      if (result.gt_to_pred[gi] >= 0) continue;
      if (require_category && gt_categories[gi] != p.category) continue;
      const double v = iou(p.interval, gts[gi]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_gt = gi;
      }
    }
    if (best_gt >= 0) {
      result.pred_to_gt[pi] = best_gt;
      result.gt_to_pred[best_gt] = pi;
    }
  }
  return result;
}

}  // namespace fedn
