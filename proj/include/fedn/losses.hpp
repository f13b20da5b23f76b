#pragma once

#include <array>
#include <optional>
#include <vector>

#include "fedn/anchors.hpp"
#include "fedn/autograd.hpp"
#include "fedn/interval.hpp"
#include "fedn/network.hpp"

namespace fedn {

struct LossBreakdown {
  double interval_loss = 0.0;     // mean over positive slots
  double recognition_loss = 0.0;  // mean over all slots
  double total = 0.0;             // alpha * interval + beta * recognition
  int num_positive = 0;
  int num_slots = 0;
};

// 1 - {diou|giou|iou}(pred, gt); zero for negative slots (absent gt).
double interval_loss(const Interval& pred, const std::optional<Interval>& gt,
                     LossVariant variant);
IntervalLossGrad interval_loss_with_grad(const Interval& pred, const Interval& gt,
                                         LossVariant variant);

// Sum over categories of binary cross-entropy on sigmoid(logits) against
// {0,1} targets; numerically stable for any finite logit.
double recognition_loss(const std::vector<double>& logits,
                        const std::vector<double>& targets);
double bce_with_logit(double logit, double target);
double bce_logit_grad(double logit, double target);  // d/d logit = sigmoid - target

// Per-window targets reorganized per pyramid level so the loss nodes can
// consume the head outputs directly.
struct WindowTargets {
  struct PositiveSlot {
    int position = 0;
    int slot = 0;  // 0..5 within the position
    AnchorSlot anchor;
    Interval gt;
  };
  std::array<std::vector<PositiveSlot>, kLevels> positives;
  std::array<Tensor, kLevels> class_targets;  // (l, 6*C_eff)
  std::array<Tensor, kLevels> conf_targets;   // (l, 6), 1 on positive slots
  std::array<std::vector<int>, kLevels> positive_class;  // per slot row (l*6)
  std::array<std::vector<char>, kLevels> positive_mask;  // per slot row (l*6)
  int num_positive = 0;
  int num_slots = 0;
};

WindowTargets build_window_targets(const AssignmentResult& assignment,
                                   const std::vector<AnchorSlot>& slots,
                                   const PyramidLayout& layout,
                                   const std::vector<WindowGt>& gts, int c_eff);

// Sum over the level's positive slots of the variant interval loss on the
// decoded prediction, differentiable through decode back to the raw params.
ag::Var interval_loss_node(const ag::Var& interval_params,
                           const std::vector<WindowTargets::PositiveSlot>& positives,
                           LossVariant variant);

struct TotalLoss {
  ag::Var value;  // scalar graph node
  LossBreakdown breakdown;
};

// alpha * (interval sum / max(1, positives)) + beta * (recognition sum / slots).
// With the confidence branch the recognition term becomes confidence BCE per
// slot plus categorical cross-entropy per positive.
TotalLoss total_loss(const RawWindowPrediction& raw, const WindowTargets& targets,
                     const NetworkConfig& config);

// Recognition term of the confidence-branch variant alone; throws when the
// config does not enable the branch.
ag::Var variant_confidence_loss(const RawWindowPrediction& raw,
                                const WindowTargets& targets,
                                const NetworkConfig& config);

}  // namespace fedn
