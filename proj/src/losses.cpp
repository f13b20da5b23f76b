#include "fedn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace fedn {

using ag::Var;

IntervalLossGrad interval_loss_with_grad(const Interval& pred, const Interval& gt,
                                         LossVariant variant) {
  switch (variant) {
    case LossVariant::diou: return diou_loss_with_grad(pred, gt);
    case LossVariant::giou: return giou_loss_with_grad(pred, gt);
    case LossVariant::iou: return iou_loss_with_grad(pred, gt);
  }
  throw std::logic_error("unknown loss variant");
}

double interval_loss(const Interval& pred, const std::optional<Interval>& gt,
                     LossVariant variant) {
  if (!gt) return 0.0;
  return interval_loss_with_grad(pred, *gt, variant).loss;
}

double bce_with_logit(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

double bce_logit_grad(double logit, double target) {
  return 1.0 / (1.0 + std::exp(-logit)) - target;
}

double recognition_loss(const std::vector<double>& logits,
                        const std::vector<double>& targets) {
  if (logits.size() != targets.size())
    throw std::invalid_argument("recognition_loss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) acc += bce_with_logit(logits[i], targets[i]);
  return acc;
}

WindowTargets build_window_targets(const AssignmentResult& assignment,
                                   const std::vector<AnchorSlot>& slots,
                                   const PyramidLayout& layout,
                                   const std::vector<WindowGt>& gts, int c_eff) {
  if (assignment.num_categories != c_eff)
    throw std::invalid_argument("build_window_targets: category width mismatch");
  WindowTargets out;
  out.num_positive = assignment.num_positive;
  out.num_slots = layout.total_slots();

  for (int l = 0; l < kLevels; ++l) {
    const std::size_t len = static_cast<std::size_t>(layout.level_length(l));
    out.class_targets[l] =
        Tensor({len, static_cast<std::size_t>(kSlotsPerPosition * c_eff)});
    out.conf_targets[l] = Tensor({len, static_cast<std::size_t>(kSlotsPerPosition)});
    out.positive_class[l].assign(len * kSlotsPerPosition, 0);
    out.positive_mask[l].assign(len * kSlotsPerPosition, 0);
  }

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!assignment.positive[i]) continue;
    const AnchorSlot& slot = slots[i];
    const int gt_index = assignment.matched_gt[i];
    const int cat = gts[gt_index].category;
    const int l = slot.level;
    const int p = slot.position;
    const int k = static_cast<int>(i) - slot_index(layout, l, p, 0);

    out.positives[l].push_back({p, k, slot, gts[gt_index].interval});
    out.class_targets[l].at(p, k * c_eff + cat) = 1.0;
    out.conf_targets[l].at(p, k) = 1.0;
    out.positive_class[l][p * kSlotsPerPosition + k] = cat;
    out.positive_mask[l][p * kSlotsPerPosition + k] = 1;
  }
  return out;
}

ag::Var interval_loss_node(const ag::Var& interval_params,
                           const std::vector<WindowTargets::PositiveSlot>& positives,
                           LossVariant variant) {
  Tensor out({1});
  double acc = 0.0;
  for (const auto& ps : positives) {
    const RegressionTarget t{interval_params->value.at(ps.position, ps.slot * 2),
                             interval_params->value.at(ps.position, ps.slot * 2 + 1)};
    const DecodeResult dec = decode_with_jacobian(t, ps.anchor);
    acc += interval_loss_with_grad(Interval(dec.start, dec.end), ps.gt, variant).loss;
  }
  out[0] = acc;

  return ag::custom_op(std::move(out), {interval_params},
                       [interval_params, positives, variant](ag::Node& node) {
    if (!interval_params->requires_grad) return;
    const double up = node.grad[0];
    Tensor g = Tensor::zeros(interval_params->value.shape());
    for (const auto& ps : positives) {
      const RegressionTarget t{interval_params->value.at(ps.position, ps.slot * 2),
                               interval_params->value.at(ps.position, ps.slot * 2 + 1)};
      const DecodeResult dec = decode_with_jacobian(t, ps.anchor);
      const IntervalLossGrad lg =
          interval_loss_with_grad(Interval(dec.start, dec.end), ps.gt, variant);
      g.at(ps.position, ps.slot * 2) +=
          up * (lg.d_start * dec.ds_da + lg.d_end * dec.de_da);
      g.at(ps.position, ps.slot * 2 + 1) +=
          up * (lg.d_start * dec.ds_db + lg.d_end * dec.de_db);
    }
    interval_params->accumulate(g);
  });
}

ag::Var variant_confidence_loss(const RawWindowPrediction& raw,
                                const WindowTargets& targets,
                                const NetworkConfig& config) {
  if (!config.with_confidence_branch)
    throw std::invalid_argument("variant_confidence_loss: confidence branch disabled");
  const int c_eff = config.effective_categories();
  const double pos_norm = 1.0 / std::max(1, targets.num_positive);
  const double slot_norm = 1.0 / targets.num_slots;

  Var conf_sum, cce_sum;
  for (int l = 0; l < kLevels; ++l) {
    const LevelPrediction& lp = raw.levels[l];
    Var conf = ag::bce_with_logits_sum(lp.conf_logits, targets.conf_targets[l]);
    conf_sum = conf_sum ? ag::add(conf_sum, conf) : conf;
    Var rows = ag::reshape(lp.class_logits,
                           {static_cast<std::size_t>(lp.length) * kSlotsPerPosition,
                            static_cast<std::size_t>(c_eff)});
    Var cce = ag::softmax_ce_masked_sum(rows, targets.positive_class[l],
                                        targets.positive_mask[l]);
    cce_sum = cce_sum ? ag::add(cce_sum, cce) : cce;
  }
  return ag::add(ag::scale(conf_sum, slot_norm), ag::scale(cce_sum, pos_norm));
}

TotalLoss total_loss(const RawWindowPrediction& raw, const WindowTargets& targets,
                     const NetworkConfig& config) {
  const double pos_norm = 1.0 / std::max(1, targets.num_positive);
  const double slot_norm = 1.0 / targets.num_slots;

  Var interval_sum;
  for (int l = 0; l < kLevels; ++l) {
    if (targets.positives[l].empty()) continue;
    Var t = interval_loss_node(raw.levels[l].interval_params, targets.positives[l],
                               config.loss_variant);
    interval_sum = interval_sum ? ag::add(interval_sum, t) : t;
  }

  Var recog;
  if (config.with_confidence_branch) {
    recog = variant_confidence_loss(raw, targets, config);
  } else {
    Var bce_sum;
    for (int l = 0; l < kLevels; ++l) {
      Var t = ag::bce_with_logits_sum(raw.levels[l].class_logits, targets.class_targets[l]);
      bce_sum = bce_sum ? ag::add(bce_sum, t) : t;
    }
    recog = ag::scale(bce_sum, slot_norm);
  }

  TotalLoss out;
  out.breakdown.num_positive = targets.num_positive;
  out.breakdown.num_slots = targets.num_slots;
  out.breakdown.interval_loss = interval_sum ? interval_sum->value[0] * pos_norm : 0.0;
  out.breakdown.recognition_loss = recog->value[0];
  out.breakdown.total = config.alpha * out.breakdown.interval_loss +
                        config.beta * out.breakdown.recognition_loss;

  Var total = ag::scale(recog, config.beta);
  if (interval_sum)
    total = ag::add(total, ag::scale(interval_sum, config.alpha * pos_norm));
  out.value = total;
  return out;
}

}  // namespace fedn
