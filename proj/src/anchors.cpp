#include "fedn/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedn {

PyramidLayout::PyramidLayout(int s) : segments(s) {
  if (s <= 0 || s % 32 != 0)
    throw std::invalid_argument("PyramidLayout: segments must be a positive multiple of 32");
}

int PyramidLayout::total_positions() const {
  int total = 0;
  for (int l = 0; l < kLevels; ++l) total += level_length(l);
  return total;
}

Interval AnchorSlot::matching_geometry(const PyramidLayout& layout) const {
  if (kind == SlotKind::anchor_based) return Interval(center - length / 2, center + length / 2);
  const double half_cell = 0.5 / layout.level_length(level);
  return Interval(center - half_cell, center + half_cell);
}

std::vector<AnchorSlot> build_anchors(const PyramidLayout& layout,
                                      const std::array<double, 5>& scale_multipliers) {
  for (std::size_t i = 0; i < scale_multipliers.size(); ++i) {
    if (scale_multipliers[i] <= 0.0)
      throw std::invalid_argument("build_anchors: scale multipliers must be positive");
    if (i > 0 && scale_multipliers[i] <= scale_multipliers[i - 1])
      throw std::invalid_argument("build_anchors: scale multipliers must be increasing");
  }
  std::vector<AnchorSlot> slots;
  slots.reserve(layout.total_slots());
  for (int level = 0; level < kLevels; ++level) {
    const int len = layout.level_length(level);
    const double stride_frac =
        static_cast<double>(layout.level_stride(level)) / layout.segments;
    for (int p = 0; p < len; ++p) {
      const double center = (p + 0.5) / len;
      slots.push_back({level, p, SlotKind::anchor_free, center, 0.0});
      for (double mult : scale_multipliers)
        slots.push_back({level, p, SlotKind::anchor_based, center, mult * stride_frac});
    }
  }
  return slots;
}

int slot_index(const PyramidLayout& layout, int level, int position, int slot) {
  int base = 0;
  for (int l = 0; l < level; ++l) base += layout.level_length(l);
  return (base + position) * kSlotsPerPosition + slot;
}

RegressionTarget encode(const Interval& gt, const AnchorSlot& anchor) {
  if (anchor.kind != SlotKind::anchor_based)
    throw std::invalid_argument("encode: anchor-free slots carry direct coordinates");
  return {(gt.center() - anchor.center) / anchor.length,
          std::log(gt.length() / anchor.length)};
}

DecodeResult decode_with_jacobian(const RegressionTarget& t, const AnchorSlot& anchor) {
  double s0, e0;
  double ds0_da, ds0_db, de0_da, de0_db;
  if (anchor.kind == SlotKind::anchor_based) {
    const double la = anchor.length;
    const double len = la * std::exp(t.b);
    const double c = anchor.center + t.a * la;
    s0 = c - len / 2;
    e0 = c + len / 2;
    ds0_da = la;
    de0_da = la;
    ds0_db = -len / 2;
    de0_db = len / 2;
  } else {
    // Raw (ys, ye), ordered. Ties route start to a and end to b.
    if (t.a <= t.b) {
      s0 = t.a; e0 = t.b;
      ds0_da = 1.0; ds0_db = 0.0; de0_da = 0.0; de0_db = 1.0;
    } else {
      s0 = t.b; e0 = t.a;
      ds0_da = 0.0; ds0_db = 1.0; de0_da = 1.0; de0_db = 0.0;
    }
  }

  const double cs = (s0 > 0.0 && s0 < 1.0) ? 1.0 : 0.0;
  const double ce = (e0 > 0.0 && e0 < 1.0) ? 1.0 : 0.0;
  const double s1 = std::clamp(s0, 0.0, 1.0);
  const double e1 = std::clamp(e0, 0.0, 1.0);

  DecodeResult out;
  if (e1 - s1 >= kMinDecodedLength) {
    out.start = s1;
    out.end = e1;
    out.ds_da = cs * ds0_da;
    out.ds_db = cs * ds0_db;
    out.de_da = ce * de0_da;
    out.de_db = ce * de0_db;
    return out;
  }

  // Too short after clamping: expand around the center to the minimum length,
  // sliding inside [0,1]. Both endpoints then depend on the center only.
  const double half = kMinDecodedLength / 2;
  const double c2 = 0.5 * (s1 + e1);
  const double cc = (c2 > half && c2 < 1.0 - half) ? 1.0 : 0.0;
  const double c3 = std::clamp(c2, half, 1.0 - half);
  out.start = c3 - half;
  out.end = c3 + half;
  const double dc_da = cc * 0.5 * (cs * ds0_da + ce * de0_da);
  const double dc_db = cc * 0.5 * (cs * ds0_db + ce * de0_db);
  out.ds_da = dc_da;
  out.ds_db = dc_db;
  out.de_da = dc_da;
  out.de_db = dc_db;
  return out;
}

Interval decode(const RegressionTarget& target, const AnchorSlot& anchor) {
  const DecodeResult r = decode_with_jacobian(target, anchor);
  return Interval(r.start, r.end);
}

AssignmentResult assign_targets(const std::vector<AnchorSlot>& slots,
                                const PyramidLayout& layout,
                                const std::vector<WindowGt>& gts,
                                int num_categories, double tau_pos) {
  if (num_categories <= 0)
    throw std::invalid_argument("assign_targets: num_categories must be positive");
  const int n = static_cast<int>(slots.size());
  const int g = static_cast<int>(gts.size());

  AssignmentResult res;
  res.num_categories = num_categories;
  res.positive.assign(n, 0);
  res.matched_gt.assign(n, -1);
  res.category_target.assign(static_cast<std::size_t>(n) * num_categories, 0.0);

  if (g > 0) {
    std::vector<double> overlap(static_cast<std::size_t>(n) * g, 0.0);
    for (int i = 0; i < n; ++i) {
      const Interval geom = slots[i].matching_geometry(layout);
      for (int j = 0; j < g; ++j)
        overlap[static_cast<std::size_t>(i) * g + j] = iou(geom, gts[j].interval);
    }

    // Threshold pass: each slot takes its best gt when the IoU clears tau_pos.
    for (int i = 0; i < n; ++i) {
      int best = -1;
      double best_iou = 0.0;
      for (int j = 0; j < g; ++j) {
        const double v = overlap[static_cast<std::size_t>(i) * g + j];
        if (v > best_iou) {
          best_iou = v;
          best = j;
        }
      }
      if (best >= 0 && best_iou >= tau_pos) {
        res.positive[i] = 1;
        res.matched_gt[i] = best;
      }
    }

    // Forcing pass: every gt claims its max-IoU slot, each gt a distinct one,
    // so no ground truth is left without a positive.
    std::vector<char> forced(n, 0);
    for (int j = 0; j < g; ++j) {
      int best = -1;
      double best_iou = 0.0;
      for (int i = 0; i < n; ++i) {
        if (forced[i]) continue;
        const double v = overlap[static_cast<std::size_t>(i) * g + j];
        if (v > best_iou) {
          best_iou = v;
          best = i;
        }
      }
      if (best >= 0) {
        forced[best] = 1;
        res.positive[best] = 1;
        res.matched_gt[best] = j;
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    if (!res.positive[i]) continue;
    ++res.num_positive;
    const int cat = gts[res.matched_gt[i]].category;
    if (cat < 0 || cat >= num_categories)
      throw std::invalid_argument("assign_targets: gt category out of range");
    res.category_target[static_cast<std::size_t>(i) * num_categories + cat] = 1.0;
  }
  return res;
}

}  // namespace fedn
