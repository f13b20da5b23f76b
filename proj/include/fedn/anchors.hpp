#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "fedn/interval.hpp"

namespace fedn {

inline constexpr int kLevels = 4;
inline constexpr int kSlotsPerPosition = 6;  // 1 anchor-free + 5 anchor-based
inline constexpr int kAnchorBasedPerPosition = 5;
inline constexpr double kMinDecodedLength = 1e-4;  // window-normalized units

// Geometry of the 4-level temporal pyramid over s segments.
struct PyramidLayout {
  int segments = 64;

  explicit PyramidLayout(int s);

  int level_length(int level) const { return segments >> (2 + level); }
  int level_stride(int level) const { return 4 << level; }
  int total_positions() const;
  int total_slots() const { return total_positions() * kSlotsPerPosition; }
};

enum class SlotKind { anchor_free, anchor_based };

// One prediction slot: grid cell (anchor-free) or predefined interval
// (anchor-based), in window-normalized [0,1] coordinates.
struct AnchorSlot {
  int level = 0;
  int position = 0;
  SlotKind kind = SlotKind::anchor_free;
  double center = 0.0;
  double length = 0.0;  // anchor_based only; anchor-free slots keep 0

  // Geometry used for target assignment: the anchor interval itself, or the
  // one-stride cell around the position for anchor-free slots.
  Interval matching_geometry(const PyramidLayout& layout) const;
};

// Offsets regressed by the head: (dc, dl) against an anchor, or raw
// window-normalized (ys, ye) for the anchor-free slot.
struct RegressionTarget {
  double a = 0.0;  // dc or ys
  double b = 0.0;  // dl or ye
};

inline std::array<double, 5> default_anchor_scales() { return {0.5, 1.0, 1.5, 2.0, 3.0}; }

// Full slot table: per level, per position, slot 0 anchor-free followed by 5
// anchor-based slots of strictly increasing length (scale x stride / s).
std::vector<AnchorSlot> build_anchors(const PyramidLayout& layout,
                                      const std::array<double, 5>& scale_multipliers);

// Flat index of (level, position, slot) in the build_anchors order.
int slot_index(const PyramidLayout& layout, int level, int position, int slot);

// dc = (c_gt - c_a) / l_a, dl = ln(l_gt / l_a). Anchor-free slots cannot be
// encoded this way and are rejected.
RegressionTarget encode(const Interval& gt, const AnchorSlot& anchor);

// Inverse of encode for anchor-based slots; direct (ys, ye) with
// swap-then-clamp for anchor-free ones. Total: output is always a valid
// interval inside [0,1] of length >= kMinDecodedLength.
Interval decode(const RegressionTarget& target, const AnchorSlot& anchor);

// decode plus the Jacobian d(start,end)/d(a,b), piecewise through the swap,
// clamp and minimum-length rules. Single source of truth for the training
// path so inference and loss gradients agree exactly.
struct DecodeResult {
  double start = 0.0, end = 0.0;
  double ds_da = 0.0, ds_db = 0.0;
  double de_da = 0.0, de_db = 0.0;
};
DecodeResult decode_with_jacobian(const RegressionTarget& target, const AnchorSlot& anchor);

// One ground-truth span inside a window, normalized to [0,1].
struct WindowGt {
  Interval interval;
  int category = 0;
};

// Per-slot training targets.
struct AssignmentResult {
  std::vector<char> positive;             // per slot
  std::vector<int> matched_gt;            // per slot, -1 when negative
  std::vector<double> category_target;    // slots x C, row-major; one-hot or zero
  int num_categories = 0;
  int num_positive = 0;

  const double* target_row(int slot) const { return category_target.data() + slot * num_categories; }
};

// Single-threshold assignment: a slot is positive iff its matching geometry
// reaches IoU >= tau_pos against some gt, plus one forced best-IoU slot per
// gt so every ground truth owns at least one positive.
AssignmentResult assign_targets(const std::vector<AnchorSlot>& slots,
                                const PyramidLayout& layout,
                                const std::vector<WindowGt>& gts,
                                int num_categories, double tau_pos = 0.5);

}  // namespace fedn
