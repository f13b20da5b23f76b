#pragma once

#include <string>
#include <vector>

#include "fedn/anchors.hpp"
#include "fedn/interval.hpp"
#include "fedn/network.hpp"
#include "fedn/tensor.hpp"

namespace fedn {

struct PipelineConfig {
  int overlap = 6;                     // frames shared by consecutive segments
  double confidence_threshold = 0.3;   // pre-NMS detection cutoff
  double nms_threshold = 0.3;

  void validate(int f) const;
  int segment_stride(int f) const { return f - overlap; }
};

// Sliding-window coverage of one video: half-window hop, right-aligned final
// window; videos shorter than one window use a single padded window at 0.
struct WindowPlan {
  std::vector<int> window_start_frames;
  int frames_per_window = 0;  // (s - 1) * k + f
  int segment_stride = 0;     // k = f - overlap
  int window_hop = 0;         // frames_per_window / 2
  int segments = 0;           // s
  int frames_per_segment = 0; // f
};

WindowPlan plan_windows(int num_frames, int s, int f, int overlap);

// (N, d) features -> (s, f, d) block; segment j covers frames
// [start + j*k, start + j*k + f), indices clamped to the last frame.
Tensor slice_window(const Tensor& features, int start, const WindowPlan& plan);

// Raw slot outputs -> window-normalized detections above the confidence
// threshold. Confidence is the highest category sigmoid (or the sigmoid of
// the confidence logit when that branch exists).
std::vector<ScoredDetection> decode_window(const RawWindowPrediction& raw,
                                           const std::vector<AnchorSlot>& anchors,
                                           const PyramidLayout& layout,
                                           double confidence_threshold,
                                           bool with_confidence_branch);

// Full video inference: window predictions mapped to frame units, pooled,
// deduplicated by NMS, sorted by onset.
std::vector<ScoredDetection> detect_video(const Tensor& features, FednNetwork& model,
                                          const std::vector<AnchorSlot>& anchors,
                                          const PipelineConfig& pipeline);

// Prediction file: video_id \t onset \t offset \t confidence \t category,
// onset/offset as reals in frame units, confidence with 6 decimals.
struct PredictionRecord {
  std::string video_id;
  double onset = 0.0;
  double offset = 0.0;
  double confidence = 0.0;
  int category = 0;
};

std::vector<PredictionRecord> to_prediction_records(
    const std::string& video_id, const std::vector<ScoredDetection>& detections);
void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::string& path);
std::vector<PredictionRecord> load_predictions(const std::string& path);

}  // namespace fedn
