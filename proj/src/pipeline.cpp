#include "fedn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedn {

void PipelineConfig::validate(int f) const {
  if (overlap < 0 || overlap >= f)
    throw std::invalid_argument("PipelineConfig: overlap must be in [0, f)");
  if (confidence_threshold < 0.0 || confidence_threshold > 1.0)
    throw std::invalid_argument("PipelineConfig: confidence_threshold must be in [0,1]");
  if (nms_threshold <= 0.0 || nms_threshold >= 1.0)
    throw std::invalid_argument("PipelineConfig: nms_threshold must be in (0,1)");
}

WindowPlan plan_windows(int num_frames, int s, int f, int overlap) {
  if (num_frames < 1) throw std::invalid_argument("plan_windows: num_frames must be >= 1");
  const int k = f - overlap;
  if (k <= 0) throw std::invalid_argument("plan_windows: overlap must be below f");

  WindowPlan plan;
  plan.segments = s;
  plan.frames_per_segment = f;
  plan.segment_stride = k;
  plan.frames_per_window = (s - 1) * k + f;
  plan.window_hop = plan.frames_per_window / 2;

  for (int start = 0; start + plan.frames_per_window <= num_frames;
       start += plan.window_hop)
    plan.window_start_frames.push_back(start);
  const int last = std::max(0, num_frames - plan.frames_per_window);
  if (plan.window_start_frames.empty() || plan.window_start_frames.back() != last)
    plan.window_start_frames.push_back(last);
  return plan;
}

Tensor slice_window(const Tensor& features, int start, const WindowPlan& plan) {
  if (features.rank() != 2) throw std::invalid_argument("slice_window: features (N, d)");
  const int n = static_cast<int>(features.dim(0));
  const std::size_t d = features.dim(1);
  const int s = plan.segments, f = plan.frames_per_segment, k = plan.segment_stride;

  Tensor out({static_cast<std::size_t>(s), static_cast<std::size_t>(f), d});
  for (int j = 0; j < s; ++j)
    for (int i = 0; i < f; ++i) {
      const int frame = std::min(start + j * k + i, n - 1);  // repeat-pad past the end
      for (std::size_t c = 0; c < d; ++c)
        out.at(j, i, c) = features.at(static_cast<std::size_t>(frame), c);
    }
  return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<ScoredDetection> decode_window(const RawWindowPrediction& raw,
                                           const std::vector<AnchorSlot>& anchors,
                                           const PyramidLayout& layout,
                                           double confidence_threshold,
                                           bool with_confidence_branch) {
  std::vector<ScoredDetection> out;
  for (int l = 0; l < kLevels; ++l) {
    const LevelPrediction& lp = raw.levels[l];
    const Tensor& params = lp.interval_params->value;
    const Tensor& logits = lp.class_logits->value;
    const int c_eff = static_cast<int>(logits.dim(1)) / kSlotsPerPosition;
    for (int p = 0; p < lp.length; ++p) {
      for (int k = 0; k < kSlotsPerPosition; ++k) {
        const AnchorSlot& anchor = anchors[slot_index(layout, l, p, k)];
        ScoredDetection det;
        det.category_scores.resize(c_eff);
        for (int c = 0; c < c_eff; ++c)
          det.category_scores[c] = sigmoid(logits.at(p, k * c_eff + c));
        det.category = argmax_lowest(det.category_scores);
        det.confidence = with_confidence_branch
                             ? sigmoid(lp.conf_logits->value.at(p, k))
                             : det.category_scores[det.category];
        if (det.confidence < confidence_threshold) continue;
        det.interval =
            decode({params.at(p, k * 2), params.at(p, k * 2 + 1)}, anchor);
        out.push_back(std::move(det));
      }
    }
  }
  return out;
}

std::vector<ScoredDetection> detect_video(const Tensor& features, FednNetwork& model,
                                          const std::vector<AnchorSlot>& anchors,
                                          const PipelineConfig& pipeline) {
  const NetworkConfig& cfg = model.config();
  pipeline.validate(cfg.f);
  const int n = static_cast<int>(features.dim(0));
  const WindowPlan plan = plan_windows(n, cfg.s, cfg.f, pipeline.overlap);
  const double fpw = plan.frames_per_window;

  std::vector<ScoredDetection> pooled;
  for (int start : plan.window_start_frames) {
    const Tensor block = slice_window(features, start, plan);
    const RawWindowPrediction raw = model.forward(block);
    for (ScoredDetection det :
         decode_window(raw, anchors, model.layout(), pipeline.confidence_threshold,
                       cfg.with_confidence_branch)) {
      double onset = start + det.interval.start * fpw;
      double offset = start + det.interval.end * fpw;
      onset = std::clamp(onset, 0.0, static_cast<double>(n));
      offset = std::clamp(offset, 0.0, static_cast<double>(n));
      if (offset - onset < 1.0) {
        // Enforce a one-frame minimum, sliding inside [0, N).
        double c = std::clamp(0.5 * (onset + offset), 0.5, n - 0.5);
        onset = c - 0.5;
        offset = c + 0.5;
      }
      det.interval = Interval(onset, offset);
      pooled.push_back(std::move(det));
    }
  }

  std::vector<ScoredDetection> kept = nms(std::move(pooled), pipeline.nms_threshold);
  std::sort(kept.begin(), kept.end(), [](const ScoredDetection& a, const ScoredDetection& b) {
    if (a.interval.start != b.interval.start) return a.interval.start < b.interval.start;
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.category < b.category;
  });
  return kept;
}

std::vector<PredictionRecord> to_prediction_records(
    const std::string& video_id, const std::vector<ScoredDetection>& detections) {
  std::vector<PredictionRecord> out;
  out.reserve(detections.size());
  for (const ScoredDetection& d : detections)
    out.push_back({video_id, d.interval.start, d.interval.end, d.confidence, d.category});
  return out;
}

void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_predictions: cannot open " + path);
  char buf[160];
  for (const PredictionRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%s\t%.3f\t%.3f\t%.6f\t%d\n", r.video_id.c_str(),
                  r.onset, r.offset, r.confidence, r.category);
    out << buf;
  }
  if (!out) throw std::runtime_error("save_predictions: write failed for " + path);
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_predictions: cannot open " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 5)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected 5 fields, got " + std::to_string(fields.size()));
    try {
      PredictionRecord r;
      r.video_id = fields[0];
      r.onset = std::stod(fields[1]);
      r.offset = std::stod(fields[2]);
      r.confidence = std::stod(fields[3]);
      r.category = std::stoi(fields[4]);
      if (r.offset <= r.onset) throw std::invalid_argument("offset <= onset");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fedn
