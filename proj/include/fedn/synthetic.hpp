#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedn/tensor.hpp"

namespace fedn {

// One planted expression: half-open [onset, offset) with peak at apex.
struct ExpressionEvent {
  int onset = 0;
  int offset = 0;
  int apex = 0;
  int category = 0;
};

struct VideoAnnotation {
  std::string video_id;
  std::string subject_id;
  int num_frames = 0;
  std::vector<ExpressionEvent> events;  // sorted by onset, pairwise disjoint
};

struct DatasetConfig {
  int num_subjects = 10;
  int videos_per_subject = 2;
  int min_frames = 600;
  int max_frames = 1200;
  int min_events = 2;
  int max_events = 6;
  int min_duration = 30;
  int max_duration = 150;
  int num_categories = 4;
  // Default weights mirror the category imbalance of the source protocol.
  std::vector<double> category_weights = {116.0, 16.0, 105.0, 63.0};
  int feature_dim = 64;
  double snr = 8.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<VideoAnnotation> annotations;
  std::vector<Tensor> features;  // per video, (N, d); aligned with annotations
};

inline constexpr int kMinEventGap = 10;  // frames between consecutive events

// Deterministic per seed. Each video draws from its own sub-stream keyed by
// (seed, video_id), so generation order never changes the content.
std::vector<VideoAnnotation> generate_annotations(const DatasetConfig& config);

// Frame features: unit Gaussian background noise plus, inside each event, a
// linear 0 -> snr -> 0 amplitude ramp (onset -> apex -> offset) along a fixed
// orthonormal per-category direction. Values are quantized to float32 so the
// in-memory path matches features reread from disk bit for bit.
Tensor render_features(const VideoAnnotation& annotation, const DatasetConfig& config);

SyntheticDataset generate_dataset(const DatasetConfig& config);

// The C orthonormal category directions (seeded from config.seed), rows = categories.
Tensor category_directions(const DatasetConfig& config);

// Annotation file: one 7-field event line per event,
//   video_id \t subject_id \t N \t onset \t offset \t apex \t category
// plus a 3-field "video_id \t subject_id \t N" line for event-free videos so
// the roundtrip preserves them.
void save_annotations(const std::vector<VideoAnnotation>& annotations,
                      const std::string& path);
std::vector<VideoAnnotation> load_annotations(const std::string& path);

// Feature file: 16-byte header (magic "TEDSFEAT", u32 N, u32 d, little
// endian) followed by N*d float32 little-endian values.
void save_features(const Tensor& features, const std::string& path);
Tensor load_features(const std::string& path);

// Subject id -> indices into the annotation vector; keys sorted.
std::map<std::string, std::vector<int>> group_by_subject(
    const std::vector<VideoAnnotation>& annotations);

}  // namespace fedn
