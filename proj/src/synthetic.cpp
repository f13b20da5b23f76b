#include "fedn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedn/rng.hpp"

namespace fedn {

void DatasetConfig::validate() const {
  if (num_subjects <= 0 || videos_per_subject <= 0)
    throw std::invalid_argument("DatasetConfig: need at least one subject and video");
  if (min_frames <= 0 || max_frames < min_frames)
    throw std::invalid_argument("DatasetConfig: bad frame range");
  if (min_events < 0 || max_events < min_events)
    throw std::invalid_argument("DatasetConfig: bad event count range");
  if (min_duration < 2 || max_duration < min_duration)
    throw std::invalid_argument("DatasetConfig: durations must span at least 2 frames");
  if (num_categories <= 0)
    throw std::invalid_argument("DatasetConfig: need at least one category");
  if (static_cast<int>(category_weights.size()) != num_categories)
    throw std::invalid_argument("DatasetConfig: category_weights length != num_categories");
  double total = 0.0;
  for (double w : category_weights) {
    if (w < 0.0) throw std::invalid_argument("DatasetConfig: negative category weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("DatasetConfig: category weights sum to zero");
  if (feature_dim < num_categories)
    throw std::invalid_argument("DatasetConfig: feature_dim must be >= num_categories");
  if (snr < 0.0) throw std::invalid_argument("DatasetConfig: negative snr");
}

namespace {

std::string subject_name(int s) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%02d", s);
  return buf;
}

std::string video_name(int s, int v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "s%02d_v%02d", s, v);
  return buf;
}

// Events for one video by rejection sampling: resample durations and onsets
// together until every pair keeps the minimum gap.
std::vector<ExpressionEvent> sample_events(int num_frames, int n_events,
                                           const DatasetConfig& cfg, Rng& rng) {
  if (n_events == 0) return {};
  const long min_occupancy = static_cast<long>(n_events) * cfg.min_duration +
                             static_cast<long>(n_events - 1) * kMinEventGap;
  if (min_occupancy > num_frames)
    throw std::runtime_error("generate_annotations: infeasible packing (" +
                             std::to_string(n_events) + " events of >= " +
                             std::to_string(cfg.min_duration) + " frames in " +
                             std::to_string(num_frames) + ")");

  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<ExpressionEvent> events(n_events);
    bool ok = true;
    for (auto& ev : events) {
      const int dur = static_cast<int>(rng.uniform_int(cfg.min_duration, cfg.max_duration));
      if (dur > num_frames) { ok = false; break; }
      ev.onset = static_cast<int>(rng.uniform_int(0, num_frames - dur));
      ev.offset = ev.onset + dur;
    }
    if (!ok) continue;
    std::sort(events.begin(), events.end(),
              [](const ExpressionEvent& a, const ExpressionEvent& b) {
                return a.onset < b.onset;
              });
    for (int i = 0; ok && i + 1 < n_events; ++i)
      if (events[i + 1].onset - events[i].offset < kMinEventGap) ok = false;
    if (!ok) continue;

    for (auto& ev : events) {
      ev.apex = static_cast<int>(rng.uniform_int(ev.onset + 1, ev.offset - 1));
      ev.category = static_cast<int>(rng.categorical(cfg.category_weights));
    }
    return events;
  }
  throw std::runtime_error("generate_annotations: infeasible packing (no valid placement in " +
                           std::to_string(kMaxAttempts) + " attempts)");
}

}  // namespace

std::vector<VideoAnnotation> generate_annotations(const DatasetConfig& config) {
  config.validate();
  std::vector<VideoAnnotation> out;
  out.reserve(static_cast<std::size_t>(config.num_subjects) * config.videos_per_subject);
  for (int s = 0; s < config.num_subjects; ++s) {
    for (int v = 0; v < config.videos_per_subject; ++v) {
      VideoAnnotation ann;
      ann.subject_id = subject_name(s);
      ann.video_id = video_name(s, v);
      Rng rng(Rng::derive(config.seed, "ann:" + ann.video_id));
      ann.num_frames = static_cast<int>(rng.uniform_int(config.min_frames, config.max_frames));
      const int n_events =
          static_cast<int>(rng.uniform_int(config.min_events, config.max_events));
      ann.events = sample_events(ann.num_frames, n_events, config, rng);
      out.push_back(std::move(ann));
    }
  }
  return out;
}

Tensor category_directions(const DatasetConfig& config) {
  const int c = config.num_categories;
  const int d = config.feature_dim;
  Rng rng(Rng::derive(config.seed, "category_directions"));
  Tensor dirs({static_cast<std::size_t>(c), static_cast<std::size_t>(d)});
  // Gram-Schmidt on seeded Gaussian rows.
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < d; ++j) dirs.at(i, j) = rng.normal();
    for (int k = 0; k < i; ++k) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += dirs.at(i, j) * dirs.at(k, j);
      for (int j = 0; j < d; ++j) dirs.at(i, j) -= dot * dirs.at(k, j);
    }
    double norm = 0.0;
    for (int j = 0; j < d; ++j) norm += dirs.at(i, j) * dirs.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-9)
      throw std::runtime_error("category_directions: degenerate basis draw");
    for (int j = 0; j < d; ++j) dirs.at(i, j) /= norm;
  }
  return dirs;
}

Tensor render_features(const VideoAnnotation& annotation, const DatasetConfig& config) {
  config.validate();
  const int n = annotation.num_frames;
  const int d = config.feature_dim;
  const Tensor dirs = category_directions(config);
  Rng rng(Rng::derive(config.seed, "feat:" + annotation.video_id));

  Tensor out({static_cast<std::size_t>(n), static_cast<std::size_t>(d)});
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < d; ++j) out.at(t, j) = rng.normal();

  for (const ExpressionEvent& ev : annotation.events) {
    for (int t = ev.onset; t < ev.offset && t < n; ++t) {
      double amp;
      if (t <= ev.apex)
        amp = config.snr * (t - ev.onset) / static_cast<double>(ev.apex - ev.onset);
      else
        amp = config.snr * (ev.offset - t) / static_cast<double>(ev.offset - ev.apex);
      for (int j = 0; j < d; ++j) out.at(t, j) += amp * dirs.at(ev.category, j);
    }
  }

  // Quantize through float32 so in-memory features equal a disk roundtrip.
  for (double& v : out.raw()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

SyntheticDataset generate_dataset(const DatasetConfig& config) {
  SyntheticDataset ds;
  ds.annotations = generate_annotations(config);
  ds.features.reserve(ds.annotations.size());
  for (const auto& ann : ds.annotations) ds.features.push_back(render_features(ann, config));
  return ds;
}

void save_annotations(const std::vector<VideoAnnotation>& annotations,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_annotations: cannot open " + path);
  for (const auto& ann : annotations) {
    if (ann.events.empty()) {
      out << ann.video_id << '\t' << ann.subject_id << '\t' << ann.num_frames << '\n';
      continue;
    }
    for (const auto& ev : ann.events) {
      out << ann.video_id << '\t' << ann.subject_id << '\t' << ann.num_frames << '\t'
          << ev.onset << '\t' << ev.offset << '\t' << ev.apex << '\t' << ev.category
          << '\n';
    }
  }
  if (!out) throw std::runtime_error("save_annotations: write failed for " + path);
}

namespace {

[[noreturn]] void parse_error(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ": line " + std::to_string(line) + ": " + what);
}

int parse_int_field(const std::string& s, const std::string& path, int line,
                    const char* field) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    parse_error(path, line, std::string("bad ") + field + " '" + s + "'");
  }
}

}  // namespace

std::vector<VideoAnnotation> load_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_annotations: cannot open " + path);

  std::vector<VideoAnnotation> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3 && fields.size() != 7)
      parse_error(path, line_no, "expected 3 or 7 tab-separated fields, got " +
                                     std::to_string(fields.size()));

    const std::string& vid = fields[0];
    const std::string& sid = fields[1];
    const int n = parse_int_field(fields[2], path, line_no, "frame count");
    if (n <= 0) parse_error(path, line_no, "frame count must be positive");

    auto it = index.find(vid);
    if (it == index.end()) {
      index.emplace(vid, out.size());
      out.push_back({vid, sid, n, {}});
      it = index.find(vid);
    }
    VideoAnnotation& ann = out[it->second];
    if (ann.subject_id != sid) parse_error(path, line_no, "subject id changed for video " + vid);
    if (ann.num_frames != n) parse_error(path, line_no, "frame count changed for video " + vid);
    if (fields.size() == 3) {
      if (!ann.events.empty())
        parse_error(path, line_no, "event-free marker after events for video " + vid);
      continue;
    }

    ExpressionEvent ev;
    ev.onset = parse_int_field(fields[3], path, line_no, "onset");
    ev.offset = parse_int_field(fields[4], path, line_no, "offset");
    ev.apex = parse_int_field(fields[5], path, line_no, "apex");
    ev.category = parse_int_field(fields[6], path, line_no, "category");
    if (ev.offset <= ev.onset) parse_error(path, line_no, "offset must exceed onset");
    if (!(ev.onset < ev.apex && ev.apex < ev.offset))
      parse_error(path, line_no, "apex must lie strictly inside [onset, offset)");
    if (ev.onset < 0 || ev.offset > n) parse_error(path, line_no, "event outside [0, N)");
    if (ev.category < 0) parse_error(path, line_no, "negative category");
    if (!ann.events.empty() && ev.onset < ann.events.back().offset)
      parse_error(path, line_no, "events overlap or are out of order for video " + vid);
    ann.events.push_back(ev);
  }
  return out;
}

namespace {

constexpr char kFeatureMagic[8] = {'T', 'E', 'D', 'S', 'F', 'E', 'A', 'T'};

void put_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_features(const Tensor& features, const std::string& path) {
  if (features.rank() != 2) throw std::invalid_argument("save_features: expect (N, d)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_features: cannot open " + path);
  out.write(kFeatureMagic, 8);
  put_u32_le(out, static_cast<std::uint32_t>(features.dim(0)));
  put_u32_le(out, static_cast<std::uint32_t>(features.dim(1)));
  for (std::size_t i = 0; i < features.numel(); ++i) {
    const float f = static_cast<float>(features[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
  }
  if (!out) throw std::runtime_error("save_features: write failed for " + path);
}

Tensor load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_features: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kFeatureMagic, 8) != 0)
    throw std::runtime_error("load_features: bad magic in " + path);
  const std::uint32_t n = get_u32_le(in);
  const std::uint32_t d = get_u32_le(in);
  if (!in || n == 0 || d == 0)
    throw std::runtime_error("load_features: bad header in " + path);
  Tensor out({n, d});
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const std::uint32_t bits = get_u32_le(in);
    if (!in) throw std::runtime_error("load_features: truncated data in " + path);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

std::map<std::string, std::vector<int>> group_by_subject(
    const std::vector<VideoAnnotation>& annotations) {
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(annotations.size()); ++i)
    groups[annotations[i].subject_id].push_back(i);
  return groups;
}

}  // namespace fedn
