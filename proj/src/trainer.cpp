#include "fedn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fedn/rng.hpp"

namespace fedn {

AdamW::AdamW(double learning_rate, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(std::vector<std::pair<std::string, ag::Var>>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Tensor::zeros(params[i].second->value.shape());
      v_[i] = Tensor::zeros(params[i].second->value.shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var& p = params[i].second;
    Tensor& g = p->ensure_grad();
    double* theta = p->value.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double* grad = g.data();
    for (std::size_t j = 0; j < p->value.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * theta[j]);
    }
  }
}

void AdamW::zero_grad(std::vector<std::pair<std::string, ag::Var>>& params) {
  for (auto& [name, p] : params) p->grad = Tensor();
}

std::vector<TrainingWindow> make_training_windows(const SyntheticDataset& dataset,
                                                  const std::vector<int>& video_indices,
                                                  const ExperimentConfig& config,
                                                  const std::vector<AnchorSlot>& anchors) {
  const PyramidLayout layout(config.network.s);
  const int c_eff = config.network.effective_categories();
  std::vector<TrainingWindow> out;

  for (int vi : video_indices) {
    const VideoAnnotation& ann = dataset.annotations[vi];
    const WindowPlan plan =
        plan_windows(ann.num_frames, config.network.s, config.network.f,
                     config.pipeline.overlap);
    const double fpw = plan.frames_per_window;
    for (int start : plan.window_start_frames) {
      TrainingWindow w;
      w.video_index = vi;
      w.start_frame = start;
      for (const ExpressionEvent& ev : ann.events) {
        const double in_start = std::max<double>(ev.onset, start);
        const double in_end = std::min<double>(ev.offset, start + fpw);
        const double inside = in_end - in_start;
        // Events mostly outside the window belong to a better-covering one.
        if (inside < 0.5 * (ev.offset - ev.onset)) continue;
        const int cat = config.network.spotting_only ? 0 : ev.category;
        w.gts.push_back({Interval((in_start - start) / fpw, (in_end - start) / fpw), cat});
      }
      w.has_events = !w.gts.empty();
      const AssignmentResult assignment =
          assign_targets(anchors, layout, w.gts, c_eff, config.train.tau_pos);
      w.targets = build_window_targets(assignment, anchors, layout, w.gts, c_eff);
      out.push_back(std::move(w));
    }
  }
  return out;
}

namespace {

// Balanced event/background epoch composition: every event window once, plus
// an equal number of background windows drawn from the run-fixed pool.
std::vector<int> epoch_order(const std::vector<TrainingWindow>& windows,
                             const std::vector<int>& background_draw, Rng& rng) {
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(windows.size()); ++i)
    if (windows[i].has_events) order.push_back(i);
  order.insert(order.end(), background_draw.begin(), background_draw.end());
  if (order.empty())  // background-only data: train on everything
    for (int i = 0; i < static_cast<int>(windows.size()); ++i) order.push_back(i);
  rng.shuffle(order);
  return order;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const SyntheticDataset& dataset,
                  const std::vector<int>& video_indices) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate_for_training();

  std::vector<int> videos = video_indices;
  if (videos.empty())
    for (int i = 0; i < static_cast<int>(dataset.annotations.size()); ++i)
      videos.push_back(i);

  const PyramidLayout layout(config.network.s);
  const std::vector<AnchorSlot> anchors = build_anchors(layout, config.train.anchor_scales);
  const std::vector<TrainingWindow> windows =
      make_training_windows(dataset, videos, config, anchors);
  if (windows.empty()) throw std::runtime_error("train: no training windows");

  // Background pool is drawn once per run so every epoch sees the same
  // multiset of windows (only the order changes).
  std::vector<int> event_ids, background_ids;
  for (int i = 0; i < static_cast<int>(windows.size()); ++i)
    (windows[i].has_events ? event_ids : background_ids).push_back(i);
  std::vector<int> background_draw;
  {
    Rng rng(Rng::derive(config.train.seed, "background_pool"));
    for (std::size_t i = 0; i < event_ids.size() && !background_ids.empty(); ++i)
      background_draw.push_back(
          background_ids[rng.uniform_int(0, static_cast<std::int64_t>(background_ids.size()) - 1)]);
  }

  auto model = std::make_unique<FednNetwork>(config.network, config.train.seed);
  AdamW optimizer(config.train.learning_rate, config.train.weight_decay);

  RunManifest manifest;
  manifest.config = config;
  manifest.seed = config.train.seed;

  const int batch = config.train.batch_windows;
  long step_index = 0;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    Rng rng(Rng::derive(config.train.seed, "epoch:" + std::to_string(epoch)));
    const std::vector<int> order = epoch_order(windows, background_draw, rng);

    double loss_sum = 0.0;
    LossBreakdown epoch_bd;
    int steps = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += batch) {
      const std::size_t n = std::min<std::size_t>(batch, order.size() - pos);
      ag::Var batch_loss;
      LossBreakdown bd;
      for (std::size_t i = 0; i < n; ++i) {
        const TrainingWindow& w = windows[order[pos + i]];
        const Tensor block = slice_window_for_training(dataset, w, config);
        const RawWindowPrediction raw = model->forward(block);
        TotalLoss tl = total_loss(raw, w.targets, config.network);
        ag::Var scaled = ag::scale(tl.value, 1.0 / n);
        batch_loss = batch_loss ? ag::add(batch_loss, scaled) : scaled;
        bd.interval_loss += tl.breakdown.interval_loss / n;
        bd.recognition_loss += tl.breakdown.recognition_loss / n;
        bd.total += tl.breakdown.total / n;
        bd.num_positive += tl.breakdown.num_positive;
        bd.num_slots = tl.breakdown.num_slots;
      }
      ++step_index;
      if (!std::isfinite(bd.total))
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(step_index));
      optimizer.zero_grad(model->parameters());
      ag::backward(batch_loss);
      optimizer.step(model->parameters());

      loss_sum += bd.total;
      epoch_bd.interval_loss += bd.interval_loss;
      epoch_bd.recognition_loss += bd.recognition_loss;
      epoch_bd.num_positive += bd.num_positive;
      epoch_bd.num_slots = bd.num_slots;
      ++steps;
    }
    epoch_bd.total = loss_sum / std::max(1, steps);
    epoch_bd.interval_loss /= std::max(1, steps);
    epoch_bd.recognition_loss /= std::max(1, steps);
    manifest.epoch_losses.push_back(epoch_bd.total);
    manifest.epoch_breakdown.push_back(epoch_bd);
  }

  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(manifest)};
}

Tensor slice_window_for_training(const SyntheticDataset& dataset, const TrainingWindow& w,
                                 const ExperimentConfig& config) {
  const VideoAnnotation& ann = dataset.annotations[w.video_index];
  const WindowPlan plan = plan_windows(ann.num_frames, config.network.s, config.network.f,
                                       config.pipeline.overlap);
  return slice_window(dataset.features[w.video_index], w.start_frame, plan);
}

LosoResult loso(const ExperimentConfig& config, const SyntheticDataset& dataset) {
  config.validate_for_training();
  const auto folds = group_by_subject(dataset.annotations);
  const PyramidLayout layout(config.network.s);
  const std::vector<AnchorSlot> anchors = build_anchors(layout, config.train.anchor_scales);

  LosoResult result;
  EvalData pooled;
  for (const auto& [subject, held_out] : folds) {
    std::vector<int> train_videos;
    for (int i = 0; i < static_cast<int>(dataset.annotations.size()); ++i)
      if (dataset.annotations[i].subject_id != subject) train_videos.push_back(i);
    if (train_videos.empty())
      throw std::runtime_error("loso: a single subject cannot be cross-validated");

    ExperimentConfig fold_config = config;
    fold_config.train.seed = Rng::derive(config.train.seed, "fold:" + subject);
    TrainResult tr = train(fold_config, dataset, train_videos);

    EvalData fold_data;
    for (int vi : held_out) {
      std::vector<ScoredDetection> dets =
          detect_video(dataset.features[vi], *tr.model, anchors, config.pipeline);
      fold_data.add_video(dataset.annotations[vi].video_id, dets,
                          dataset.annotations[vi]);
      pooled.add_video(dataset.annotations[vi].video_id, dets, dataset.annotations[vi]);
      result.pooled_predictions[dataset.annotations[vi].video_id] = std::move(dets);
    }
    result.fold_subjects.push_back(subject);
    result.fold_reports.push_back(evaluate(fold_data, config.network.num_categories,
                                           config.network.spotting_only));
  }
  result.aggregate =
      evaluate(pooled, config.network.num_categories, config.network.spotting_only);
  return result;
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {
      Variant::full,        Variant::no_seg_att,   Variant::no_sw_att,
      Variant::no_both,     Variant::spotting_only, Variant::coupled_head,
      Variant::conf_branch, Variant::loss_iou,      Variant::loss_giou,
  };
  return v;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_seg_att: return "no_seg_att";
    case Variant::no_sw_att: return "no_sw_att";
    case Variant::no_both: return "no_both";
    case Variant::spotting_only: return "spotting_only";
    case Variant::coupled_head: return "coupled_head";
    case Variant::conf_branch: return "conf_branch";
    case Variant::loss_iou: return "loss_iou";
    case Variant::loss_giou: return "loss_giou";
  }
  throw std::logic_error("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

ExperimentConfig apply_variant(ExperimentConfig config, Variant v) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_seg_att: config.network.use_segment_attention = false; break;
    case Variant::no_sw_att: config.network.use_window_attention = false; break;
    case Variant::no_both:
      config.network.use_segment_attention = false;
      config.network.use_window_attention = false;
      break;
    case Variant::spotting_only: config.network.spotting_only = true; break;
    case Variant::coupled_head: config.network.decoupled_head = false; break;
    case Variant::conf_branch: config.network.with_confidence_branch = true; break;
    case Variant::loss_iou: config.network.loss_variant = LossVariant::iou; break;
    case Variant::loss_giou: config.network.loss_variant = LossVariant::giou; break;
  }
  return config;
}

std::vector<AblationRow> ablate(const ExperimentConfig& config,
                                const std::vector<Variant>& variants, int num_seeds) {
  if (num_seeds <= 0) throw std::invalid_argument("ablate: num_seeds must be positive");
  const SyntheticDataset dataset = generate_dataset(config.data);

  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    AblationRow row;
    row.variant = v;
    const ExperimentConfig variant_config = apply_variant(config, v);
    double f1 = 0.0, tp = 0.0;
    double rec = 0.0, smap = 0.0, dmap = 0.0;
    int rec_n = 0, smap_n = 0, dmap_n = 0;
    for (int s = 0; s < num_seeds; ++s) {
      ExperimentConfig run = variant_config;
      run.train.seed = config.train.seed + static_cast<std::uint64_t>(s);
      const LosoResult res = loso(run, dataset);
      const EvalReport& rep = res.aggregate;
      row.per_seed.push_back(rep);
      f1 += rep.spotting_f1;
      tp += static_cast<double>(rep.tp);
      if (rep.recognition_f1) { rec += *rep.recognition_f1; ++rec_n; }
      if (rep.spotting_map) { smap += *rep.spotting_map; ++smap_n; }
      if (rep.detection_map) { dmap += *rep.detection_map; ++dmap_n; }
    }
    row.mean_spotting_f1 = f1 / num_seeds;
    row.mean_tp = tp / num_seeds;
    if (rec_n) row.mean_recognition_f1 = rec / rec_n;
    if (smap_n) row.mean_spotting_map = smap / smap_n;
    if (dmap_n) row.mean_detection_map = dmap / dmap_n;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant\tTP\tF1-S\tF1-R\tmAP-S\tmAP-D\n";
  char buf[64];
  for (const AblationRow& row : rows) {
    out << to_string(row.variant) << "\t";
    std::snprintf(buf, sizeof(buf), "%.1f", row.mean_tp);
    out << buf << "\t";
    std::snprintf(buf, sizeof(buf), "%.1f", row.mean_spotting_f1 * 100.0);
    out << buf << "\t";
    if (row.mean_recognition_f1) {
      std::snprintf(buf, sizeof(buf), "%.1f", *row.mean_recognition_f1 * 100.0);
      out << buf;
    } else {
      out << "-";
    }
    out << "\t";
    if (row.mean_spotting_map) {
      std::snprintf(buf, sizeof(buf), "%.6g", *row.mean_spotting_map * 1000.0);
      out << buf;
    } else {
      out << "-";
    }
    out << "\t";
    if (row.mean_detection_map) {
      std::snprintf(buf, sizeof(buf), "%.6g", *row.mean_detection_map * 1000.0);
      out << buf;
    } else {
      out << "-";
    }
    out << "\n";
  }
  return out.str();
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["config"] = config_to_json(config);
  j["seed"] = seed;
  j["epoch_losses"] = epoch_losses;
  nlohmann::json bd = nlohmann::json::array();
  for (const LossBreakdown& b : epoch_breakdown)
    bd.push_back({{"interval", b.interval_loss},
                  {"recognition", b.recognition_loss},
                  {"total", b.total}});
  j["epoch_breakdown"] = std::move(bd);
  j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("RunManifest::save: cannot open " + path);
  out << to_json().dump(2) << "\n";
}

}  // namespace fedn
