#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedn/config.hpp"
#include "fedn/evaluation.hpp"
#include "fedn/losses.hpp"
#include "fedn/network.hpp"
#include "fedn/pipeline.hpp"
#include "fedn/synthetic.hpp"

namespace fedn {

// Adam with decoupled weight decay.
class AdamW {
public:
  AdamW(double learning_rate, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step(std::vector<std::pair<std::string, ag::Var>>& params);
  void zero_grad(std::vector<std::pair<std::string, ag::Var>>& params);

private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

// One training window: precomputed targets against the anchor table.
struct TrainingWindow {
  int video_index = 0;
  int start_frame = 0;
  std::vector<WindowGt> gts;  // window-normalized
  WindowTargets targets;
  bool has_events = false;
};

// Windows for the listed videos. Ground truths are clipped to the window and
// dropped when less than half of their length falls inside.
std::vector<TrainingWindow> make_training_windows(const SyntheticDataset& dataset,
                                                  const std::vector<int>& video_indices,
                                                  const ExperimentConfig& config,
                                                  const std::vector<AnchorSlot>& anchors);

// (s, f, d) feature block for one training window.
Tensor slice_window_for_training(const SyntheticDataset& dataset, const TrainingWindow& w,
                                 const ExperimentConfig& config);

struct RunManifest {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;            // mean total loss per epoch
  std::vector<LossBreakdown> epoch_breakdown;  // aligned with epoch_losses
  std::vector<EvalReport> fold_reports;
  EvalReport aggregate;
  bool has_aggregate = false;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

struct TrainResult {
  std::unique_ptr<FednNetwork> model;
  RunManifest manifest;
};

// Train on the given videos (all videos when indices empty). Deterministic
// for a fixed config and seed; aborts on non-finite loss with the step index.
TrainResult train(const ExperimentConfig& config, const SyntheticDataset& dataset,
                  const std::vector<int>& video_indices = {});

struct LosoResult {
  std::vector<std::string> fold_subjects;
  std::vector<EvalReport> fold_reports;
  EvalReport aggregate;  // pooled predictions across folds, scored once
  std::map<std::string, std::vector<ScoredDetection>> pooled_predictions;
};

// Leave-one-subject-out: one fold per subject, trained on the rest,
// evaluated on the held-out subject's videos; aggregate metrics score the
// pooled predictions of all folds.
LosoResult loso(const ExperimentConfig& config, const SyntheticDataset& dataset);

enum class Variant {
  full,
  no_seg_att,
  no_sw_att,
  no_both,
  spotting_only,
  coupled_head,
  conf_branch,
  loss_iou,
  loss_giou,
};

const std::vector<Variant>& all_variants();
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
ExperimentConfig apply_variant(ExperimentConfig config, Variant v);

struct AblationRow {
  Variant variant;
  std::vector<EvalReport> per_seed;  // aggregate LOSO report per seed
  // Means over seeds (absent metrics skipped).
  double mean_spotting_f1 = 0.0;
  std::optional<double> mean_recognition_f1;
  std::optional<double> mean_spotting_map;
  std::optional<double> mean_detection_map;
  double mean_tp = 0.0;
};

// Runs loso per variant over num_seeds seeds (seed, seed+1, ...), sharing the
// dataset. Returns one row per variant.
std::vector<AblationRow> ablate(const ExperimentConfig& config,
                                const std::vector<Variant>& variants, int num_seeds);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace fedn
