#include "fedn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedn/checkpoint.hpp"
#include "fedn/config.hpp"
#include "fedn/evaluation.hpp"
#include "fedn/plot.hpp"
#include "fedn/trainer.hpp"

namespace fedn {

namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "experiment config file (ini)");
    if (config_required) opt->required();
    cmd->add_option("--set", overrides, "override a config field, section.key=value");
    cmd->add_option("--seed", seed, "override data and train seeds")
        ->each([this](const std::string&) { seed_set = true; });
  }

  ExperimentConfig resolve() const {
    ExperimentConfig config;
    if (!config_path.empty()) config = load_config(config_path);
    for (const std::string& o : overrides) apply_override(config, o);
    if (seed_set) {
      config.data.seed = seed;
      config.train.seed = seed;
    }
    return config;
  }
};

std::string features_dir(const std::string& data_dir) {
  return (fs::path(data_dir) / "features").string();
}

std::string annotations_path(const std::string& data_dir) {
  return (fs::path(data_dir) / "annotations.tsv").string();
}

void write_dataset(const SyntheticDataset& dataset, const std::string& out_dir) {
  fs::create_directories(features_dir(out_dir));
  save_annotations(dataset.annotations, annotations_path(out_dir));
  for (std::size_t i = 0; i < dataset.annotations.size(); ++i) {
    const fs::path p =
        fs::path(features_dir(out_dir)) / (dataset.annotations[i].video_id + ".feat");
    save_features(dataset.features[i], p.string());
  }
}

SyntheticDataset read_dataset(const std::string& data_dir) {
  SyntheticDataset ds;
  ds.annotations = load_annotations(annotations_path(data_dir));
  for (const VideoAnnotation& ann : ds.annotations) {
    const fs::path p = fs::path(features_dir(data_dir)) / (ann.video_id + ".feat");
    ds.features.push_back(load_features(p.string()));
    if (static_cast<int>(ds.features.back().dim(0)) != ann.num_frames)
      throw std::runtime_error("dataset: frame count mismatch for " + ann.video_id);
  }
  return ds;
}

int cmd_gen_data(const ConfigArgs& cfg_args, const std::string& out_dir) {
  const ExperimentConfig config = cfg_args.resolve();
  const SyntheticDataset dataset = generate_dataset(config.data);
  write_dataset(dataset, out_dir);
  std::size_t events = 0;
  for (const auto& ann : dataset.annotations) events += ann.events.size();
  std::cout << "wrote " << dataset.annotations.size() << " videos (" << events
            << " events) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& cfg_args, const std::string& data_dir,
              const std::string& out_dir) {
  ExperimentConfig config = cfg_args.resolve();
  SyntheticDataset dataset;
  if (data_dir.empty()) {
    dataset = generate_dataset(config.data);
  } else {
    dataset = read_dataset(data_dir);
    if (!dataset.features.empty())
      config.data.feature_dim = static_cast<int>(dataset.features.front().dim(1));
  }
  TrainResult result = train(config, dataset);
  fs::create_directories(out_dir);
  save_checkpoint(*result.model, (fs::path(out_dir) / "checkpoint.fednckpt").string());
  result.manifest.save((fs::path(out_dir) / "manifest.json").string());
  std::cout << "trained " << config.train.epochs << " epochs, final loss "
            << (result.manifest.epoch_losses.empty() ? 0.0
                                                     : result.manifest.epoch_losses.back())
            << ", checkpoint in " << out_dir << "\n";
  return 0;
}

int cmd_detect(const ConfigArgs& cfg_args, const std::string& checkpoint_path,
               const std::string& features_path, const std::string& out_path) {
  const ExperimentConfig config = cfg_args.resolve();
  auto model = load_checkpoint(checkpoint_path);

  std::vector<std::pair<std::string, std::string>> inputs;  // (video_id, path)
  if (fs::is_directory(features_path)) {
    for (const auto& entry : fs::directory_iterator(features_path))
      if (entry.path().extension() == ".feat")
        inputs.emplace_back(entry.path().stem().string(), entry.path().string());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.emplace_back(fs::path(features_path).stem().string(), features_path);
  }
  if (inputs.empty())
    throw std::runtime_error("detect: no .feat files under " + features_path);

  const PyramidLayout layout(model->config().s);
  const std::vector<AnchorSlot> anchors = build_anchors(layout, config.train.anchor_scales);
  std::vector<PredictionRecord> records;
  for (const auto& [video_id, path] : inputs) {
    const Tensor features = load_features(path);
    if (static_cast<int>(features.dim(1)) != model->config().d)
      throw std::runtime_error("detect: feature dim of " + video_id +
                               " does not match the checkpoint");
    const auto dets = detect_video(features, *model, anchors, config.pipeline);
    const auto recs = to_prediction_records(video_id, dets);
    records.insert(records.end(), recs.begin(), recs.end());
  }
  save_predictions(records, out_path);
  std::cout << "wrote " << records.size() << " detections to " << out_path << "\n";
  return 0;
}

int cmd_score(const std::string& predictions_path, const std::string& annotations_path,
              const std::string& out_path, const std::string& format_name, int classes) {
  const auto predictions = load_predictions(predictions_path);
  const auto annotations = load_annotations(annotations_path);
  const EvalData data = EvalData::from_files(predictions, annotations);

  int num_categories = classes;
  if (num_categories <= 0) {
    int max_cat = -1;
    for (const auto& ann : annotations)
      for (const auto& ev : ann.events) max_cat = std::max(max_cat, ev.category);
    for (const auto& r : predictions) max_cat = std::max(max_cat, r.category);
    num_categories = max_cat + 1;
    if (num_categories <= 0) num_categories = 1;
  }

  const EvalReport report = evaluate(data, num_categories);
  std::cout << format_report(report, ReportFormat::text_table);
  if (!out_path.empty()) {
    const ReportFormat fmt =
        format_name == "delimited" ? ReportFormat::delimited : ReportFormat::text_table;
    emit_report(report, out_path, fmt);
  }
  return 0;
}

int cmd_ablate(const ConfigArgs& cfg_args, const std::string& out_dir,
               const std::string& variants_csv, int num_seeds) {
  const ExperimentConfig config = cfg_args.resolve();
  std::vector<Variant> variants;
  if (variants_csv.empty()) {
    variants = all_variants();
  } else {
    std::stringstream ss(variants_csv);
    std::string item;
    while (std::getline(ss, item, ',')) variants.push_back(variant_from_string(item));
  }

  const std::vector<AblationRow> rows = ablate(config, variants, num_seeds);
  const std::string table = format_ablation_table(rows);
  std::cout << table;
  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "ablation.tsv", std::ios::binary);
    out << table;
  }
  for (const AblationRow& row : rows)
    for (std::size_t s = 0; s < row.per_seed.size(); ++s)
      emit_report(row.per_seed[s],
                  (fs::path(out_dir) / (to_string(row.variant) + "_seed" +
                                        std::to_string(s) + ".tsv"))
                      .string(),
                  ReportFormat::delimited);
  return 0;
}

int cmd_plot(const std::string& manifest_path, const std::string& report_path,
             const std::string& out_dir) {
  if (manifest_path.empty() && report_path.empty())
    throw std::runtime_error("plot: need --manifest and/or --report");
  fs::create_directories(out_dir);

  if (!manifest_path.empty()) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("plot: cannot open " + manifest_path);
    const nlohmann::json j = nlohmann::json::parse(in);
    PlotSeries s;
    s.label = "train loss";
    const auto losses = j.at("epoch_losses").get<std::vector<double>>();
    for (std::size_t i = 0; i < losses.size(); ++i) {
      s.x.push_back(static_cast<double>(i + 1));
      s.y.push_back(losses[i]);
    }
    write_line_chart((fs::path(out_dir) / "loss_curve.svg").string(), "Training loss",
                     "epoch", "mean total loss", {s});
    std::cout << "wrote " << (fs::path(out_dir) / "loss_curve.svg").string() << "\n";
  }

  if (!report_path.empty()) {
    const EvalReport report = parse_delimited_report(report_path);
    const auto curve_series = [](const ApCurve& curve, const std::string& label) {
      PlotSeries s;
      s.label = label;
      for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
        if (curve.ap[i]) {
          s.x.push_back(curve.thresholds[i]);
          s.y.push_back(*curve.ap[i]);
        }
      return s;
    };
    if (!report.spotting_ap.thresholds.empty()) {
      write_line_chart((fs::path(out_dir) / "ap_vs_iou_spotting.svg").string(),
                       "Spotting AP vs IoU", "IoU threshold", "AP",
                       {curve_series(report.spotting_ap, "spotting")});
      std::cout << "wrote " << (fs::path(out_dir) / "ap_vs_iou_spotting.svg").string()
                << "\n";
    }
    if (!report.detection_ap.thresholds.empty()) {
      write_line_chart((fs::path(out_dir) / "ap_vs_iou_detection.svg").string(),
                       "Detection AP vs IoU", "IoU threshold", "AP",
                       {curve_series(report.detection_ap, "detection")});
      std::cout << "wrote " << (fs::path(out_dir) / "ap_vs_iou_detection.svg").string()
                << "\n";
    }
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"FEDN temporal expression detection, desk scale"};
  app.require_subcommand(1);

  // gen-data
  ConfigArgs gen_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cfg.attach(gen, false);
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // train
  ConfigArgs train_cfg;
  std::string train_data, train_out;
  auto* tr = app.add_subcommand("train", "train a model");
  train_cfg.attach(tr, false);
  tr->add_option("--data", train_data, "dataset directory (generated when omitted)");
  tr->add_option("--out", train_out, "output directory for checkpoint and manifest")
      ->required();

  // detect
  ConfigArgs det_cfg;
  std::string det_ckpt, det_features, det_out;
  auto* det = app.add_subcommand("detect", "run inference on feature files");
  det_cfg.attach(det, false);
  det->add_option("--checkpoint", det_ckpt, "model checkpoint")->required();
  det->add_option("--features", det_features, ".feat file or directory")->required();
  det->add_option("--out", det_out, "prediction file to write")->required();

  // score
  std::string score_preds, score_anns, score_out, score_format = "text_table";
  int score_classes = 0;
  auto* sc = app.add_subcommand("score", "evaluate predictions against annotations");
  sc->add_option("--predictions", score_preds, "prediction file")->required();
  sc->add_option("--annotations", score_anns, "annotation file")->required();
  sc->add_option("--out", score_out, "report file to write");
  sc->add_option("--format", score_format, "text_table or delimited")
      ->check(CLI::IsMember({"text_table", "delimited"}));
  sc->add_option("--classes", score_classes, "category count (inferred when omitted)");

  // ablate
  ConfigArgs abl_cfg;
  std::string abl_out, abl_variants;
  int abl_seeds = 1;
  auto* abl = app.add_subcommand("ablate", "run the ablation/variation matrix");
  abl_cfg.attach(abl, false);
  abl->add_option("--out", abl_out, "output directory")->required();
  abl->add_option("--variants", abl_variants, "comma list (default: all)");
  abl->add_option("--seeds", abl_seeds, "seeds per variant");

  // plot
  std::string plot_manifest, plot_report, plot_out;
  auto* pl = app.add_subcommand("plot", "render loss and AP-vs-IoU curves");
  pl->add_option("--manifest", plot_manifest, "manifest.json from train");
  pl->add_option("--report", plot_report, "delimited report from score");
  pl->add_option("--out", plot_out, "output directory for svg files")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_cfg, gen_out);
    if (tr->parsed()) return cmd_train(train_cfg, train_data, train_out);
    if (det->parsed()) return cmd_detect(det_cfg, det_ckpt, det_features, det_out);
    if (sc->parsed())
      return cmd_score(score_preds, score_anns, score_out, score_format, score_classes);
    if (abl->parsed()) return cmd_ablate(abl_cfg, abl_out, abl_variants, abl_seeds);
    if (pl->parsed()) return cmd_plot(plot_manifest, plot_report, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

}  // namespace fedn
