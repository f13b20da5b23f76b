#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "fedn/network.hpp"
#include "fedn/pipeline.hpp"
#include "fedn/synthetic.hpp"

namespace fedn {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch_windows = 8;
  std::uint64_t seed = 1;
  double tau_pos = 0.5;
  std::array<double, 5> anchor_scales = default_anchor_scales();

  void validate() const;
};

// Everything one experiment needs, mirrored by the [network] / [data] /
// [train] / [pipeline] sections of the config file.
struct ExperimentConfig {
  NetworkConfig network;
  DatasetConfig data;
  TrainConfig train;
  PipelineConfig pipeline;

  void validate() const;
  // Cross-field check used before training: the network consumes the
  // generator's feature vectors directly.
  void validate_for_training() const;
};

// key=value file with [section] headers; '#' and ';' start comments.
ExperimentConfig load_config(const std::string& path);

// One "section.key=value" assignment; unknown keys are rejected.
void apply_override(ExperimentConfig& config, const std::string& assignment);

std::string config_to_ini(const ExperimentConfig& config);

nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json network_config_to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

}  // namespace fedn
