#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fedn/anchors.hpp"
#include "fedn/autograd.hpp"
#include "fedn/tensor.hpp"

namespace fedn {

enum class LossVariant { diou, giou, iou };
std::string to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

struct NetworkConfig {
  int s = 64;
  int f = 8;
  int d = 512;
  int d1 = 512;
  int d2 = 256;
  int num_categories = 4;
  int attention_heads = 8;
  bool use_segment_attention = true;
  bool use_window_attention = true;
  bool decoupled_head = true;
  bool with_confidence_branch = false;
  bool spotting_only = false;
  LossVariant loss_variant = LossVariant::diou;
  double alpha = 1.0;
  double beta = 2.0;

  void validate() const;
  // Recognition width: spotting-only training collapses the categories to a
  // single "expression present" channel.
  int effective_categories() const { return spotting_only ? 1 : num_categories; }
};

// Raw head outputs for one window, one entry per pyramid level.
struct LevelPrediction {
  ag::Var interval_params;  // (l, 6*2), position-major then slot, (a, b) pairs
  ag::Var class_logits;     // (l, 6*C_eff)
  ag::Var conf_logits;      // (l, 6); null unless with_confidence_branch
  int length = 0;
};

struct RawWindowPrediction {
  std::array<LevelPrediction, kLevels> levels;
};

// Intermediate shapes and attention scores, filled on demand for contract tests.
struct ForwardTrace {
  std::vector<std::size_t> fused_shape;
  std::vector<std::size_t> conv1_shape;
  std::vector<std::size_t> conv2_shape;
  std::array<std::vector<std::size_t>, kLevels> level_shapes;
  Tensor segment_scores;  // (s, f) softmax over f, when segment attention on
  Tensor window_scores;   // (s,) softmax over s, when window attention on
};

// The trainable detector: segment attention & fusion, sliding-window
// attention, two strided conv blocks, a 4-level neck and per-level decoupled
// heads emitting 6 prediction slots per temporal position.
class FednNetwork {
public:
  FednNetwork(const NetworkConfig& config, std::uint64_t seed);

  RawWindowPrediction forward(const Tensor& window, ForwardTrace* trace = nullptr);

  const NetworkConfig& config() const { return config_; }
  const PyramidLayout& layout() const { return layout_; }

  std::vector<std::pair<std::string, ag::Var>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, ag::Var>>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  ag::Var find_parameter(const std::string& name) const;

  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

  void zero_grad();

private:
  struct Linear {
    ag::Var w, b;
  };
  struct Mha {
    Linear q, k, v, o;
    int heads = 1;
  };
  struct ConvBlock {
    ag::Var w, b, ln_gain, ln_bias;  // conv + relu + layer norm over channels
  };
  struct SegmentAttention {
    Mha mha;
    Linear score;   // 2d -> 1
    Linear reduce;  // 2d -> d
  };
  struct Head {
    Mha mha;
    ConvBlock reduce;          // d1 -> d2
    ConvBlock interval_trunk;  // d2 -> d2 (decoupled)
    Linear interval_proj;      // d2 -> 12
    ConvBlock recog_trunk;     // d2 -> d2 (decoupled)
    Linear recog_proj;         // d2 -> 6*C_eff
    Linear conf_proj;          // d2 -> 6 (confidence branch only)
    ConvBlock joint_trunk;     // d2 -> d2 (coupled)
    Linear joint_proj;         // d2 -> 12 + 6*C_eff (+6)
  };

  Linear make_linear(const std::string& name, int in, int out, Rng& rng);
  Mha make_mha(const std::string& name, int dim, int heads, Rng& rng);
  ConvBlock make_conv_block(const std::string& name, int in, int out, Rng& rng);

  ag::Var run_mha(const Mha& m, const ag::Var& x) const;  // x (B,T,D)
  ag::Var run_conv_block(const ConvBlock& c, const ag::Var& x, std::size_t stride) const;

  ag::Var register_param(const std::string& name, Tensor init);

  NetworkConfig config_;
  PyramidLayout layout_;
  std::vector<std::pair<std::string, ag::Var>> params_;

  SegmentAttention seg_att_;
  ag::Var sw_conv_w_, sw_conv_b_;  // kernel-3 conv d -> 1 for window attention
  ConvBlock backbone1_, backbone2_;
  std::array<ConvBlock, kLevels - 1> neck_;
  std::array<Head, kLevels> heads_;
};

}  // namespace fedn
