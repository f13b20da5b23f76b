#include "fedn/network.hpp"

#include <cmath>
#include <stdexcept>

#include "fedn/rng.hpp"

namespace fedn {

using ag::Var;

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::diou: return "diou";
    case LossVariant::giou: return "giou";
    case LossVariant::iou: return "iou";
  }
  throw std::logic_error("unknown loss variant");
}

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "diou") return LossVariant::diou;
  if (s == "giou") return LossVariant::giou;
  if (s == "iou") return LossVariant::iou;
  throw std::invalid_argument("unknown loss variant '" + s + "'");
}

void NetworkConfig::validate() const {
  if (s <= 0 || s % 32 != 0)
    throw std::invalid_argument("NetworkConfig: s must be a positive multiple of 32");
  if (f <= 0 || d <= 0 || d1 <= 0 || d2 <= 0)
    throw std::invalid_argument("NetworkConfig: dimensions must be positive");
  if (num_categories <= 0)
    throw std::invalid_argument("NetworkConfig: num_categories must be positive");
  if (attention_heads <= 0 || d % attention_heads != 0)
    throw std::invalid_argument("NetworkConfig: attention_heads must divide d");
  if (d1 % attention_heads != 0)
    throw std::invalid_argument("NetworkConfig: attention_heads must divide d1");
  if (alpha < 0.0 || beta < 0.0)
    throw std::invalid_argument("NetworkConfig: loss weights must be nonnegative");
}

namespace {

Tensor xavier(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
              Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(std::move(shape), -limit, limit, rng);
}

}  // namespace

Var FednNetwork::register_param(const std::string& name, Tensor init) {
  Var p = ag::parameter(std::move(init));
  params_.emplace_back(name, p);
  return p;
}

FednNetwork::Linear FednNetwork::make_linear(const std::string& name, int in, int out,
                                             Rng& rng) {
  Linear l;
  l.w = register_param(name + ".w",
                       xavier({static_cast<std::size_t>(in), static_cast<std::size_t>(out)},
                              in, out, rng));
  l.b = register_param(name + ".b", Tensor({static_cast<std::size_t>(out)}));
  return l;
}

FednNetwork::Mha FednNetwork::make_mha(const std::string& name, int dim, int heads,
                                       Rng& rng) {
  Mha m;
  m.heads = heads;
  m.q = make_linear(name + ".q", dim, dim, rng);
  m.k = make_linear(name + ".k", dim, dim, rng);
  m.v = make_linear(name + ".v", dim, dim, rng);
  m.o = make_linear(name + ".o", dim, dim, rng);
  return m;
}

FednNetwork::ConvBlock FednNetwork::make_conv_block(const std::string& name, int in,
                                                    int out, Rng& rng) {
  ConvBlock c;
  c.w = register_param(
      name + ".w", xavier({static_cast<std::size_t>(out), static_cast<std::size_t>(in), 3},
                          static_cast<std::size_t>(in) * 3,
                          static_cast<std::size_t>(out) * 3, rng));
  c.b = register_param(name + ".b", Tensor({static_cast<std::size_t>(out)}));
  c.ln_gain = register_param(name + ".ln_gain", Tensor({static_cast<std::size_t>(out)}, 1.0));
  c.ln_bias = register_param(name + ".ln_bias", Tensor({static_cast<std::size_t>(out)}));
  return c;
}

FednNetwork::FednNetwork(const NetworkConfig& config, std::uint64_t seed)
    : config_(config), layout_(config.s) {
  config_.validate();
  Rng rng(Rng::derive(seed, "fedn_network"));
  const int d = config_.d, d1 = config_.d1, d2 = config_.d2;
  const int c_eff = config_.effective_categories();

  if (config_.use_segment_attention) {
    seg_att_.mha = make_mha("backbone.seg_att.mha", d, config_.attention_heads, rng);
    seg_att_.score = make_linear("backbone.seg_att.score", 2 * d, 1, rng);
    seg_att_.reduce = make_linear("backbone.seg_att.reduce", 2 * d, d, rng);
  }
  if (config_.use_window_attention) {
    sw_conv_w_ = register_param(
        "backbone.sw_att.conv.w",
        xavier({1, static_cast<std::size_t>(d), 3}, static_cast<std::size_t>(d) * 3, 3, rng));
    sw_conv_b_ = register_param("backbone.sw_att.conv.b", Tensor({1}));
  }
  backbone1_ = make_conv_block("backbone.conv1", d, d1, rng);
  backbone2_ = make_conv_block("backbone.conv2", d1, d1, rng);
  for (int l = 0; l + 1 < kLevels; ++l)
    neck_[l] = make_conv_block("neck." + std::to_string(l + 1), d1, d1, rng);

  for (int l = 0; l < kLevels; ++l) {
    const std::string hn = "head." + std::to_string(l);
    Head& h = heads_[l];
    h.mha = make_mha(hn + ".mha", d1, config_.attention_heads, rng);
    h.reduce = make_conv_block(hn + ".reduce", d1, d2, rng);
    if (config_.decoupled_head) {
      h.interval_trunk = make_conv_block(hn + ".interval.trunk", d2, d2, rng);
      h.interval_proj = make_linear(hn + ".interval.proj", d2, kSlotsPerPosition * 2, rng);
      h.recog_trunk = make_conv_block(hn + ".recog.trunk", d2, d2, rng);
      h.recog_proj = make_linear(hn + ".recog.proj", d2, kSlotsPerPosition * c_eff, rng);
      if (config_.with_confidence_branch)
        h.conf_proj = make_linear(hn + ".conf.proj", d2, kSlotsPerPosition, rng);
    } else {
      h.joint_trunk = make_conv_block(hn + ".joint.trunk", d2, d2, rng);
      const int joint_out = kSlotsPerPosition * (2 + c_eff) +
                            (config_.with_confidence_branch ? kSlotsPerPosition : 0);
      h.joint_proj = make_linear(hn + ".joint.proj", d2, joint_out, rng);
    }
  }
}

Var FednNetwork::run_mha(const Mha& m, const Var& x) const {
  const std::size_t dh = x->value.shape().back() / m.heads;
  Var q = ag::split_heads(ag::linear(x, m.q.w, m.q.b), m.heads);
  Var k = ag::split_heads(ag::linear(x, m.k.w, m.k.b), m.heads);
  Var v = ag::split_heads(ag::linear(x, m.v.w, m.v.b), m.heads);
  Var scores = ag::scale(ag::bmm(q, ag::transpose_last2(k)), 1.0 / std::sqrt(double(dh)));
  Var ctx = ag::merge_heads(ag::bmm(ag::softmax_last(scores), v), m.heads);
  return ag::linear(ctx, m.o.w, m.o.b);
}

Var FednNetwork::run_conv_block(const ConvBlock& c, const Var& x, std::size_t stride) const {
  Var y = ag::conv1d(x, c.w, c.b, stride, 1);
  y = ag::relu(y);
  return ag::layer_norm_last(y, c.ln_gain, c.ln_bias);
}

RawWindowPrediction FednNetwork::forward(const Tensor& window, ForwardTrace* trace) {
  const std::size_t s = config_.s, f = config_.f, d = config_.d;
  if (window.rank() != 3 || window.dim(0) != s || window.dim(1) != f || window.dim(2) != d)
    throw std::invalid_argument("forward: window must be (s, f, d)");
  Var x = ag::constant(window);

  // Segment attention & fusion: (s, f, d) -> (s, d).
  Var fused;
  if (config_.use_segment_attention) {
    Var global = ag::mean_axis1(run_mha(seg_att_.mha, x));        // (s, d)
    Var cat = ag::concat_broadcast(x, global);                    // (s, f, 2d)
    Var score_logits = ag::reshape(
        ag::linear(cat, seg_att_.score.w, seg_att_.score.b), {s, f});  // (s, f)
    Var scores = ag::softmax_last(score_logits);
    Var reduced = ag::linear(cat, seg_att_.reduce.w, seg_att_.reduce.b);  // (s, f, d)
    fused = ag::weighted_sum_axis1(reduced, scores);              // (s, d)
    if (trace) trace->segment_scores = scores->value;
  } else {
    fused = ag::mean_axis1(x);  // plain mean over the f frames
  }

  // Sliding-window attention: softmax over the s positions, rescaled by s so
  // uniform scores leave the features unchanged.
  if (config_.use_window_attention) {
    Var logits = ag::reshape(ag::conv1d(fused, sw_conv_w_, sw_conv_b_, 1, 1), {s});
    Var scores = ag::softmax_last(logits);
    if (trace) trace->window_scores = scores->value;
    fused = ag::row_scale(fused, ag::scale(scores, static_cast<double>(s)));
  }
  if (trace) trace->fused_shape = fused->value.shape();

  Var c1 = run_conv_block(backbone1_, fused, 2);  // (s/2, d1)
  Var c2 = run_conv_block(backbone2_, c1, 2);     // (s/4, d1)
  if (trace) {
    trace->conv1_shape = c1->value.shape();
    trace->conv2_shape = c2->value.shape();
  }

  std::array<Var, kLevels> levels;
  levels[0] = c2;
  for (int l = 1; l < kLevels; ++l) levels[l] = run_conv_block(neck_[l - 1], levels[l - 1], 2);

  RawWindowPrediction out;
  for (int l = 0; l < kLevels; ++l) {
    const std::size_t len = levels[l]->value.dim(0);
    if (trace) trace->level_shapes[l] = levels[l]->value.shape();
    const Head& h = heads_[l];

    Var refined = ag::reshape(
        run_mha(h.mha, ag::reshape(levels[l], {1, len, static_cast<std::size_t>(config_.d1)})),
        {len, static_cast<std::size_t>(config_.d1)});
    Var trunk = run_conv_block(h.reduce, refined, 1);  // (len, d2)

    LevelPrediction& lp = out.levels[l];
    lp.length = static_cast<int>(len);
    const int c_eff = config_.effective_categories();
    if (config_.decoupled_head) {
      Var iv = run_conv_block(h.interval_trunk, trunk, 1);
      lp.interval_params = ag::linear(iv, h.interval_proj.w, h.interval_proj.b);
      Var rc = run_conv_block(h.recog_trunk, trunk, 1);
      lp.class_logits = ag::linear(rc, h.recog_proj.w, h.recog_proj.b);
      if (config_.with_confidence_branch)
        lp.conf_logits = ag::linear(rc, h.conf_proj.w, h.conf_proj.b);
    } else {
      Var sh = run_conv_block(h.joint_trunk, trunk, 1);
      Var joint = ag::linear(sh, h.joint_proj.w, h.joint_proj.b);
      lp.interval_params = ag::slice_last(joint, 0, kSlotsPerPosition * 2);
      lp.class_logits =
          ag::slice_last(joint, kSlotsPerPosition * 2, kSlotsPerPosition * c_eff);
      if (config_.with_confidence_branch)
        lp.conf_logits = ag::slice_last(joint, kSlotsPerPosition * (2 + c_eff),
                                        kSlotsPerPosition);
    }
  }
  return out;
}

std::size_t FednNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p->value.numel();
  return n;
}

Var FednNetwork::find_parameter(const std::string& name) const {
  for (const auto& [n, p] : params_)
    if (n == name) return p;
  throw std::invalid_argument("no parameter named '" + name + "'");
}

std::map<std::string, Tensor> FednNetwork::state() const {
  std::map<std::string, Tensor> st;
  for (const auto& [name, p] : params_) st.emplace(name, p->value);
  return st;
}

void FednNetwork::load_state(const std::map<std::string, Tensor>& state) {
  if (state.size() != params_.size())
    throw std::invalid_argument("load_state: parameter set mismatch");
  for (auto& [name, p] : params_) {
    auto it = state.find(name);
    if (it == state.end())
      throw std::invalid_argument("load_state: missing parameter '" + name + "'");
    if (!(it->second.shape() == p->value.shape()))
      throw std::invalid_argument("load_state: shape mismatch for '" + name + "'");
    p->value = it->second;
  }
}

void FednNetwork::zero_grad() {
  for (auto& [name, p] : params_) p->grad = Tensor();
}

}  // namespace fedn
