#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvafm/layers.hpp"

namespace rvafm {

enum class StageMode { train_multibranch, inference_fused };

inline const char* to_string(StageMode m) {
  return m == StageMode::train_multibranch ? "train_multibranch" : "inference_fused";
}

/// The five re-parameterizable layers, in traversal order.
enum AttentionLayer : int {
  kStateConv = 0,    // conv over the (alpha, coverage) pair
  kHiddenProj = 1,   // decoder hidden -> attention channels
  kFeatureProj = 2,  // folded row features -> attention channels
  kConvProj = 3,     // conv output -> attention channels
  kScoreProj = 4,    // attention channels -> row score
};

inline const std::array<const char*, 5> kAttentionLayerNames = {
    "state_conv", "hidden_proj", "feature_proj", "conv_proj", "score_proj"};

struct RvafmConfig {
  int feature_channels = 256;    // C_f
  int conv_channels = 16;        // C_j
  int kernel_size = 15;
  int collapse_width = 100;
  int attention_channels = 256;  // C_u
  int decoder_hidden = 256;      // C_h
  int nsl = 2;
  int max_steps = 30;
  StageMode mode = StageMode::train_multibranch;
  /// Which of the five layers are multi-branch while training; single-layer
  /// ablations flip individual entries.
  std::array<bool, 5> dual_layers{true, true, true, true, true};

  int nsl_for(AttentionLayer layer) const {
    if (mode == StageMode::inference_fused) return 1;
    return dual_layers[static_cast<std::size_t>(layer)] ? nsl : 1;
  }

  void validate() const {
    if (feature_channels < 1 || conv_channels < 1 || attention_channels < 1 ||
        decoder_hidden < 1)
      throw std::invalid_argument("attention config: channel counts must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw std::invalid_argument("attention config: kernel_size must be odd");
    if (collapse_width < 1) throw std::invalid_argument("attention config: collapse_width < 1");
    if (nsl < 1) throw std::invalid_argument("attention config: nsl must be >= 1");
    if (max_steps < 1) throw std::invalid_argument("attention config: max_steps must be >= 1");
  }
};

template <typename S>
struct RvafmParams {
  MultiConv1d<S> state_conv;     // (alpha, clamped coverage) 2 -> C_j, length preserved
  MultiDense<S> hidden_proj;     // C_h -> C_u
  MultiDense<S> feature_proj;    // C_f -> C_u
  MultiDense<S> conv_proj;       // C_j -> C_u
  MultiDense<S> score_proj;      // C_u -> 1
  DenseParams<S> collapse_fold;  // collapse_width * C_f -> C_f
  DenseParams<S> halt_head;      // C_u + C_h -> 2 logits (continue, stop)
};

template <typename S, typename F>
void for_each_tensor(RvafmParams<S>& p, F&& f) {
  for_each_tensor(p.state_conv, f);
  for_each_tensor(p.hidden_proj, f);
  for_each_tensor(p.feature_proj, f);
  for_each_tensor(p.conv_proj, f);
  for_each_tensor(p.score_proj, f);
  for_each_tensor(p.collapse_fold, f);
  for_each_tensor(p.halt_head, f);
}
template <typename S, typename F>
void for_each_tensor(const RvafmParams<S>& p, F&& f) {
  for_each_tensor(p.state_conv, f);
  for_each_tensor(p.hidden_proj, f);
  for_each_tensor(p.feature_proj, f);
  for_each_tensor(p.conv_proj, f);
  for_each_tensor(p.score_proj, f);
  for_each_tensor(p.collapse_fold, f);
  for_each_tensor(p.halt_head, f);
}

template <typename S>
RvafmParams<S> init_rvafm(const RvafmConfig& cfg, Rng& rng) {
  cfg.validate();
  RvafmParams<S> p;
  p.state_conv = init_multi_conv1d<S>(rng, cfg.conv_channels, 2, cfg.kernel_size, 1,
                                      (cfg.kernel_size - 1) / 2, cfg.nsl_for(kStateConv));
  p.hidden_proj = init_multi_dense<S>(rng, cfg.decoder_hidden, cfg.attention_channels,
                                      cfg.nsl_for(kHiddenProj));
  p.feature_proj = init_multi_dense<S>(rng, cfg.feature_channels, cfg.attention_channels,
                                       cfg.nsl_for(kFeatureProj));
  p.conv_proj = init_multi_dense<S>(rng, cfg.conv_channels, cfg.attention_channels,
                                    cfg.nsl_for(kConvProj));
  p.score_proj = init_multi_dense<S>(rng, cfg.attention_channels, 1, cfg.nsl_for(kScoreProj));
  p.collapse_fold =
      init_dense<S>(rng, cfg.collapse_width * cfg.feature_channels, cfg.feature_channels);
  p.halt_head = init_dense<S>(rng, cfg.attention_channels + cfg.decoder_hidden, 2);
  return p;
}

/// Recurrent state: previous attention weights, their running sum, the
/// previous decoder hidden state, and the step index. Starts all-zero.
template <typename S>
struct RvafmState {
  Tensor<S> alpha_prev;   // [H_f]
  Tensor<S> coverage;     // [H_f], sum of all previous alphas
  Tensor<S> hidden_prev;  // [C_h]
  int t = 0;
};

template <typename S>
RvafmState<S> initial_state(const RvafmConfig& cfg, int feature_rows) {
  RvafmState<S> s;
  s.alpha_prev = Tensor<S>::zeros({feature_rows});
  s.coverage = Tensor<S>::zeros({feature_rows});
  s.hidden_prev = Tensor<S>::zeros({cfg.decoder_hidden});
  s.t = 0;
  return s;
}

/// Width-pools the feature map to `collapse_width` and folds each pooled row
/// to C_f channels. Computed once per image; every step reuses the result.
template <typename S>
Tensor<S> collapse_features(const Tensor<S>& f, const RvafmParams<S>& p, const RvafmConfig& cfg) {
  if (f.rank() != 3) throw std::invalid_argument("collapse_features expects [H_f x W_f x C_f]");
  if (f.dim(1) < cfg.collapse_width)
    throw std::invalid_argument("feature width " + std::to_string(f.dim(1)) +
                                " is below the collapse width " +
                                std::to_string(cfg.collapse_width));
  auto pooled = adaptive_max_pool_width(f, cfg.collapse_width);
  auto folded = dense_forward(p.collapse_fold,
                              reshape(pooled, {f.dim(0), cfg.collapse_width * f.dim(2)}));
  return folded;  // [H_f x C_f]
}

template <typename S>
struct AttentionStepOut {
  Tensor<S> line_feature;  // [C_f], attention-weighted mean-width row features
  Tensor<S> alpha;         // [H_f]
  Tensor<S> premix;        // [H_f x C_u], the tanh mix the score came from
};

/// One attention step. Consumes (alpha_{t-1}, coverage, h_{t-1}), emits the
/// line feature and the new attention weights, and advances the state
/// (coverage accumulates the returned alpha).
template <typename S>
AttentionStepOut<S> attention_step(const Tensor<S>& f, const Tensor<S>& folded,
                                   RvafmState<S>& state, const RvafmParams<S>& p,
                                   const RvafmConfig& cfg) {
  if (state.t >= cfg.max_steps)
    throw std::logic_error("attention step budget exhausted (max_steps = " +
                           std::to_string(cfg.max_steps) + ")");
  const int rows = f.dim(0);

  // conv over the stacked (alpha, coverage clamped to [0,1]) columns
  auto pair = concat_cols(reshape(state.alpha_prev, {rows, 1}),
                          reshape(clamp(state.coverage, S(0), S(1)), {rows, 1}));
  auto conv_out = multi_conv1d_forward(p.state_conv, pair);  // [H_f x C_j]

  // per-row mix of features, conv state, and the broadcast decoder hidden
  auto hidden_row = multi_dense_forward(p.hidden_proj, state.hidden_prev);  // [C_u]
  auto premix = rvafm::tanh(bias_add_rows(
      add(multi_dense_forward(p.feature_proj, folded), multi_dense_forward(p.conv_proj, conv_out)),
      hidden_row));  // [H_f x C_u]

  auto scores = reshape(multi_dense_forward(p.score_proj, premix), {rows});
  auto alpha = softmax(scores);

  // attention-weighted sum of width-averaged row features
  auto row_features = mean_width(f);  // [H_f x C_f]
  auto line = reshape(matmul(reshape(alpha, {1, rows}), row_features), {f.dim(2)});

  state.coverage = add(state.coverage, alpha);
  state.alpha_prev = alpha;
  state.t += 1;

  AttentionStepOut<S> out;
  out.line_feature = line;
  out.alpha = alpha;
  out.premix = premix;
  return out;
}

/// Two logits (continue, stop) from the row-mean of the premix and the current
/// decoder hidden state.
template <typename S>
Tensor<S> halt_predict(const Tensor<S>& premix, const Tensor<S>& hidden,
                       const RvafmParams<S>& p) {
  auto pooled = mean_rows(premix);  // [C_u]
  auto joint = reshape(concat_cols(reshape(pooled, {1, pooled.dim(0)}),
                                   reshape(hidden, {1, hidden.dim(0)})),
                       {pooled.dim(0) + hidden.dim(0)});
  return dense_forward(p.halt_head, joint);
}

/// Stop only on a strictly larger stop logit; ties keep reading.
template <typename S>
bool halt_says_stop(const Tensor<S>& logits) {
  return logits(1) > logits(0);
}

/// Supplies h_t after consuming each step's outputs (the decoder closes the
/// recurrence).
template <typename S>
using DecoderHook = std::function<Tensor<S>(const AttentionStepOut<S>&, int)>;

template <typename S>
struct Rollout {
  std::vector<Tensor<S>> line_features;
  std::vector<Tensor<S>> alphas;
  std::vector<Tensor<S>> premixes;
  std::vector<Tensor<S>> halt_logits;
  int steps = 0;
  bool hit_step_cap = false;  // inference ran out of budget before halting
  RvafmState<S> final_state;
};

/// Iterates attention steps from the zero state. With `forced_steps` > 0 the
/// rollout runs exactly that many steps (training teacher-forces the line
/// count); otherwise the halt prediction governs, capped at max_steps.
template <typename S>
Rollout<S> run_rollout(const Tensor<S>& f, const RvafmParams<S>& p, const RvafmConfig& cfg,
                       const DecoderHook<S>& decoder, int forced_steps = -1) {
  if (forced_steps == 0 || forced_steps > cfg.max_steps)
    throw std::invalid_argument("forced_steps must be in [1, max_steps]");
  auto folded = collapse_features(f, p, cfg);
  RvafmState<S> state = initial_state<S>(cfg, f.dim(0));
  Rollout<S> out;
  const int budget = forced_steps > 0 ? forced_steps : cfg.max_steps;
  for (int t = 0; t < budget; ++t) {
    auto step = attention_step(f, folded, state, p, cfg);
    Tensor<S> hidden = decoder(step, t);
    auto halt = halt_predict(step.premix, hidden, p);
    state.hidden_prev = hidden;
    out.line_features.push_back(step.line_feature);
    out.alphas.push_back(step.alpha);
    out.premixes.push_back(step.premix);
    out.halt_logits.push_back(halt);
    out.steps = t + 1;
    if (forced_steps < 0 && halt_says_stop(halt)) break;
  }
  out.hit_step_cap = forced_steps < 0 && out.steps == cfg.max_steps &&
                     !halt_says_stop(out.halt_logits.back());
  out.final_state = std::move(state);
  return out;
}

}  // namespace rvafm
