#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvafm/attention.hpp"
#include "rvafm/layers.hpp"

namespace rvafm {

namespace detail {

// Branch summation runs in float64 whatever the working dtype, then casts.
template <typename S>
Tensor<S> sum_in_f64(const std::vector<const Tensor<S>*>& parts) {
  std::vector<double> acc(static_cast<std::size_t>(parts.front()->size()), 0.0);
  for (const Tensor<S>* t : parts)
    for (long i = 0; i < t->size(); ++i) acc[static_cast<std::size_t>(i)] += static_cast<double>(t->data()[i]);
  Tensor<S> out(parts.front()->shape());
  S* o = out.mutable_data();
  for (std::size_t i = 0; i < acc.size(); ++i) o[i] = static_cast<S>(acc[i]);
  return out;
}

}  // namespace detail

/// Collapses the sublayers into one dense layer by parameter summation.
/// NSL = 1 returns the sublayer bit-identically.
template <typename S>
DenseParams<S> fuse_multi_dense(const MultiDense<S>& m) {
  detail::require_uniform_sublayers(m.sublayers, "fuse_multi_dense");
  if (m.nsl() == 1) return m.sublayers[0];
  std::vector<const Tensor<S>*> weights, biases;
  for (const auto& sub : m.sublayers) {
    weights.push_back(&sub.weight);
    biases.push_back(&sub.bias);
  }
  return {detail::sum_in_f64(weights), detail::sum_in_f64(biases)};
}

template <typename S>
Conv1dParams<S> fuse_multi_conv1d(const MultiConv1d<S>& m) {
  detail::require_uniform_sublayers(m.sublayers, "fuse_multi_conv1d");
  if (m.nsl() == 1) return m.sublayers[0];
  std::vector<const Tensor<S>*> kernels, biases;
  for (const auto& sub : m.sublayers) {
    kernels.push_back(&sub.kernel);
    biases.push_back(&sub.bias);
  }
  Conv1dParams<S> fused;
  fused.kernel = detail::sum_in_f64(kernels);
  fused.bias = detail::sum_in_f64(biases);
  fused.stride = m.sublayers[0].stride;
  fused.padding = m.sublayers[0].padding;
  return fused;
}

template <typename S>
struct FusedRvafm {
  RvafmParams<S> params;
  RvafmConfig config;
};

/// Fuses all five multi layers; the collapse and halt heads are copied. The
/// input is left intact.
template <typename S>
FusedRvafm<S> fuse_rvafm(const RvafmParams<S>& p, const RvafmConfig& cfg) {
  if (cfg.mode == StageMode::inference_fused)
    throw std::logic_error("fuse_rvafm: parameters are already fused");
  FusedRvafm<S> out;
  out.params.state_conv.sublayers = {fuse_multi_conv1d(p.state_conv)};
  out.params.hidden_proj.sublayers = {fuse_multi_dense(p.hidden_proj)};
  out.params.feature_proj.sublayers = {fuse_multi_dense(p.feature_proj)};
  out.params.conv_proj.sublayers = {fuse_multi_dense(p.conv_proj)};
  out.params.score_proj.sublayers = {fuse_multi_dense(p.score_proj)};
  out.params.collapse_fold = p.collapse_fold;
  out.params.halt_head = p.halt_head;
  out.config = cfg;
  out.config.mode = StageMode::inference_fused;
  return out;
}

struct DiffStats {
  double max_abs = 0.0;
  double max_rel = 0.0;
};

struct EquivalenceReport {
  int trials = 0;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  DiffStats line_feature, alpha, halt;
  bool halt_steps_match = true;
  bool pass = false;
  double tolerance = 0.0;
  std::string dtype;
  std::uint64_t seed = 0;
};

namespace detail {

// Relative difference with an absolute floor, so near-zero outputs do not
// blow up the ratio.
inline void accumulate_diff(DiffStats& stats, double a, double b) {
  const double diff = std::abs(a - b);
  const double denom = std::max({std::abs(a), std::abs(b), 1e-9});
  stats.max_abs = std::max(stats.max_abs, diff);
  stats.max_rel = std::max(stats.max_rel, diff / denom);
}

template <typename S>
void accumulate_diff(DiffStats& stats, const Tensor<S>& a, const Tensor<S>& b) {
  for (long i = 0; i < a.size(); ++i)
    accumulate_diff(stats, static_cast<double>(a.data()[i]), static_cast<double>(b.data()[i]));
}

}  // namespace detail

/// Runs seeded random feature maps through full rollouts of both parameter
/// sets (same seeded LSTM closing the decoder loop) and reports the worst
/// divergence over every per-step output.
template <typename S>
EquivalenceReport verify_equivalence(const RvafmParams<S>& p_multi, const RvafmConfig& cfg_multi,
                                     const RvafmParams<S>& p_fused, const RvafmConfig& cfg_fused,
                                     int trials, double tolerance, std::uint64_t seed) {
  RvafmConfig check = cfg_fused;
  check.mode = cfg_multi.mode;
  if (check.feature_channels != cfg_multi.feature_channels ||
      check.conv_channels != cfg_multi.conv_channels ||
      check.kernel_size != cfg_multi.kernel_size ||
      check.collapse_width != cfg_multi.collapse_width ||
      check.attention_channels != cfg_multi.attention_channels ||
      check.decoder_hidden != cfg_multi.decoder_hidden || check.max_steps != cfg_multi.max_steps)
    throw std::invalid_argument("verify_equivalence: configurations differ beyond the stage mode");

  EquivalenceReport report;
  report.trials = trials;
  report.tolerance = tolerance;
  report.dtype = dtype_name<S>();
  report.seed = seed;

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(trial)));
    const int rows = rng.uniform_int(4, 12);
    const int width = cfg_multi.collapse_width + rng.uniform_int(0, 8);
    Tensor<S> f({rows, width, cfg_multi.feature_channels});
    {
      S* p = f.mutable_data();
      for (long i = 0; i < f.size(); ++i) p[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
    }
    Rng lstm_rng(Rng::mix(seed, 0x10000u + static_cast<std::uint64_t>(trial)));
    auto lstm = init_lstm<S>(lstm_rng, cfg_multi.feature_channels, cfg_multi.decoder_hidden);

    auto roll = [&](const RvafmParams<S>& params, const RvafmConfig& cfg) {
      LstmState<S> state{Tensor<S>::zeros({cfg.decoder_hidden}),
                         Tensor<S>::zeros({cfg.decoder_hidden})};
      DecoderHook<S> hook = [&](const AttentionStepOut<S>& step, int) {
        state = lstm_step(lstm, step.line_feature, state);
        return state.h;
      };
      return run_rollout(f, params, cfg, hook);
    };
    auto multi = roll(p_multi, cfg_multi);
    auto fused = roll(p_fused, cfg_fused);

    if (multi.steps != fused.steps) {
      report.halt_steps_match = false;
      continue;
    }
    for (int t = 0; t < multi.steps; ++t) {
      detail::accumulate_diff(report.line_feature, multi.line_features[t],
                              fused.line_features[t]);
      detail::accumulate_diff(report.alpha, multi.alphas[t], fused.alphas[t]);
      detail::accumulate_diff(report.halt, multi.halt_logits[t], fused.halt_logits[t]);
    }
  }

  for (const DiffStats* s : {&report.line_feature, &report.alpha, &report.halt}) {
    report.max_abs_diff = std::max(report.max_abs_diff, s->max_abs);
    report.max_rel_diff = std::max(report.max_rel_diff, s->max_rel);
  }
  report.pass = report.halt_steps_match && report.max_rel_diff <= tolerance;
  return report;
}

}  // namespace rvafm
