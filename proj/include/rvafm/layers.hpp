#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rvafm/ops.hpp"
#include "rvafm/random.hpp"

namespace rvafm {

// ---------------------------------------------------------------------------
// Parameter structs

template <typename S>
struct DenseParams {
  Tensor<S> weight;  // [C_in x C_out]
  Tensor<S> bias;    // [C_out]
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
};

template <typename S>
struct Conv1dParams {
  Tensor<S> kernel;  // [C_out x C_in x k]
  Tensor<S> bias;    // [C_out]
  int stride = 1;
  int padding = 0;
  int out_channels() const { return kernel.dim(0); }
  int in_channels() const { return kernel.dim(1); }
  int kernel_size() const { return kernel.dim(2); }
};

/// NSL identically shaped dense layers sharing one input, outputs summed.
/// NSL = 1 is exactly a plain dense layer.
template <typename S>
struct MultiDense {
  std::vector<DenseParams<S>> sublayers;
  int nsl() const { return static_cast<int>(sublayers.size()); }
};

template <typename S>
struct MultiConv1d {
  std::vector<Conv1dParams<S>> sublayers;
  int nsl() const { return static_cast<int>(sublayers.size()); }
};

template <typename S>
struct GateParams {
  Tensor<S> weight_x;  // [C_in x C_h]
  Tensor<S> weight_h;  // [C_h x C_h]
  Tensor<S> bias;      // [C_h]
};

template <typename S>
struct LstmParams {
  GateParams<S> input_gate, forget_gate, cell_gate, output_gate;
  int input_size() const { return input_gate.weight_x.dim(0); }
  int hidden_size() const { return input_gate.weight_x.dim(1); }
};

template <typename S>
struct LstmState {
  Tensor<S> h, c;
};

template <typename S>
struct Conv2dBlock {
  Tensor<S> kernel;  // [C_out x C_in x kh x kw]
  Tensor<S> bias;
  int stride_h = 1;
  int stride_w = 1;
};

/// Strided conv + tanh stack; composed strides give the downsampling ratios.
template <typename S>
struct EncoderParams {
  std::vector<Conv2dBlock<S>> blocks;
  int down_h() const {
    int d = 1;
    for (const auto& b : blocks) d *= b.stride_h;
    return d;
  }
  int down_w() const {
    int d = 1;
    for (const auto& b : blocks) d *= b.stride_w;
    return d;
  }
  int out_channels() const { return blocks.back().kernel.dim(0); }
};

// ---------------------------------------------------------------------------
// Tensor traversal (shared by graph binding, optimizer, checkpoints)

template <typename S, typename F>
void for_each_tensor(DenseParams<S>& p, F&& f) {
  f(p.weight);
  f(p.bias);
}
template <typename S, typename F>
void for_each_tensor(const DenseParams<S>& p, F&& f) {
  f(p.weight);
  f(p.bias);
}
template <typename S, typename F>
void for_each_tensor(Conv1dParams<S>& p, F&& f) {
  f(p.kernel);
  f(p.bias);
}
template <typename S, typename F>
void for_each_tensor(const Conv1dParams<S>& p, F&& f) {
  f(p.kernel);
  f(p.bias);
}
template <typename S, typename F>
void for_each_tensor(MultiDense<S>& p, F&& f) {
  for (auto& sub : p.sublayers) for_each_tensor(sub, f);
}
template <typename S, typename F>
void for_each_tensor(const MultiDense<S>& p, F&& f) {
  for (const auto& sub : p.sublayers) for_each_tensor(sub, f);
}
template <typename S, typename F>
void for_each_tensor(MultiConv1d<S>& p, F&& f) {
  for (auto& sub : p.sublayers) for_each_tensor(sub, f);
}
template <typename S, typename F>
void for_each_tensor(const MultiConv1d<S>& p, F&& f) {
  for (const auto& sub : p.sublayers) for_each_tensor(sub, f);
}
template <typename S, typename F>
void for_each_tensor(LstmParams<S>& p, F&& f) {
  for (auto* g : {&p.input_gate, &p.forget_gate, &p.cell_gate, &p.output_gate}) {
    f(g->weight_x);
    f(g->weight_h);
    f(g->bias);
  }
}
template <typename S, typename F>
void for_each_tensor(const LstmParams<S>& p, F&& f) {
  for (const auto* g : {&p.input_gate, &p.forget_gate, &p.cell_gate, &p.output_gate}) {
    f(g->weight_x);
    f(g->weight_h);
    f(g->bias);
  }
}
template <typename S, typename F>
void for_each_tensor(EncoderParams<S>& p, F&& f) {
  for (auto& b : p.blocks) {
    f(b.kernel);
    f(b.bias);
  }
}
template <typename S, typename F>
void for_each_tensor(const EncoderParams<S>& p, F&& f) {
  for (const auto& b : p.blocks) {
    f(b.kernel);
    f(b.bias);
  }
}

/// Copy of a parameter struct whose tensors are attached to `g` as trainable
/// leaves. The copy shares payloads with the original.
template <typename S, typename P>
P bound_copy(Graph<S>& g, const P& params) {
  P copy = params;
  for_each_tensor(copy, [&](Tensor<S>& t) { t = g.leaf(t); });
  return copy;
}

template <typename P>
long tensor_count(const P& params) {
  long n = 0;
  for_each_tensor(params, [&](const auto& t) { n += t.size(); });
  return n;
}

template <typename S, typename P>
std::vector<Tensor<S>> collect_tensors(const P& params) {
  std::vector<Tensor<S>> out;
  for_each_tensor(params, [&](const Tensor<S>& t) { out.push_back(t); });
  return out;
}

/// Re-fills a parameter struct from a flat tensor list in traversal order.
template <typename S, typename P>
void assign_tensors(P& params, const std::vector<Tensor<S>>& tensors, std::size_t& cursor) {
  for_each_tensor(params, [&](Tensor<S>& t) {
    if (cursor >= tensors.size()) throw std::logic_error("assign_tensors: list too short");
    t = tensors[cursor++];
  });
}

// ---------------------------------------------------------------------------
// Initialization: uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
// Every sublayer of a multi layer draws independently.

namespace detail {

template <typename S>
Tensor<S> glorot(Rng& rng, Shape shape, double fan_in, double fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<S> t(std::move(shape));
  S* p = t.mutable_data();
  for (long i = 0; i < t.size(); ++i) p[i] = static_cast<S>(rng.uniform(-a, a));
  return t;
}

}  // namespace detail

template <typename S>
DenseParams<S> init_dense(Rng& rng, int in, int out) {
  return {detail::glorot<S>(rng, {in, out}, in, out), Tensor<S>::zeros({out})};
}

template <typename S>
Conv1dParams<S> init_conv1d(Rng& rng, int c_out, int c_in, int k, int stride, int padding) {
  Conv1dParams<S> p;
  p.kernel = detail::glorot<S>(rng, {c_out, c_in, k}, static_cast<double>(c_in) * k,
                               static_cast<double>(c_out) * k);
  p.bias = Tensor<S>::zeros({c_out});
  p.stride = stride;
  p.padding = padding;
  return p;
}

template <typename S>
MultiDense<S> init_multi_dense(Rng& rng, int in, int out, int nsl) {
  if (nsl < 1) throw std::invalid_argument("multi layer needs NSL >= 1");
  MultiDense<S> m;
  for (int i = 0; i < nsl; ++i) m.sublayers.push_back(init_dense<S>(rng, in, out));
  return m;
}

template <typename S>
MultiConv1d<S> init_multi_conv1d(Rng& rng, int c_out, int c_in, int k, int stride, int padding,
                                 int nsl) {
  if (nsl < 1) throw std::invalid_argument("multi layer needs NSL >= 1");
  MultiConv1d<S> m;
  for (int i = 0; i < nsl; ++i)
    m.sublayers.push_back(init_conv1d<S>(rng, c_out, c_in, k, stride, padding));
  return m;
}

template <typename S>
LstmParams<S> init_lstm(Rng& rng, int c_in, int c_h) {
  auto gate = [&](S bias_value) {
    GateParams<S> g;
    g.weight_x = detail::glorot<S>(rng, {c_in, c_h}, c_in, c_h);
    g.weight_h = detail::glorot<S>(rng, {c_h, c_h}, c_h, c_h);
    g.bias = Tensor<S>::constant({c_h}, bias_value);
    return g;
  };
  LstmParams<S> p;
  p.input_gate = gate(S(0));
  p.forget_gate = gate(S(1));  // start remembering
  p.cell_gate = gate(S(0));
  p.output_gate = gate(S(0));
  return p;
}

/// `channels` lists the output channels of every block (the last entry is the
/// encoder's C_f); `strides` pairs up with it.
template <typename S>
EncoderParams<S> init_encoder(Rng& rng, int in_channels, const std::vector<int>& channels,
                              const std::vector<std::array<int, 2>>& strides, int kernel = 3) {
  if (channels.empty() || channels.size() != strides.size())
    throw std::invalid_argument("encoder needs one stride pair per block");
  EncoderParams<S> enc;
  int c_in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    Conv2dBlock<S> block;
    block.kernel = detail::glorot<S>(rng, {channels[i], c_in, kernel, kernel},
                                     static_cast<double>(c_in) * kernel * kernel,
                                     static_cast<double>(channels[i]) * kernel * kernel);
    block.bias = Tensor<S>::zeros({channels[i]});
    block.stride_h = strides[i][0];
    block.stride_w = strides[i][1];
    enc.blocks.push_back(std::move(block));
    c_in = channels[i];
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Forward passes

/// x . W + b over the last dimension; accepts a vector or a matrix of rows.
template <typename S>
Tensor<S> dense_forward(const DenseParams<S>& p, const Tensor<S>& x) {
  if (x.rank() == 1) {
    auto out = bias_add_rows(matmul(reshape(x, {1, x.dim(0)}), p.weight), p.bias);
    return reshape(out, {p.out_features()});
  }
  if (x.rank() == 2) return bias_add_rows(matmul(x, p.weight), p.bias);
  throw std::invalid_argument("dense_forward expects a rank-1 or rank-2 input");
}

template <typename S>
Tensor<S> conv1d_forward(const Conv1dParams<S>& p, const Tensor<S>& x) {
  return conv1d(x, p.kernel, p.bias, p.stride, p.padding);
}

namespace detail {

template <typename S>
bool sub_shape_matches(const DenseParams<S>& a, const DenseParams<S>& b) {
  return a.weight.same_shape(b.weight) && a.bias.same_shape(b.bias);
}

template <typename S>
bool sub_shape_matches(const Conv1dParams<S>& a, const Conv1dParams<S>& b) {
  return a.kernel.same_shape(b.kernel) && a.bias.same_shape(b.bias) && a.stride == b.stride &&
         a.padding == b.padding;
}

template <typename Sub>
void require_uniform_sublayers(const std::vector<Sub>& subs, const char* what) {
  if (subs.empty()) throw std::invalid_argument(std::string(what) + ": no sublayers");
  for (const auto& sub : subs) {
    if (!sub_shape_matches(subs.front(), sub))
      throw std::invalid_argument(std::string(what) + ": sublayers differ in configuration");
  }
}

}  // namespace detail

/// Sum of the sublayer outputs on the shared input.
template <typename S>
Tensor<S> multi_dense_forward(const MultiDense<S>& m, const Tensor<S>& x) {
  detail::require_uniform_sublayers(m.sublayers, "multi_dense_forward");
  Tensor<S> out = dense_forward(m.sublayers[0], x);
  for (std::size_t i = 1; i < m.sublayers.size(); ++i)
    out = add(out, dense_forward(m.sublayers[i], x));
  return out;
}

template <typename S>
Tensor<S> multi_conv1d_forward(const MultiConv1d<S>& m, const Tensor<S>& x) {
  detail::require_uniform_sublayers(m.sublayers, "multi_conv1d_forward");
  Tensor<S> out = conv1d_forward(m.sublayers[0], x);
  for (std::size_t i = 1; i < m.sublayers.size(); ++i)
    out = add(out, conv1d_forward(m.sublayers[i], x));
  return out;
}

/// One LSTM cell update (sigmoid gates, tanh candidate, no peepholes).
template <typename S>
LstmState<S> lstm_step(const LstmParams<S>& p, const Tensor<S>& x, const LstmState<S>& state) {
  const int c_h = p.hidden_size();
  auto xr = reshape(x, {1, x.dim(0)});
  auto hr = reshape(state.h, {1, c_h});
  auto affine = [&](const GateParams<S>& g) {
    return reshape(bias_add_rows(add(matmul(xr, g.weight_x), matmul(hr, g.weight_h)), g.bias),
                   {c_h});
  };
  auto i = sigmoid(affine(p.input_gate));
  auto f = sigmoid(affine(p.forget_gate));
  auto cand = rvafm::tanh(affine(p.cell_gate));
  auto o = sigmoid(affine(p.output_gate));
  LstmState<S> next;
  next.c = add(mul(f, state.c), mul(i, cand));
  next.h = mul(o, rvafm::tanh(next.c));
  return next;
}

/// Runs the cell over the rows of X, pre-projecting the input side of every
/// gate in one matmul. Returns the per-step hidden states stacked to [T x C_h]
/// along with the final state.
template <typename S>
struct LstmSequence {
  Tensor<S> outputs;  // [T x C_h]
  LstmState<S> final_state;
};

template <typename S>
LstmSequence<S> lstm_sequence(const LstmParams<S>& p, const Tensor<S>& x,
                              const LstmState<S>& state0) {
  if (x.rank() != 2) throw std::invalid_argument("lstm_sequence expects [T x C_in]");
  const int steps = x.dim(0), c_h = p.hidden_size();
  auto xp_i = bias_add_rows(matmul(x, p.input_gate.weight_x), p.input_gate.bias);
  auto xp_f = bias_add_rows(matmul(x, p.forget_gate.weight_x), p.forget_gate.bias);
  auto xp_c = bias_add_rows(matmul(x, p.cell_gate.weight_x), p.cell_gate.bias);
  auto xp_o = bias_add_rows(matmul(x, p.output_gate.weight_x), p.output_gate.bias);
  LstmState<S> state = state0;
  std::vector<Tensor<S>> hs;
  hs.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    auto hr = reshape(state.h, {1, c_h});
    auto gate = [&](const Tensor<S>& xp, const GateParams<S>& g) {
      return reshape(add(slice_row(xp, t), reshape(matmul(hr, g.weight_h), {c_h})), {c_h});
    };
    auto i = sigmoid(gate(xp_i, p.input_gate));
    auto f = sigmoid(gate(xp_f, p.forget_gate));
    auto cand = rvafm::tanh(gate(xp_c, p.cell_gate));
    auto o = sigmoid(gate(xp_o, p.output_gate));
    state.c = add(mul(f, state.c), mul(i, cand));
    state.h = mul(o, rvafm::tanh(state.c));
    hs.push_back(state.h);
  }
  LstmSequence<S> out;
  out.outputs = stack_rows(hs);
  out.final_state = std::move(state);
  return out;
}

/// Conv + tanh blocks over a [H x W x C_in] image; odd kernels keep the
/// spatial contract out = in / stride, which requires divisibility.
template <typename S>
Tensor<S> encoder_forward(const EncoderParams<S>& p, const Tensor<S>& image) {
  if (image.rank() != 3) throw std::invalid_argument("encoder_forward expects [H x W x C]");
  Tensor<S> f = image;
  for (const auto& block : p.blocks) {
    if (f.dim(0) % block.stride_h != 0 || f.dim(1) % block.stride_w != 0)
      throw std::invalid_argument("encoder input " + shape_str(f.shape()) +
                                  " is not divisible by the block strides");
    const int kh = block.kernel.dim(2), kw = block.kernel.dim(3);
    f = rvafm::tanh(
        conv2d(f, block.kernel, block.bias, block.stride_h, block.stride_w, (kh - 1) / 2,
               (kw - 1) / 2));
  }
  return f;
}

}  // namespace rvafm
