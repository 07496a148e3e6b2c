#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rvafm/autodiff.hpp"
#include "rvafm/tensor.hpp"

namespace rvafm {

namespace detail {

template <typename Scalar>
void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("add", a, b);
  Tensor<S> out(a.shape());
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) = a.flat() + b.flat();
  return detail::finish_op("add", std::move(out), {&a, &b}, [&] {
    return [a, b](Graph<S>& g, const Tensor<S>& grad) {
      g.accumulate(a, grad);
      g.accumulate(b, grad);
    };
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor<S> out(a.shape());
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) = a.flat() - b.flat();
  return detail::finish_op("sub", std::move(out), {&a, &b}, [&] {
    return [a, b](Graph<S>& g, const Tensor<S>& grad) {
      g.accumulate(a, grad);
      Tensor<S> gb(b.shape());
      Eigen::Map<ArrayX<S>>(gb.mutable_data(), gb.size()) = -grad.flat();
      g.accumulate(b, gb);
    };
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("mul", a, b);
  Tensor<S> out(a.shape());
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) = a.flat() * b.flat();
  return detail::finish_op("mul", std::move(out), {&a, &b}, [&] {
    return [a, b](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> ga(a.shape());
      Eigen::Map<ArrayX<S>>(ga.mutable_data(), ga.size()) = grad.flat() * b.flat();
      g.accumulate(a, ga);
      Tensor<S> gb(b.shape());
      Eigen::Map<ArrayX<S>>(gb.mutable_data(), gb.size()) = grad.flat() * a.flat();
      g.accumulate(b, gb);
    };
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  if (!std::isfinite(static_cast<double>(c)))
    throw std::domain_error("scale: factor must be finite");
  Tensor<S> out(a.shape());
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) = a.flat() * c;
  return detail::finish_op("scale", std::move(out), {&a}, [&] {
    return [a, c](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> ga(a.shape());
      Eigen::Map<ArrayX<S>>(ga.mutable_data(), ga.size()) = grad.flat() * c;
      g.accumulate(a, ga);
    };
  });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) = a.flat().tanh();
  Tensor<S> y = out.detached();
  return detail::finish_op("tanh", std::move(out), {&a}, [&] {
    return [a, y](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> ga(a.shape());
      Eigen::Map<ArrayX<S>>(ga.mutable_data(), ga.size()) =
          grad.flat() * (S(1) - y.flat().square());
      g.accumulate(a, ga);
    };
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  // 1/(1+exp(-x)) via tanh for symmetric overflow behaviour
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) =
      ((a.flat() * S(0.5)).tanh() + S(1)) * S(0.5);
  Tensor<S> y = out.detached();
  return detail::finish_op("sigmoid", std::move(out), {&a}, [&] {
    return [a, y](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> ga(a.shape());
      Eigen::Map<ArrayX<S>>(ga.mutable_data(), ga.size()) =
          grad.flat() * y.flat() * (S(1) - y.flat());
      g.accumulate(a, ga);
    };
  });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  Tensor<S> out(a.shape());
  Eigen::Map<ArrayX<S>>(out.mutable_data(), out.size()) = a.flat().max(lo).min(hi);
  return detail::finish_op("clamp", std::move(out), {&a}, [&] {
    return [a, lo, hi](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> ga(a.shape());
      S* p = ga.mutable_data();
      const S* x = a.data();
      const S* gv = grad.data();
      for (long i = 0; i < a.size(); ++i) p[i] = (x[i] >= lo && x[i] <= hi) ? gv[i] : S(0);
      g.accumulate(a, ga);
    };
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul requires rank-2 tensors, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor<S> out({a.dim(0), b.dim(1)});
  Eigen::Map<MatrixX<S>>(out.mutable_data(), a.dim(0), b.dim(1)).noalias() =
      a.matrix() * b.matrix();
  return detail::finish_op("matmul", std::move(out), {&a, &b}, [&] {
    return [a, b](Graph<S>& g, const Tensor<S>& grad) {
      auto gm = grad.matrix();
      Tensor<S> ga(a.shape());
      Eigen::Map<MatrixX<S>>(ga.mutable_data(), a.dim(0), a.dim(1)).noalias() =
          gm * b.matrix().transpose();
      g.accumulate(a, ga);
      Tensor<S> gb(b.shape());
      Eigen::Map<MatrixX<S>>(gb.mutable_data(), b.dim(0), b.dim(1)).noalias() =
          a.matrix().transpose() * gm;
      g.accumulate(b, gb);
    };
  });
}

/// Adds a length-C bias to every row of an R x C matrix.
template <typename S>
Tensor<S> bias_add_rows(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
    throw std::invalid_argument("bias_add_rows: need [RxC] and [C], got " + shape_str(x.shape()) +
                                " and " + shape_str(b.shape()));
  Tensor<S> out(x.shape());
  Eigen::Map<MatrixX<S>>(out.mutable_data(), x.dim(0), x.dim(1)) =
      x.matrix().rowwise() + Eigen::Map<const Eigen::RowVectorX<S>>(b.data(), b.dim(0));
  return detail::finish_op("bias_add_rows", std::move(out), {&x, &b}, [&] {
    return [x, b](Graph<S>& g, const Tensor<S>& grad) {
      g.accumulate(x, grad);
      Tensor<S> gb(b.shape());
      Eigen::Map<Eigen::RowVectorX<S>>(gb.mutable_data(), b.dim(0)) =
          grad.matrix().colwise().sum();
      g.accumulate(b, gb);
    };
  });
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, zero padding)

namespace detail {

inline int conv_out_len(int len, int k, int stride, int pad) {
  return (len + 2 * pad - k) / stride + 1;
}

// Patch matrix for a [L x Cin] sequence: row per output position, columns
// ordered (ci, dk) to match the row-major kernel layout [Cout x Cin x k].
template <typename S>
MatrixX<S> im2col_1d(const Tensor<S>& x, int k, int stride, int pad, int l_out) {
  const int c_in = x.dim(1);
  MatrixX<S> col = MatrixX<S>::Zero(l_out, c_in * k);
  for (int l = 0; l < l_out; ++l) {
    const int start = l * stride - pad;
    for (int ci = 0; ci < c_in; ++ci)
      for (int dk = 0; dk < k; ++dk) {
        const int src = start + dk;
        if (src >= 0 && src < x.dim(0)) col(l, ci * k + dk) = x(src, ci);
      }
  }
  return col;
}

template <typename S>
void col2im_1d(const MatrixX<S>& dcol, Tensor<S>& dx, int k, int stride, int pad) {
  const int c_in = dx.dim(1);
  S* p = dx.mutable_data();
  for (int l = 0; l < dcol.rows(); ++l) {
    const int start = l * stride - pad;
    for (int ci = 0; ci < c_in; ++ci)
      for (int dk = 0; dk < k; ++dk) {
        const int src = start + dk;
        if (src >= 0 && src < dx.dim(0)) p[src * c_in + ci] += dcol(l, ci * k + dk);
      }
  }
}

// Same idea for a [H x W x Cin] map, columns ordered (ci, dh, dw).
template <typename S>
MatrixX<S> im2col_2d(const Tensor<S>& x, int kh, int kw, int sh, int sw, int ph, int pw,
                     int h_out, int w_out) {
  const int c_in = x.dim(2);
  MatrixX<S> col = MatrixX<S>::Zero(static_cast<long>(h_out) * w_out, c_in * kh * kw);
  for (int ho = 0; ho < h_out; ++ho)
    for (int wo = 0; wo < w_out; ++wo) {
      const long row = static_cast<long>(ho) * w_out + wo;
      const int h0 = ho * sh - ph;
      const int w0 = wo * sw - pw;
      for (int ci = 0; ci < c_in; ++ci)
        for (int dh = 0; dh < kh; ++dh) {
          const int h = h0 + dh;
          if (h < 0 || h >= x.dim(0)) continue;
          for (int dw = 0; dw < kw; ++dw) {
            const int w = w0 + dw;
            if (w >= 0 && w < x.dim(1)) col(row, (ci * kh + dh) * kw + dw) = x(h, w, ci);
          }
        }
    }
  return col;
}

template <typename S>
void col2im_2d(const MatrixX<S>& dcol, Tensor<S>& dx, int kh, int kw, int sh, int sw, int ph,
               int pw, int h_out, int w_out) {
  const int c_in = dx.dim(2);
  S* p = dx.mutable_data();
  for (int ho = 0; ho < h_out; ++ho)
    for (int wo = 0; wo < w_out; ++wo) {
      const long row = static_cast<long>(ho) * w_out + wo;
      const int h0 = ho * sh - ph;
      const int w0 = wo * sw - pw;
      for (int ci = 0; ci < c_in; ++ci)
        for (int dh = 0; dh < kh; ++dh) {
          const int h = h0 + dh;
          if (h < 0 || h >= dx.dim(0)) continue;
          for (int dw = 0; dw < kw; ++dw) {
            const int w = w0 + dw;
            if (w >= 0 && w < dx.dim(1))
              p[(static_cast<long>(h) * dx.dim(1) + w) * c_in + ci] +=
                  dcol(row, (ci * kh + dh) * kw + dw);
          }
        }
    }
}

}  // namespace detail

/// 1-D cross-correlation over a [L x Cin] sequence with kernel
/// [Cout x Cin x k] and per-channel bias.
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, int stride,
                 int padding) {
  if (x.rank() != 2 || kernel.rank() != 3)
    throw std::invalid_argument("conv1d: need input [LxCin] and kernel [CoutxCinxk]");
  const int c_out = kernel.dim(0), c_in = kernel.dim(1), k = kernel.dim(2);
  if (x.dim(1) != c_in)
    throw std::invalid_argument("conv1d: input channels " + std::to_string(x.dim(1)) +
                                " do not match kernel channels " + std::to_string(c_in));
  if (bias.rank() != 1 || bias.dim(0) != c_out)
    throw std::invalid_argument("conv1d: bias must have one entry per output channel");
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv1d: padding must be >= 0");
  if (k > x.dim(0) + 2 * padding)
    throw std::invalid_argument("conv1d: kernel size " + std::to_string(k) +
                                " exceeds padded input length");
  const int l_out = detail::conv_out_len(x.dim(0), k, stride, padding);
  MatrixX<S> col = detail::im2col_1d(x, k, stride, padding, l_out);
  Tensor<S> out({l_out, c_out});
  Eigen::Map<MatrixX<S>>(out.mutable_data(), l_out, c_out).noalias() =
      col * kernel.matrix(c_out, c_in * k).transpose();
  Eigen::Map<MatrixX<S>>(out.mutable_data(), l_out, c_out).rowwise() +=
      Eigen::Map<const Eigen::RowVectorX<S>>(bias.data(), c_out);
  return detail::finish_op("conv1d", std::move(out), {&x, &kernel, &bias}, [&] {
    return [x, kernel, bias, stride, padding, l_out](Graph<S>& g, const Tensor<S>& grad) {
      const int c_out = kernel.dim(0), c_in = kernel.dim(1), k = kernel.dim(2);
      auto gm = grad.matrix();
      MatrixX<S> col = detail::im2col_1d(x, k, stride, padding, l_out);
      Tensor<S> gk(kernel.shape());
      Eigen::Map<MatrixX<S>>(gk.mutable_data(), c_out, c_in * k).noalias() =
          gm.transpose() * col;
      g.accumulate(kernel, gk);
      Tensor<S> gb(bias.shape());
      Eigen::Map<Eigen::RowVectorX<S>>(gb.mutable_data(), c_out) = gm.colwise().sum();
      g.accumulate(bias, gb);
      MatrixX<S> dcol = gm * kernel.matrix(c_out, c_in * k);
      Tensor<S> gx(x.shape());
      detail::col2im_1d(dcol, gx, k, stride, padding);
      g.accumulate(x, gx);
    };
  });
}

/// 2-D cross-correlation over a [H x W x Cin] map with kernel
/// [Cout x Cin x kh x kw].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, int stride_h,
                 int stride_w, int pad_h, int pad_w) {
  if (x.rank() != 3 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: need input [HxWxCin] and kernel [CoutxCinxkhxkw]");
  const int c_out = kernel.dim(0), c_in = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (x.dim(2) != c_in) throw std::invalid_argument("conv2d: channel mismatch");
  if (bias.rank() != 1 || bias.dim(0) != c_out)
    throw std::invalid_argument("conv2d: bias must have one entry per output channel");
  if (stride_h < 1 || stride_w < 1) throw std::invalid_argument("conv2d: strides must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (kh > x.dim(0) + 2 * pad_h || kw > x.dim(1) + 2 * pad_w)
    throw std::invalid_argument("conv2d: kernel exceeds padded input");
  const int h_out = detail::conv_out_len(x.dim(0), kh, stride_h, pad_h);
  const int w_out = detail::conv_out_len(x.dim(1), kw, stride_w, pad_w);
  MatrixX<S> col = detail::im2col_2d(x, kh, kw, stride_h, stride_w, pad_h, pad_w, h_out, w_out);
  Tensor<S> out({h_out, w_out, c_out});
  Eigen::Map<MatrixX<S>> om(out.mutable_data(), static_cast<long>(h_out) * w_out, c_out);
  om.noalias() = col * kernel.matrix(c_out, c_in * kh * kw).transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorX<S>>(bias.data(), c_out);
  return detail::finish_op("conv2d", std::move(out), {&x, &kernel, &bias}, [&] {
    return [x, kernel, bias, stride_h, stride_w, pad_h, pad_w, h_out, w_out](
               Graph<S>& g, const Tensor<S>& grad) {
      const int c_out = kernel.dim(0), c_in = kernel.dim(1), kh = kernel.dim(2),
                kw = kernel.dim(3);
      auto gm = grad.matrix(static_cast<int>(static_cast<long>(h_out) * w_out), c_out);
      MatrixX<S> col =
          detail::im2col_2d(x, kh, kw, stride_h, stride_w, pad_h, pad_w, h_out, w_out);
      Tensor<S> gk(kernel.shape());
      Eigen::Map<MatrixX<S>>(gk.mutable_data(), c_out, c_in * kh * kw).noalias() =
          gm.transpose() * col;
      g.accumulate(kernel, gk);
      Tensor<S> gb(bias.shape());
      Eigen::Map<Eigen::RowVectorX<S>>(gb.mutable_data(), c_out) = gm.colwise().sum();
      g.accumulate(bias, gb);
      MatrixX<S> dcol = gm * kernel.matrix(c_out, c_in * kh * kw);
      Tensor<S> gx(x.shape());
      detail::col2im_2d(dcol, gx, kh, kw, stride_h, stride_w, pad_h, pad_w, h_out, w_out);
      g.accumulate(x, gx);
    };
  });
}

/// Max-pools the width of a [H x W x C] map into `target_w` near-equal bins;
/// bin i covers [floor(i*W/t), ceil((i+1)*W/t)). Ties go to the lowest index
/// so the routed gradient is deterministic.
template <typename S>
Tensor<S> adaptive_max_pool_width(const Tensor<S>& x, int target_w) {
  if (x.rank() != 3) throw std::invalid_argument("adaptive_max_pool_width: need [HxWxC]");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (target_w < 1) throw std::invalid_argument("adaptive_max_pool_width: target_w must be >= 1");
  if (target_w > w)
    throw std::invalid_argument("adaptive_max_pool_width: target_w " + std::to_string(target_w) +
                                " exceeds input width " + std::to_string(w));
  Tensor<S> out({h, target_w, c});
  std::vector<int> argmax(static_cast<std::size_t>(out.size()));
  S* o = out.mutable_data();
  for (int i = 0; i < h; ++i)
    for (int b = 0; b < target_w; ++b) {
      const int w0 = (b * w) / target_w;
      const int w1 = ((b + 1) * w + target_w - 1) / target_w;
      for (int ch = 0; ch < c; ++ch) {
        S best = x(i, w0, ch);
        int best_w = w0;
        for (int ww = w0 + 1; ww < w1; ++ww)
          if (x(i, ww, ch) > best) {
            best = x(i, ww, ch);
            best_w = ww;
          }
        const long idx = (static_cast<long>(i) * target_w + b) * c + ch;
        o[idx] = best;
        argmax[static_cast<std::size_t>(idx)] = best_w;
      }
    }
  return detail::finish_op("adaptive_max_pool_width", std::move(out), {&x}, [&] {
    return [x, target_w, argmax = std::move(argmax)](Graph<S>& g, const Tensor<S>& grad) {
      const int h = x.dim(0), c = x.dim(2);
      Tensor<S> gx(x.shape());
      S* p = gx.mutable_data();
      const S* gv = grad.data();
      for (int i = 0; i < h; ++i)
        for (int b = 0; b < target_w; ++b)
          for (int ch = 0; ch < c; ++ch) {
            const long idx = (static_cast<long>(i) * target_w + b) * c + ch;
            p[(static_cast<long>(i) * x.dim(1) + argmax[static_cast<std::size_t>(idx)]) * c + ch] +=
                gv[idx];
          }
      g.accumulate(x, gx);
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions, normalizations, shape plumbing

/// Numerically stable softmax of a vector.
template <typename S>
Tensor<S> softmax(const Tensor<S>& v) {
  if (v.rank() != 1) throw std::invalid_argument("softmax expects a rank-1 tensor");
  Tensor<S> out(v.shape());
  auto x = v.flat();
  Eigen::Map<ArrayX<S>> y(out.mutable_data(), out.size());
  y = (x - x.maxCoeff()).exp();
  y /= y.sum();
  Tensor<S> probs = out.detached();
  return detail::finish_op("softmax", std::move(out), {&v}, [&] {
    return [v, probs](Graph<S>& g, const Tensor<S>& grad) {
      const S dot = (grad.flat() * probs.flat()).sum();
      Tensor<S> gv(v.shape());
      Eigen::Map<ArrayX<S>>(gv.mutable_data(), gv.size()) = probs.flat() * (grad.flat() - dot);
      g.accumulate(v, gv);
    };
  });
}

/// Row-wise log-softmax of a [T x K] matrix.
template <typename S>
Tensor<S> log_softmax_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw std::invalid_argument("log_softmax_rows expects a rank-2 tensor");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out(x.shape());
  Tensor<S> probs(x.shape());
  {
    auto xm = x.matrix();
    Eigen::Map<MatrixX<S>> om(out.mutable_data(), rows, cols);
    Eigen::Map<MatrixX<S>> pm(probs.mutable_data(), rows, cols);
    for (int r = 0; r < rows; ++r) {
      const S mx = xm.row(r).maxCoeff();
      ArrayX<S> shifted = xm.row(r).transpose().array() - mx;
      const S lse = std::log(shifted.exp().sum());
      om.row(r) = (shifted - lse).matrix().transpose();
      pm.row(r) = (shifted - lse).exp().matrix().transpose();
    }
  }
  Tensor<S> p = probs.detached();
  return detail::finish_op("log_softmax_rows", std::move(out), {&x}, [&] {
    return [x, p](Graph<S>& g, const Tensor<S>& grad) {
      const int rows = x.dim(0), cols = x.dim(1);
      Tensor<S> gx(x.shape());
      Eigen::Map<MatrixX<S>> gm(gx.mutable_data(), rows, cols);
      auto gr = grad.matrix();
      gm = gr - (p.matrix().array().colwise() * gr.rowwise().sum().array()).matrix();
      g.accumulate(x, gx);
    };
  });
}

/// Sum of all elements as a shape-{1} scalar.
template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::constant({1}, a.flat().sum());
  return detail::finish_op("sum", std::move(out), {&a}, [&] {
    return [a](Graph<S>& g, const Tensor<S>& grad) {
      g.accumulate(a, Tensor<S>::constant(a.shape(), grad(0)));
    };
  });
}

/// Column means of a [R x C] matrix.
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw std::invalid_argument("mean_rows expects a rank-2 tensor");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out({cols});
  Eigen::Map<Eigen::RowVectorX<S>>(out.mutable_data(), cols) =
      x.matrix().colwise().sum() / S(rows);
  return detail::finish_op("mean_rows", std::move(out), {&x}, [&] {
    return [x](Graph<S>& g, const Tensor<S>& grad) {
      const int rows = x.dim(0), cols = x.dim(1);
      Tensor<S> gx(x.shape());
      Eigen::Map<MatrixX<S>>(gx.mutable_data(), rows, cols).rowwise() =
          Eigen::Map<const Eigen::RowVectorX<S>>(grad.data(), cols) / S(rows);
      g.accumulate(x, gx);
    };
  });
}

/// Mean over the width axis of a [H x W x C] map, yielding [H x C].
template <typename S>
Tensor<S> mean_width(const Tensor<S>& x) {
  if (x.rank() != 3) throw std::invalid_argument("mean_width expects a rank-3 tensor");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<S> out({h, c});
  Eigen::Map<MatrixX<S>> om(out.mutable_data(), h, c);
  om.setZero();
  for (int i = 0; i < h; ++i)
    om.row(i) = x.matrix(h * w, c).middleRows(static_cast<long>(i) * w, w).colwise().sum() / S(w);
  return detail::finish_op("mean_width", std::move(out), {&x}, [&] {
    return [x](Graph<S>& g, const Tensor<S>& grad) {
      const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
      Tensor<S> gx(x.shape());
      Eigen::Map<MatrixX<S>> gm(gx.mutable_data(), h * w, c);
      auto gr = grad.matrix();
      for (int i = 0; i < h; ++i)
        gm.middleRows(static_cast<long>(i) * w, w).rowwise() = gr.row(i) / S(w);
      g.accumulate(x, gx);
    };
  });
}

/// Same payload under a new shape of equal size.
template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw std::invalid_argument("reshape from " + shape_str(a.shape()) + " to " +
                                shape_str(shape) + " changes the element count");
  Tensor<S> out(shape, a.values());
  return detail::finish_op("reshape", std::move(out), {&a}, [&] {
    return [a](Graph<S>& g, const Tensor<S>& grad) {
      g.accumulate(a, Tensor<S>(a.shape(), grad.values()));
    };
  });
}

/// Horizontal concatenation of two matrices with equal row counts.
template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw std::invalid_argument("concat_cols: need matrices with equal row counts, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor<S> out({rows, ca + cb});
  Eigen::Map<MatrixX<S>> om(out.mutable_data(), rows, ca + cb);
  om.leftCols(ca) = a.matrix();
  om.rightCols(cb) = b.matrix();
  return detail::finish_op("concat_cols", std::move(out), {&a, &b}, [&] {
    return [a, b](Graph<S>& g, const Tensor<S>& grad) {
      const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
      auto gm = grad.matrix();
      Tensor<S> ga(a.shape());
      Eigen::Map<MatrixX<S>>(ga.mutable_data(), rows, ca) = gm.leftCols(ca);
      g.accumulate(a, ga);
      Tensor<S> gb(b.shape());
      Eigen::Map<MatrixX<S>>(gb.mutable_data(), rows, cb) = gm.rightCols(cb);
      g.accumulate(b, gb);
    };
  });
}

/// Columns [c0, c0+len) of a matrix.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int len) {
  if (x.rank() != 2) throw std::invalid_argument("slice_cols expects a rank-2 tensor");
  if (c0 < 0 || len < 1 || c0 + len > x.dim(1))
    throw std::invalid_argument("slice_cols: range out of bounds");
  const int rows = x.dim(0);
  Tensor<S> out({rows, len});
  Eigen::Map<MatrixX<S>>(out.mutable_data(), rows, len) = x.matrix().middleCols(c0, len);
  return detail::finish_op("slice_cols", std::move(out), {&x}, [&] {
    return [x, c0, len](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> gx(x.shape());
      Eigen::Map<MatrixX<S>>(gx.mutable_data(), x.dim(0), x.dim(1)).middleCols(c0, len) =
          grad.matrix();
      g.accumulate(x, gx);
    };
  });
}

/// Row r of a matrix as a vector.
template <typename S>
Tensor<S> slice_row(const Tensor<S>& x, int r) {
  if (x.rank() != 2) throw std::invalid_argument("slice_row expects a rank-2 tensor");
  if (r < 0 || r >= x.dim(0)) throw std::invalid_argument("slice_row: row out of bounds");
  const int cols = x.dim(1);
  Tensor<S> out({cols});
  std::copy_n(x.data() + static_cast<long>(r) * cols, cols, out.mutable_data());
  return detail::finish_op("slice_row", std::move(out), {&x}, [&] {
    return [x, r](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> gx(x.shape());
      std::copy_n(grad.data(), x.dim(1), gx.mutable_data() + static_cast<long>(r) * x.dim(1));
      g.accumulate(x, gx);
    };
  });
}

/// Stacks equal-length vectors into a [R x C] matrix.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const int cols = rows.front().dim(0);
  for (const auto& r : rows)
    if (r.rank() != 1 || r.dim(0) != cols)
      throw std::invalid_argument("stack_rows: rows must be equal-length vectors");
  const int n = static_cast<int>(rows.size());
  Tensor<S> out({n, cols});
  S* o = out.mutable_data();
  for (int r = 0; r < n; ++r) std::copy_n(rows[static_cast<std::size_t>(r)].data(), cols, o + static_cast<long>(r) * cols);

  Graph<S>* g = nullptr;
  for (const auto& r : rows) {
    if (!r.attached()) continue;
    if (g == nullptr)
      g = r.graph();
    else if (g != r.graph())
      throw std::logic_error("operands belong to different autodiff graphs");
  }
  if (!out.all_finite()) throw std::domain_error("stack_rows produced a non-finite value");
  if (g == nullptr) return out;
  return g->record(std::move(out), [rows](Graph<S>& gr, const Tensor<S>& grad) {
    const int cols = rows.front().dim(0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Tensor<S> gi({cols});
      std::copy_n(grad.data() + static_cast<long>(r) * cols, cols, gi.mutable_data());
      gr.accumulate(rows[r], gi);
    }
  });
}

/// Element i of a vector as a shape-{1} scalar.
template <typename S>
Tensor<S> pick(const Tensor<S>& v, int i) {
  if (v.rank() != 1) throw std::invalid_argument("pick expects a rank-1 tensor");
  if (i < 0 || i >= v.dim(0)) throw std::invalid_argument("pick: index out of bounds");
  Tensor<S> out = Tensor<S>::constant({1}, v(i));
  return detail::finish_op("pick", std::move(out), {&v}, [&] {
    return [v, i](Graph<S>& g, const Tensor<S>& grad) {
      Tensor<S> gv(v.shape());
      gv.mutable_data()[i] = grad(0);
      g.accumulate(v, gv);
    };
  });
}

}  // namespace rvafm
