#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "f2f/kernels.hpp"
#include "f2f/tape.hpp"

// Tensor operations: raw forward/backward routines over plain tensors plus
// tape-recorded wrappers. Raw routines are what the scalar/SIMD equivalence
// and naive-oracle tests target; the wrappers add the pull closures.
//
// All image-like ops use NCHW layout.

namespace f2f::ops {

using autodiff::grad_dst;
using autodiff::Node;
using autodiff::Tape;
using autodiff::Var;

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int pad = 0;
};

inline int same_padding(int kernel, int dilation = 1) {
  F2F_CHECK(kernel % 2 == 1, "same padding needs an odd kernel size");
  return dilation * (kernel - 1) / 2;
}

inline int conv_out_dim(int in, int kernel, const ConvSpec& cs) {
  int eff = cs.dilation * (kernel - 1) + 1;
  int out = (in + 2 * cs.pad - eff) / cs.stride + 1;
  F2F_CHECK(out > 0, "convolution output dimension is empty");
  return out;
}

namespace detail {

template <class T>
void check_conv_shapes(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  F2F_CHECK(in.rank() == 4, "conv2d input must be NCHW, got " + shape_str(in.shape));
  F2F_CHECK(w.rank() == 4, "conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape));
  if (in.dim(1) != w.dim(1))
    throw Error("conv2d channel mismatch: input " + shape_str(in.shape) + " has Cin=" +
                std::to_string(in.dim(1)) + " but weight " + shape_str(w.shape) + " expects Cin=" +
                std::to_string(w.dim(1)));
  F2F_CHECK(b.numel() == w.dim(0), "conv2d bias length must equal Cout");
}

}  // namespace detail

// Cross-correlation, zero padding. The stride-1 path runs whole output rows
// through the axpy/dot kernels; strided convolutions fall back to per-pixel
// loops.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& cs) {
  detail::check_conv_shapes(in, w, b);
  const int N = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int Ho = conv_out_dim(H, kh, cs), Wo = conv_out_dim(W, kw, cs);
  const int s = cs.stride, d = cs.dilation, p = cs.pad;

  Tensor<T> out({N, Cout, Ho, Wo});
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      T* base = &out.at4(n, co, 0, 0);
      const T bv = b[co];
      for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i) base[i] = bv;
      for (int ci = 0; ci < Cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = w.at4(co, ci, ky, kx);
            if (wv == T(0)) continue;
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * s - p + ky * d;
              if (iy < 0 || iy >= H) continue;
              if (s == 1) {
                const int shift = kx * d - p;
                const int lo = std::max(0, -shift);
                const int hi = std::min(Wo, W - shift);
                if (hi > lo)
                  kernels::axpy(&out.at4(n, co, oy, lo), &in.at4(n, ci, iy, lo + shift), wv,
                                static_cast<size_t>(hi - lo));
              } else {
                for (int ox = 0; ox < Wo; ++ox) {
                  const int ix = ox * s - p + kx * d;
                  if (ix >= 0 && ix < W) out.at4(n, co, oy, ox) += wv * in.at4(n, ci, iy, ix);
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates into whichever of din/dw/db is non-null.
template <class T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& dout,
                     const ConvSpec& cs, Tensor<T>* din, Tensor<T>* dw, Tensor<T>* db) {
  const int N = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int Ho = dout.dim(2), Wo = dout.dim(3);
  const int s = cs.stride, d = cs.dilation, p = cs.pad;

  if (db) {
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co)
        (*db)[co] += kernels::sum(&dout.at4(n, co, 0, 0), static_cast<size_t>(int64_t(Ho) * Wo));
  }
  if (!din && !dw) return;

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      for (int ci = 0; ci < Cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = w.at4(co, ci, ky, kx);
            T wacc = 0;
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * s - p + ky * d;
              if (iy < 0 || iy >= H) continue;
              if (s == 1) {
                const int shift = kx * d - p;
                const int lo = std::max(0, -shift);
                const int hi = std::min(Wo, W - shift);
                if (hi <= lo) continue;
                const size_t len = static_cast<size_t>(hi - lo);
                if (din && wv != T(0))
                  kernels::axpy(&din->at4(n, ci, iy, lo + shift), &dout.at4(n, co, oy, lo), wv, len);
                if (dw)
                  wacc += kernels::dot(&dout.at4(n, co, oy, lo), &in.at4(n, ci, iy, lo + shift), len);
              } else {
                for (int ox = 0; ox < Wo; ++ox) {
                  const int ix = ox * s - p + kx * d;
                  if (ix < 0 || ix >= W) continue;
                  const T g = dout.at4(n, co, oy, ox);
                  if (din) din->at4(n, ci, iy, ix) += wv * g;
                  if (dw) wacc += g * in.at4(n, ci, iy, ix);
                }
              }
            }
            if (dw) dw->at4(co, ci, ky, kx) += wacc;
          }
        }
      }
    }
  }
}

template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& in, const Var<T>& w, const Var<T>& b, ConvSpec cs) {
  Tensor<T> value = conv2d_forward(in->value, w->value, b->value, cs);
  return tape.emit(std::move(value), [in, w, b, cs](Node<T>& out) {
    Tensor<T>* din = grad_dst(in);
    Tensor<T>* dw = grad_dst(w);
    Tensor<T>* db = grad_dst(b);
    if (din || dw || db) conv2d_backward(in->value, w->value, out.grad, cs, din, dw, db);
  });
}

// conv2d with dilation 2 and matching same padding; the explicit model
// variant used in the convolution ablation.
template <class T>
Var<T> dilated_conv2d(Tape<T>& tape, const Var<T>& in, const Var<T>& w, const Var<T>& b,
                      int dilation = 2) {
  ConvSpec cs;
  cs.dilation = dilation;
  cs.pad = same_padding(w->value.dim(2), dilation);
  return conv2d(tape, in, w, b, cs);
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> value(x->value.shape);
  kernels::relu(value.ptr(), x->value.ptr(), value.data.size());
  return tape.emit(std::move(value), [x](Node<T>& out) {
    if (Tensor<T>* dx = grad_dst(x))
      kernels::relu_grad(dx->ptr(), x->value.ptr(), out.grad.ptr(), dx->data.size());
  });
}

// Concatenation along the channel axis of NCHW tensors.
template <class T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  F2F_CHECK(!parts.empty(), "concat of zero tensors");
  const Tensor<T>& first = parts[0]->value;
  F2F_CHECK(first.rank() == 4, "concat expects NCHW tensors");
  int ctotal = 0;
  for (const auto& p : parts) {
    F2F_CHECK(p->value.rank() == 4 && p->value.dim(0) == first.dim(0) &&
                  p->value.dim(2) == first.dim(2) && p->value.dim(3) == first.dim(3),
              "concat operand shape mismatch: " + shape_str(p->value.shape) + " vs " +
                  shape_str(first.shape));
    ctotal += p->value.dim(1);
  }
  const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<T> value({N, ctotal, H, W});
  for (int n = 0; n < N; ++n) {
    T* dst = &value.at4(n, 0, 0, 0);
    int64_t coff = 0;
    for (const auto& p : parts) {
      const int64_t block = p->value.dim(1) * hw;
      std::memcpy(dst + coff, &p->value.at4(n, 0, 0, 0), sizeof(T) * static_cast<size_t>(block));
      coff += block;
    }
  }
  return tape.emit(std::move(value), [parts, hw](Node<T>& out) {
    const int N = out.value.dim(0);
    for (int n = 0; n < N; ++n) {
      int64_t coff = 0;
      for (const auto& p : parts) {
        const int64_t block = p->value.dim(1) * hw;
        if (Tensor<T>* dp = grad_dst(p))
          kernels::add(&dp->at4(n, 0, 0, 0), &out.grad.at4(n, 0, 0, 0) + coff,
                       static_cast<size_t>(block));
        coff += block;
      }
    }
  });
}

// Channel slice [c0, c1) of an NCHW tensor.
template <class T>
Var<T> slice_channels(Tape<T>& tape, const Var<T>& x, int c0, int c1) {
  const Tensor<T>& v = x->value;
  F2F_CHECK(v.rank() == 4, "slice expects NCHW");
  F2F_CHECK(0 <= c0 && c0 < c1 && c1 <= v.dim(1), "channel slice out of range");
  const int N = v.dim(0), H = v.dim(2), W = v.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<T> value({N, c1 - c0, H, W});
  for (int n = 0; n < N; ++n)
    std::memcpy(&value.at4(n, 0, 0, 0), &v.at4(n, c0, 0, 0),
                sizeof(T) * static_cast<size_t>((c1 - c0) * hw));
  return tape.emit(std::move(value), [x, c0, c1, hw](Node<T>& out) {
    if (Tensor<T>* dx = grad_dst(x)) {
      const int N = out.value.dim(0);
      for (int n = 0; n < N; ++n)
        kernels::add(&dx->at4(n, c0, 0, 0), &out.grad.at4(n, 0, 0, 0),
                     static_cast<size_t>((c1 - c0) * hw));
    }
  });
}

// Adaptive average pooling to a gh x gw grid (cell r covers rows
// [r*H/gh, (r+1)*H/gh), likewise for columns).
template <class T>
Var<T> avg_pool_grid(Tape<T>& tape, const Var<T>& x, int gh, int gw) {
  const Tensor<T>& v = x->value;
  F2F_CHECK(v.rank() == 4, "pool expects NCHW");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  F2F_CHECK(gh >= 1 && gw >= 1 && gh <= H && gw <= W, "pool grid larger than input");
  Tensor<T> value({N, C, gh, gw});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int gy = 0; gy < gh; ++gy) {
        const int y0 = gy * H / gh, y1 = (gy + 1) * H / gh;
        for (int gx = 0; gx < gw; ++gx) {
          const int x0 = gx * W / gw, x1 = (gx + 1) * W / gw;
          T acc = 0;
          for (int y = y0; y < y1; ++y)
            acc += kernels::sum(&v.at4(n, c, y, x0), static_cast<size_t>(x1 - x0));
          value.at4(n, c, gy, gx) = acc / static_cast<T>((y1 - y0) * (x1 - x0));
        }
      }
  return tape.emit(std::move(value), [x, gh, gw](Node<T>& out) {
    Tensor<T>* dx = grad_dst(x);
    if (!dx) return;
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int gy = 0; gy < gh; ++gy) {
          const int y0 = gy * H / gh, y1 = (gy + 1) * H / gh;
          for (int gx = 0; gx < gw; ++gx) {
            const int x0 = gx * W / gw, x1 = (gx + 1) * W / gw;
            const T g = out.grad.at4(n, c, gy, gx) / static_cast<T>((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
              for (int xx = x0; xx < x1; ++xx) dx->at4(n, c, y, xx) += g;
          }
        }
  });
}

// Nearest-neighbour resize to (th, tw); source index floor(y*H/th).
template <class T>
Var<T> upsample_nearest(Tape<T>& tape, const Var<T>& x, int th, int tw) {
  const Tensor<T>& v = x->value;
  F2F_CHECK(v.rank() == 4, "upsample expects NCHW");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  F2F_CHECK(th >= 1 && tw >= 1, "bad upsample target");
  Tensor<T> value({N, C, th, tw});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < th; ++y) {
        const int sy = y * H / th;
        for (int xx = 0; xx < tw; ++xx)
          value.at4(n, c, y, xx) = v.at4(n, c, sy, xx * W / tw);
      }
  return tape.emit(std::move(value), [x, th, tw](Node<T>& out) {
    Tensor<T>* dx = grad_dst(x);
    if (!dx) return;
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < th; ++y) {
          const int sy = y * H / th;
          for (int xx = 0; xx < tw; ++xx)
            dx->at4(n, c, sy, xx * W / tw) += out.grad.at4(n, c, y, xx);
        }
  });
}

// Softmax along `axis`; rows sum to 1.
template <class T>
Var<T> softmax(Tape<T>& tape, const Var<T>& x, int axis) {
  const Tensor<T>& v = x->value;
  F2F_CHECK(0 <= axis && axis < v.rank(), "softmax axis out of range");
  const int A = v.dim(axis);
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < v.rank(); ++i) inner *= v.dim(i);
  for (int i = 0; i < axis; ++i) outer *= v.dim(i);

  Tensor<T> value(v.shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * A * inner + in;
      T m = v[base];
      for (int a = 1; a < A; ++a) m = std::max(m, v[base + a * inner]);
      T z = 0;
      for (int a = 0; a < A; ++a) {
        const T e = std::exp(v[base + a * inner] - m);
        value[base + a * inner] = e;
        z += e;
      }
      for (int a = 0; a < A; ++a) value[base + a * inner] /= z;
    }
  return tape.emit(std::move(value), [x, A, inner, outer](Node<T>& out) {
    Tensor<T>* dx = grad_dst(x);
    if (!dx) return;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * A * inner + in;
        T dotpg = 0;
        for (int a = 0; a < A; ++a)
          dotpg += out.value[base + a * inner] * out.grad[base + a * inner];
        for (int a = 0; a < A; ++a) {
          const int64_t i = base + a * inner;
          (*dx)[i] += out.value[i] * (out.grad[i] - dotpg);
        }
      }
  });
}

// log of the maximum softmax probability per pixel: [N,C,H,W] -> [N,H,W].
// Argmax ties resolve to the lowest class id.
template <class T>
Var<T> log_max_softmax(Tape<T>& tape, const Var<T>& logits) {
  const Tensor<T>& v = logits->value;
  F2F_CHECK(v.rank() == 4, "log_max_softmax expects NCHW logits");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<T> value({N, H, W});
  std::vector<int> arg(static_cast<size_t>(N * hw));
  for (int n = 0; n < N; ++n)
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t base = (int64_t(n) * C) * hw + p;
      int best = 0;
      T m = v[base];
      for (int c = 1; c < C; ++c) {
        const T z = v[base + c * hw];
        if (z > m) { m = z; best = c; }
      }
      T lse = 0;
      for (int c = 0; c < C; ++c) lse += std::exp(v[base + c * hw] - m);
      value[n * hw + p] = -std::log(lse);  // z_max - (m + log sum) with z_max == m
      arg[static_cast<size_t>(n * hw + p)] = best;
    }
  return tape.emit(std::move(value), [logits, arg, C, hw](Node<T>& out) {
    Tensor<T>* dx = grad_dst(logits);
    if (!dx) return;
    const Tensor<T>& v = logits->value;
    const int N = v.dim(0);
    for (int n = 0; n < N; ++n)
      for (int64_t p = 0; p < hw; ++p) {
        const T g = out.grad[n * hw + p];
        if (g == T(0)) continue;
        const int64_t base = (int64_t(n) * C) * hw + p;
        const int best = arg[static_cast<size_t>(n * hw + p)];
        T m = v[base + best * hw];
        T z = 0;
        for (int c = 0; c < C; ++c) z += std::exp(v[base + c * hw] - m);
        for (int c = 0; c < C; ++c) {
          const T pc = std::exp(v[base + c * hw] - m) / z;
          (*dx)[base + c * hw] += g * ((c == best ? T(1) : T(0)) - pc);
        }
      }
  });
}

// Mean squared element difference.
template <class T>
Var<T> l2_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target) {
  F2F_CHECK(pred->value.same_shape(target->value),
            "l2_loss shape mismatch: " + shape_str(pred->value.shape) + " vs " +
                shape_str(target->value.shape));
  const int64_t n = pred->value.numel();
  F2F_CHECK(n > 0, "l2_loss of empty tensors");
  T mse = kernels::sqdiff(pred->value.ptr(), target->value.ptr(), static_cast<size_t>(n)) /
          static_cast<T>(n);
  return tape.emit(Tensor<T>::scalar(mse), [pred, target, n](Node<T>& out) {
    const T g = out.grad[0] * T(2) / static_cast<T>(n);
    Tensor<T>* dp = grad_dst(pred);
    Tensor<T>* dt = grad_dst(target);
    for (int64_t i = 0; i < n; ++i) {
      const T d = pred->value[i] - target->value[i];
      if (dp) (*dp)[i] += g * d;
      if (dt) (*dt)[i] -= g * d;
    }
  });
}

inline constexpr int32_t kNoIgnore = -1;

// Mean over non-ignored pixels of -log softmax(logits)[label].
// labels has N*H*W entries; entries equal to ignore_id are skipped.
template <class T>
Var<T> cross_entropy(Tape<T>& tape, const Var<T>& logits, const std::vector<int32_t>& labels,
                     int32_t ignore_id = kNoIgnore) {
  const Tensor<T>& v = logits->value;
  F2F_CHECK(v.rank() == 4, "cross_entropy expects NCHW logits");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  const int64_t hw = int64_t(H) * W;
  F2F_CHECK(static_cast<int64_t>(labels.size()) == N * hw,
            "label count does not match logits spatial size");
  int64_t scored = 0;
  T loss = 0;
  for (int n = 0; n < N; ++n)
    for (int64_t p = 0; p < hw; ++p) {
      const int32_t lab = labels[static_cast<size_t>(n * hw + p)];
      if (lab == ignore_id) continue;
      F2F_CHECK(0 <= lab && lab < C, "label " + std::to_string(lab) + " outside [0," +
                                          std::to_string(C) + ")");
      const int64_t base = (int64_t(n) * C) * hw + p;
      T m = v[base];
      for (int c = 1; c < C; ++c) m = std::max(m, v[base + c * hw]);
      T z = 0;
      for (int c = 0; c < C; ++c) z += std::exp(v[base + c * hw] - m);
      loss += (m + std::log(z)) - v[base + lab * hw];
      ++scored;
    }
  if (scored == 0) throw DataError("cross_entropy: every label is ignored, mean undefined");
  loss /= static_cast<T>(scored);
  return tape.emit(Tensor<T>::scalar(loss), [logits, labels, ignore_id, scored, C,
                                             hw](Node<T>& out) {
    Tensor<T>* dx = grad_dst(logits);
    if (!dx) return;
    const Tensor<T>& v = logits->value;
    const int N = v.dim(0);
    const T g = out.grad[0] / static_cast<T>(scored);
    for (int n = 0; n < N; ++n)
      for (int64_t p = 0; p < hw; ++p) {
        const int32_t lab = labels[static_cast<size_t>(n * hw + p)];
        if (lab == ignore_id) continue;
        const int64_t base = (int64_t(n) * C) * hw + p;
        T m = v[base];
        for (int c = 1; c < C; ++c) m = std::max(m, v[base + c * hw]);
        T z = 0;
        for (int c = 0; c < C; ++c) z += std::exp(v[base + c * hw] - m);
        for (int c = 0; c < C; ++c) {
          const T pc = std::exp(v[base + c * hw] - m) / z;
          (*dx)[base + c * hw] += g * (pc - (c == lab ? T(1) : T(0)));
        }
      }
  });
}

template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  T s = kernels::sum(x->value.ptr(), x->value.data.size());
  return tape.emit(Tensor<T>::scalar(s), [x](Node<T>& out) {
    if (Tensor<T>* dx = grad_dst(x)) {
      const T g = out.grad[0];
      for (auto& e : dx->data) e += g;
    }
  });
}

template <class T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  F2F_CHECK(a->value.same_shape(b->value), "elementwise mul shape mismatch");
  Tensor<T> value(a->value.shape);
  for (int64_t i = 0; i < value.numel(); ++i) value[i] = a->value[i] * b->value[i];
  return tape.emit(std::move(value), [a, b](Node<T>& out) {
    Tensor<T>* da = grad_dst(a);
    Tensor<T>* db = grad_dst(b);
    for (int64_t i = 0; i < out.value.numel(); ++i) {
      if (da) (*da)[i] += out.grad[i] * b->value[i];
      if (db) (*db)[i] += out.grad[i] * a->value[i];
    }
  });
}

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  F2F_CHECK(a->value.same_shape(b->value), "elementwise add shape mismatch");
  Tensor<T> value = a->value;
  kernels::add(value.ptr(), b->value.ptr(), value.data.size());
  return tape.emit(std::move(value), [a, b](Node<T>& out) {
    if (Tensor<T>* da = grad_dst(a)) kernels::add(da->ptr(), out.grad.ptr(), da->data.size());
    if (Tensor<T>* db = grad_dst(b)) kernels::add(db->ptr(), out.grad.ptr(), db->data.size());
  });
}

// y[n,c,:,:] = x[n,c,:,:] * mul_c[c] + add_c[c] with constant (non-learned)
// coefficients; carries the feature normalizer inside the tape.
template <class T>
Var<T> affine_channels(Tape<T>& tape, const Var<T>& x, const Tensor<T>& mul_c,
                       const Tensor<T>& add_c) {
  F2F_CHECK(x->value.rank() == 4, "affine_channels expects NCHW");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int64_t hw = int64_t(x->value.dim(2)) * x->value.dim(3);
  F2F_CHECK(mul_c.numel() == C && add_c.numel() == C,
            "affine_channels coefficient length must equal C");
  Tensor<T> value = x->value;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T* row = value.ptr() + (int64_t(n) * C + c) * hw;
      const T m = mul_c[c], a = add_c[c];
      for (int64_t i = 0; i < hw; ++i) row[i] = row[i] * m + a;
    }
  Tensor<T> mul_copy = mul_c;
  return tape.emit(std::move(value), [x, mul_copy, N, C, hw](Node<T>& out) {
    if (Tensor<T>* dx = grad_dst(x)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const int64_t base = (int64_t(n) * C + c) * hw;
          kernels::axpy(dx->ptr() + base, out.grad.ptr() + base, mul_copy[c],
                        static_cast<size_t>(hw));
        }
    }
  });
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T c) {
  Tensor<T> value = x->value;
  kernels::scale(value.ptr(), c, value.data.size());
  return tape.emit(std::move(value), [x, c](Node<T>& out) {
    if (Tensor<T>* dx = grad_dst(x))
      kernels::axpy(dx->ptr(), out.grad.ptr(), c, dx->data.size());
  });
}

template <class T>
Var<T> select_scalar(Tape<T>& tape, const Var<T>& x, int64_t flat_index) {
  F2F_CHECK(0 <= flat_index && flat_index < x->value.numel(), "select index out of range");
  return tape.emit(Tensor<T>::scalar(x->value[flat_index]), [x, flat_index](Node<T>& out) {
    if (Tensor<T>* dx = grad_dst(x)) (*dx)[flat_index] += out.grad[0];
  });
}

// --- bilinear sampling -------------------------------------------------------

// 4-corner bilinear interpolation of map[C,H,W] at real (x, y). Corners that
// fall outside [0,H-1]x[0,W-1] contribute zero (zero-padding semantics; the
// clamp-to-edge alternative is deliberately not used).
template <class T>
void bilinear_sample_raw(const Tensor<T>& map, T x, T y, T* out) {
  const int C = map.dim(0), H = map.dim(1), W = map.dim(2);
  const T xf = std::floor(x), yf = std::floor(y);
  const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
  const T fx = x - xf, fy = y - yf;
  const bool x0ok = x0 >= 0 && x0 < W, x1ok = x0 + 1 >= 0 && x0 + 1 < W;
  const bool y0ok = y0 >= 0 && y0 < H, y1ok = y0 + 1 >= 0 && y0 + 1 < H;
  const T w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
  const T w01 = (1 - fx) * fy, w11 = fx * fy;
  for (int c = 0; c < C; ++c) {
    T acc = 0;
    if (y0ok && x0ok) acc += w00 * map.at3(c, y0, x0);
    if (y0ok && x1ok) acc += w10 * map.at3(c, y0, x0 + 1);
    if (y1ok && x0ok) acc += w01 * map.at3(c, y0 + 1, x0);
    if (y1ok && x1ok) acc += w11 * map.at3(c, y0 + 1, x0 + 1);
    out[c] = acc;
  }
}

// Accumulates d(sample)/d(map) and d(sample)/d(x,y) for upstream grads g[C].
template <class T>
void bilinear_sample_grad(const Tensor<T>& map, T x, T y, const T* g, Tensor<T>* dmap, T* dx,
                          T* dy) {
  const int C = map.dim(0), H = map.dim(1), W = map.dim(2);
  const T xf = std::floor(x), yf = std::floor(y);
  const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
  const T fx = x - xf, fy = y - yf;
  const bool x0ok = x0 >= 0 && x0 < W, x1ok = x0 + 1 >= 0 && x0 + 1 < W;
  const bool y0ok = y0 >= 0 && y0 < H, y1ok = y0 + 1 >= 0 && y0 + 1 < H;
  const T w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
  const T w01 = (1 - fx) * fy, w11 = fx * fy;
  for (int c = 0; c < C; ++c) {
    const T gc = g[c];
    if (gc == T(0)) continue;
    const T v00 = (y0ok && x0ok) ? map.at3(c, y0, x0) : T(0);
    const T v10 = (y0ok && x1ok) ? map.at3(c, y0, x0 + 1) : T(0);
    const T v01 = (y1ok && x0ok) ? map.at3(c, y0 + 1, x0) : T(0);
    const T v11 = (y1ok && x1ok) ? map.at3(c, y0 + 1, x0 + 1) : T(0);
    if (dmap) {
      if (y0ok && x0ok) dmap->at3(c, y0, x0) += gc * w00;
      if (y0ok && x1ok) dmap->at3(c, y0, x0 + 1) += gc * w10;
      if (y1ok && x0ok) dmap->at3(c, y0 + 1, x0) += gc * w01;
      if (y1ok && x1ok) dmap->at3(c, y0 + 1, x0 + 1) += gc * w11;
    }
    if (dx) *dx += gc * ((1 - fy) * (v10 - v00) + fy * (v11 - v01));
    if (dy) *dy += gc * ((1 - fx) * (v01 - v00) + fx * (v11 - v10));
  }
}

// Tape op: map [C,H,W], coords [2] = (x, y) -> [C]. Differentiable w.r.t.
// the map and the coordinates (the latter discontinuous at integer grid
// lines, as the bilinear kernel is).
template <class T>
Var<T> bilinear_sample(Tape<T>& tape, const Var<T>& map, const Var<T>& coords) {
  F2F_CHECK(map->value.rank() == 3, "bilinear_sample map must be [C,H,W]");
  F2F_CHECK(coords->value.numel() == 2, "bilinear_sample coords must be (x, y)");
  const int C = map->value.dim(0);
  Tensor<T> value({C});
  bilinear_sample_raw(map->value, coords->value[0], coords->value[1], value.ptr());
  return tape.emit(std::move(value), [map, coords](Node<T>& out) {
    Tensor<T>* dmap = grad_dst(map);
    Tensor<T>* dc = grad_dst(coords);
    if (!dmap && !dc) return;
    T dx = 0, dy = 0;
    bilinear_sample_grad(map->value, coords->value[0], coords->value[1], out.grad.ptr(), dmap,
                         dc ? &dx : nullptr, dc ? &dy : nullptr);
    if (dc) {
      (*dc)[0] += dx;
      (*dc)[1] += dy;
    }
  });
}

// --- inference-side helpers (no tape) ---------------------------------------

// Per-pixel argmax over the class axis; ties take the lowest class id.
template <class T>
std::vector<int32_t> argmax_channel(const Tensor<T>& logits) {
  F2F_CHECK(logits.rank() == 4, "argmax expects NCHW logits");
  const int N = logits.dim(0), C = logits.dim(1);
  const int64_t hw = int64_t(logits.dim(2)) * logits.dim(3);
  std::vector<int32_t> out(static_cast<size_t>(N * hw));
  for (int n = 0; n < N; ++n)
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t base = (int64_t(n) * C) * hw + p;
      int best = 0;
      T m = logits[base];
      for (int c = 1; c < C; ++c)
        if (logits[base + c * hw] > m) { m = logits[base + c * hw]; best = c; }
      out[static_cast<size_t>(n * hw + p)] = best;
    }
  return out;
}

template <class T>
Tensor<T> softmax_plain(const Tensor<T>& x, int axis) {
  Tape<T> tape;
  auto v = autodiff::make_leaf(x, false);
  return softmax(tape, v, axis)->value;
}

}  // namespace f2f::ops
