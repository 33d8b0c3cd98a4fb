#pragma once

#include <cmath>
#include <vector>

#include "f2f/ops.hpp"

// Modulated deformable 2-D convolution. A companion 3x3 convolution over the
// same input predicts, per output pixel and kernel tap, a (dy, dx) sampling
// displacement and a pre-sigmoid modulation scalar; the main convolution then
// gathers its taps with bilinear interpolation at the displaced positions and
// scales each tap by sigmoid(modulation). The optimized path lowers the gather
// to im2col columns and runs the contraction through the kernel table.

namespace f2f::ops {

template <class T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

namespace detail {

template <class T>
void check_deform_shapes(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                         const Tensor<T>& off, const Tensor<T>& mod, int Ho, int Wo) {
  check_conv_shapes(in, w, b);
  const int K = w.dim(2) * w.dim(3);
  const Shape want_off = {in.dim(0), 2 * K, Ho, Wo};
  const Shape want_mod = {in.dim(0), K, Ho, Wo};
  if (off.shape != want_off)
    throw Error("offset field shape " + shape_str(off.shape) + " inconsistent, expected " +
                shape_str(want_off));
  if (mod.shape != want_mod)
    throw Error("modulation field shape " + shape_str(mod.shape) + " inconsistent, expected " +
                shape_str(want_mod));
}

// Gathers modulated bilinear samples into col[p*CinK + ci*K + k].
template <class T>
void deform_columns(const Tensor<T>& in, const Tensor<T>& off, const Tensor<T>& mod, int n,
                    int kh, int kw, const ConvSpec& cs, bool unit_mod, std::vector<T>& col) {
  const int Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Ho = off.dim(2), Wo = off.dim(3);
  const int K = kh * kw, CinK = Cin * K;
  const int64_t chan = int64_t(H) * W;
  const T* slab = &in.at4(n, 0, 0, 0);
  col.assign(static_cast<size_t>(int64_t(Ho) * Wo * CinK), T(0));
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      const int64_t p = int64_t(oy) * Wo + ox;
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const int k = ky * kw + kx;
          const T dy = off.at4(n, 2 * k, oy, ox);
          const T dx = off.at4(n, 2 * k + 1, oy, ox);
          const T m = unit_mod ? T(1) : sigmoid(mod.at4(n, k, oy, ox));
          const T y = T(oy * cs.stride - cs.pad + ky * cs.dilation) + dy;
          const T x = T(ox * cs.stride - cs.pad + kx * cs.dilation) + dx;
          const T yf = std::floor(y), xf = std::floor(x);
          const int y0 = int(yf), x0 = int(xf);
          const T fy = y - yf, fx = x - xf;
          const bool y0ok = y0 >= 0 && y0 < H, y1ok = y0 + 1 >= 0 && y0 + 1 < H;
          const bool x0ok = x0 >= 0 && x0 < W, x1ok = x0 + 1 >= 0 && x0 + 1 < W;
          if (!((y0ok || y1ok) && (x0ok || x1ok))) continue;
          const T w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
          const T w01 = (1 - fx) * fy, w11 = fx * fy;
          T* dst = &col[static_cast<size_t>(p * CinK + k)];
          const T* ch = slab;
          for (int ci = 0; ci < Cin; ++ci, ch += chan, dst += K) {
            T acc = 0;
            if (y0ok && x0ok) acc += w00 * ch[int64_t(y0) * W + x0];
            if (y0ok && x1ok) acc += w10 * ch[int64_t(y0) * W + x0 + 1];
            if (y1ok && x0ok) acc += w01 * ch[int64_t(y0 + 1) * W + x0];
            if (y1ok && x1ok) acc += w11 * ch[int64_t(y0 + 1) * W + x0 + 1];
            *dst = m * acc;
          }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> deform_conv2d_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                                const Tensor<T>& off, const Tensor<T>& mod, const ConvSpec& cs,
                                bool unit_mod = false) {
  const int kh = w.dim(2), kw = w.dim(3);
  const int Ho = conv_out_dim(in.dim(2), kh, cs), Wo = conv_out_dim(in.dim(3), kw, cs);
  detail::check_deform_shapes(in, w, b, off, mod, Ho, Wo);
  const int N = in.dim(0), Cout = w.dim(0);
  const int CinK = in.dim(1) * kh * kw;
  const int64_t P = int64_t(Ho) * Wo;

  Tensor<T> out({N, Cout, Ho, Wo});
  std::vector<T> col;
  for (int n = 0; n < N; ++n) {
    detail::deform_columns(in, off, mod, n, kh, kw, cs, unit_mod, col);
    for (int co = 0; co < Cout; ++co) {
      const T* wrow = &w.at4(co, 0, 0, 0);
      T* orow = &out.at4(n, co, 0, 0);
      for (int64_t p = 0; p < P; ++p)
        orow[p] = b[co] + kernels::dot(wrow, &col[static_cast<size_t>(p * CinK)],
                                       static_cast<size_t>(CinK));
    }
  }
  return out;
}

// Accumulates into whichever destinations are non-null.
template <class T>
void deform_conv2d_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& off,
                            const Tensor<T>& mod, const ConvSpec& cs, bool unit_mod,
                            const Tensor<T>& dout, Tensor<T>* din, Tensor<T>* dw, Tensor<T>* db,
                            Tensor<T>* doff, Tensor<T>* dmod) {
  const int N = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int Ho = dout.dim(2), Wo = dout.dim(3);
  const int K = kh * kw, CinK = Cin * K;
  const int64_t P = int64_t(Ho) * Wo;
  const int64_t chan = int64_t(H) * W;

  if (db)
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co)
        (*db)[co] += kernels::sum(&dout.at4(n, co, 0, 0), static_cast<size_t>(P));
  if (!din && !dw && !doff && !dmod) return;

  std::vector<T> col, dcol;
  for (int n = 0; n < N; ++n) {
    if (dw) {
      detail::deform_columns(in, off, mod, n, kh, kw, cs, unit_mod, col);
      for (int co = 0; co < Cout; ++co) {
        T* wrow = &dw->at4(co, 0, 0, 0);
        const T* g = &dout.at4(n, co, 0, 0);
        for (int64_t p = 0; p < P; ++p)
          if (g[p] != T(0))
            kernels::axpy(wrow, &col[static_cast<size_t>(p * CinK)], g[p],
                          static_cast<size_t>(CinK));
      }
    }
    if (!din && !doff && !dmod) continue;

    dcol.assign(static_cast<size_t>(P * CinK), T(0));
    for (int co = 0; co < Cout; ++co) {
      const T* wrow = &w.at4(co, 0, 0, 0);
      const T* g = &dout.at4(n, co, 0, 0);
      for (int64_t p = 0; p < P; ++p)
        if (g[p] != T(0))
          kernels::axpy(&dcol[static_cast<size_t>(p * CinK)], wrow, g[p],
                        static_cast<size_t>(CinK));
    }

    // Scatter column grads back through modulation and the bilinear kernel.
    const T* slab = &in.at4(n, 0, 0, 0);
    T* dslab = din ? &din->at4(n, 0, 0, 0) : nullptr;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        const int64_t p = int64_t(oy) * Wo + ox;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const int k = ky * kw + kx;
            const T dyo = off.at4(n, 2 * k, oy, ox);
            const T dxo = off.at4(n, 2 * k + 1, oy, ox);
            const T mraw = unit_mod ? T(0) : mod.at4(n, k, oy, ox);
            const T m = unit_mod ? T(1) : sigmoid(mraw);
            const T y = T(oy * cs.stride - cs.pad + ky * cs.dilation) + dyo;
            const T x = T(ox * cs.stride - cs.pad + kx * cs.dilation) + dxo;
            const T yf = std::floor(y), xf = std::floor(x);
            const int y0 = int(yf), x0 = int(xf);
            const T fy = y - yf, fx = x - xf;
            const bool y0ok = y0 >= 0 && y0 < H, y1ok = y0 + 1 >= 0 && y0 + 1 < H;
            const bool x0ok = x0 >= 0 && x0 < W, x1ok = x0 + 1 >= 0 && x0 + 1 < W;
            if (!((y0ok || y1ok) && (x0ok || x1ok))) continue;
            const T w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
            const T w01 = (1 - fx) * fy, w11 = fx * fy;
            const T* gcol = &dcol[static_cast<size_t>(p * CinK + k)];
            T dxacc = 0, dyacc = 0, dmraw = 0;
            const T* ch = slab;
            T* dch = dslab;
            for (int ci = 0; ci < Cin; ++ci, ch += chan, gcol += K) {
              const T g = *gcol;
              if (g != T(0)) {
                const T v00 = (y0ok && x0ok) ? ch[int64_t(y0) * W + x0] : T(0);
                const T v10 = (y0ok && x1ok) ? ch[int64_t(y0) * W + x0 + 1] : T(0);
                const T v01 = (y1ok && x0ok) ? ch[int64_t(y0 + 1) * W + x0] : T(0);
                const T v11 = (y1ok && x1ok) ? ch[int64_t(y0 + 1) * W + x0 + 1] : T(0);
                const T gm = g * m;
                if (dch) {
                  if (y0ok && x0ok) dch[int64_t(y0) * W + x0] += gm * w00;
                  if (y0ok && x1ok) dch[int64_t(y0) * W + x0 + 1] += gm * w10;
                  if (y1ok && x0ok) dch[int64_t(y0 + 1) * W + x0] += gm * w01;
                  if (y1ok && x1ok) dch[int64_t(y0 + 1) * W + x0 + 1] += gm * w11;
                }
                dxacc += gm * ((1 - fy) * (v10 - v00) + fy * (v11 - v01));
                dyacc += gm * ((1 - fx) * (v01 - v00) + fx * (v11 - v10));
                if (dmod && !unit_mod) {
                  const T sample = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11;
                  dmraw += g * sample * m * (1 - m);
                }
              }
              if (dch) dch += chan;
            }
            if (doff) {
              doff->at4(n, 2 * k, oy, ox) += dyacc;
              doff->at4(n, 2 * k + 1, oy, ox) += dxacc;
            }
            if (dmod && !unit_mod) dmod->at4(n, k, oy, ox) += dmraw;
          }
      }
  }
}

// Tape primitive. `unit_mod` is the test hook forcing modulation to 1 (its
// gradient is then identically zero and is not propagated).
template <class T>
Var<T> deform_conv2d(Tape<T>& tape, const Var<T>& in, const Var<T>& w, const Var<T>& b,
                     const Var<T>& off, const Var<T>& mod, ConvSpec cs, bool unit_mod = false) {
  Tensor<T> value = deform_conv2d_forward(in->value, w->value, b->value, off->value, mod->value,
                                          cs, unit_mod);
  return tape.emit(std::move(value), [in, w, b, off, mod, cs, unit_mod](Node<T>& out) {
    Tensor<T>* din = grad_dst(in);
    Tensor<T>* dwp = grad_dst(w);
    Tensor<T>* dbp = grad_dst(b);
    Tensor<T>* doffp = grad_dst(off);
    Tensor<T>* dmodp = grad_dst(mod);
    if (din || dwp || dbp || doffp || dmodp)
      deform_conv2d_backward(in->value, w->value, off->value, mod->value, cs, unit_mod, out.grad,
                             din, dwp, dbp, doffp, dmodp);
  });
}

// --- the layer bundle --------------------------------------------------------

// Offset/modulation companion output channel widths, per kernel tap: two
// displacement coordinates plus one modulation scalar.
inline int offset_channels(int kh, int kw) { return 3 * kh * kw; }

template <class T>
struct OffsetField {
  Var<T> offsets;     // [N, 2*kh*kw, H, W], (dy, dx) interleaved per tap
  Var<T> modulation;  // [N, kh*kw, H, W], pre-sigmoid
};

template <class T>
struct DeformConvLayer {
  Var<T> weight;         // [Cout, Cin, kh, kw]
  Var<T> bias;           // [Cout]
  Var<T> offset_weight;  // [3*kh*kw, Cin, kh, kw]
  Var<T> offset_bias;    // [3*kh*kw]

  int kh() const { return weight->value.dim(2); }
  int kw() const { return weight->value.dim(3); }
  int64_t parameter_count() const {
    return weight->value.numel() + bias->value.numel() + offset_weight->value.numel() +
           offset_bias->value.numel();
  }
};

// Main weights get fan-in uniform init; the offset branch starts at exactly
// zero so training begins from the plain-convolution behaviour (modulation
// sigmoid(0) = 0.5).
template <class T>
DeformConvLayer<T> make_deform_layer(int cin, int cout, int k, Rng& rng) {
  const T s = T(1) / std::sqrt(T(cin * k * k));
  DeformConvLayer<T> L;
  L.weight = autodiff::make_leaf(random_uniform<T>({cout, cin, k, k}, -s, s, rng), true);
  L.bias = autodiff::make_leaf(random_uniform<T>({cout}, -s, s, rng), true);
  L.offset_weight =
      autodiff::make_leaf(Tensor<T>::zeros({offset_channels(k, k), cin, k, k}), true);
  L.offset_bias = autodiff::make_leaf(Tensor<T>::zeros({offset_channels(k, k)}), true);
  return L;
}

// The companion convolution runs over the same input as the main one, stride 1
// with same padding; the first 2K channels are offsets, the last K modulation.
template <class T>
OffsetField<T> predict_offsets(Tape<T>& tape, const DeformConvLayer<T>& L, const Var<T>& in) {
  ConvSpec cs;
  cs.pad = same_padding(L.kh());
  Var<T> raw = conv2d(tape, in, L.offset_weight, L.offset_bias, cs);
  const int K = L.kh() * L.kw();
  OffsetField<T> field;
  field.offsets = slice_channels(tape, raw, 0, 2 * K);
  field.modulation = slice_channels(tape, raw, 2 * K, 3 * K);
  return field;
}

template <class T>
Var<T> deform_layer_apply(Tape<T>& tape, const DeformConvLayer<T>& L, const Var<T>& in,
                          bool unit_mod = false) {
  OffsetField<T> field = predict_offsets(tape, L, in);
  ConvSpec cs;
  cs.pad = same_padding(L.kh());
  return deform_conv2d(tape, in, L.weight, L.bias, field.offsets, field.modulation, cs, unit_mod);
}

}  // namespace f2f::ops
