#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "f2f/pipeline.hpp"

// Model inspection: spatial forecasting-error maps and the effective receptive
// field probe (input-gradient masks per input frame).

namespace f2f::analysis {

using autodiff::make_leaf;
using autodiff::Tape;
using autodiff::Var;

// --- MSE error map -----------------------------------------------------------

// Accumulates per-pixel squared error, averaged over channels and added pairs.
template <class T>
struct MseAccum {
  Tensor<double> sum;  // [h,w]
  int64_t terms = 0;   // channel-slices accumulated

  void add(const Tensor<T>& pred, const Tensor<T>& target) {
    F2F_CHECK(pred.shape == target.shape, "error map inputs must share a shape");
    F2F_CHECK(pred.rank() == 4 && pred.dim(0) == 1, "error map expects [1,D,h,w]");
    const int D = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
    if (terms == 0) sum = Tensor<double>({h, w});
    F2F_CHECK(sum.dim(0) == h && sum.dim(1) == w, "error map resolution varies");
    const int64_t hw = int64_t(h) * w;
    for (int c = 0; c < D; ++c) {
      const T* p = pred.ptr() + c * hw;
      const T* t = target.ptr() + c * hw;
      for (int64_t i = 0; i < hw; ++i) {
        const double d = double(p[i]) - double(t[i]);
        sum[i] += d * d;
      }
    }
    terms += D;
  }

  Tensor<double> mean() const {
    F2F_CHECK_DATA(terms > 0, "error map needs at least one clip");
    Tensor<double> out(sum.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = sum[i] / double(terms);
    return out;
  }
};

// Forecast-vs-target squared error in normalized feature space, averaged over
// channels and the given clips' primary tuples.
template <class T>
Tensor<double> mse_error_map(const model::F2FModel<T>& m, const cache::CacheReader& reader,
                             const pipe::FeatureNormalizer<T>& nz, const std::vector<int>& clips,
                             const pipe::TrainSpec& spec) {
  MseAccum<T> acc;
  for (pipe::Sample s : pipe::make_samples(clips, spec)) {
    Tape<T> tape;
    auto inputs = pipe::batch_input_leaves(tape, reader, nz, {s}, spec);
    auto target = pipe::batch_target_leaf(tape, reader, nz, {s}, spec);
    auto pred = pipe::autoregress(tape, m, inputs, spec.unroll_steps);
    acc.add(pred->value, target->value);
  }
  return acc.mean();
}

// Grayscale rendering scaled so the maximum error maps to white.
inline img::Gray8 error_map_image(const Tensor<double>& map) {
  F2F_CHECK(map.rank() == 2, "error map must be [h,w]");
  double peak = 0;
  for (int64_t i = 0; i < map.numel(); ++i) peak = std::max(peak, map[i]);
  img::Gray8 im = img::make_gray(map.dim(0), map.dim(1));
  for (int64_t i = 0; i < map.numel(); ++i) {
    const double v = peak > 0 ? map[i] / peak : 0.0;
    im.pix[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return im;
}

inline void write_error_map_csv(const std::string& path, const Tensor<double>& map) {
  F2F_CHECK(map.rank() == 2, "error map must be [h,w]");
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  for (int y = 0; y < map.dim(0); ++y) {
    for (int x = 0; x < map.dim(1); ++x) {
      if (x) f << ",";
      f << map.at2(y, x);
    }
    f << "\n";
  }
  if (!f) throw DataError("short write: " + path);
}

// --- effective receptive field probe -----------------------------------------

struct ErfReport {
  int probe_y = 0, probe_x = 0;  // output pixel whose score was probed
  int k = 0;                     // requested mask size (last frame, modulo ties)
  double threshold = 0;          // k-th largest |grad| in the last input frame
  bool flagged_zero = false;     // gradient vanished everywhere: masks are empty
  std::vector<Tensor<double>> magnitude;  // per input frame, [H,W] |d score / d image|
  std::vector<img::LabelMap> masks;       // per input frame, 1 where above threshold
};

inline int default_erf_k(int h, int w) {
  int k = static_cast<int>(std::lround(0.0015 * double(h) * double(w)));
  return std::max(k, 1);
}

// Gradient of the forecast's log-max-softmax score at one output pixel with
// respect to every input image, through extractor, normalizer, F2F model, and
// segmentation head. The mask threshold is the k-th largest magnitude in the
// most recent input frame (ties included) and is shared by all frames.
template <class T>
ErfReport erf_probe(const model::SingleFrameModel<T>& stub, const model::F2FModel<T>& m,
                    const pipe::FeatureNormalizer<T>& nz, const std::vector<img::Gray8>& frames,
                    int probe_y, int probe_x, int k = 0) {
  F2F_CHECK(static_cast<int>(frames.size()) == m.cfg.frames,
            "probe needs exactly the model's input frame count");
  const int H = frames[0].h, W = frames[0].w;
  for (const auto& f : frames)
    F2F_CHECK(f.h == H && f.w == W, "probe frames must share dimensions");
  F2F_CHECK(0 <= probe_y && probe_y < H && 0 <= probe_x && probe_x < W,
            "probe pixel outside the image");
  if (k <= 0) k = default_erf_k(H, W);
  F2F_CHECK(k <= H * W, "mask size exceeds the image");

  Tape<T> tape;
  std::vector<Var<T>> leaves;
  std::vector<Var<T>> window;
  for (const auto& f : frames) {
    auto leaf = make_leaf(img::to_tensor<T>(f), /*requires_grad=*/true);
    leaves.push_back(leaf);
    window.push_back(nz.apply_t(tape, model::extract_features(tape, stub, leaf)));
  }
  auto pred = model::forward_f2f(tape, m, window);
  auto logits = model::predict_from_features(tape, stub, nz.invert_t(tape, pred));
  auto score_map = ops::log_max_softmax(tape, logits);  // [1,H,W]
  F2F_CHECK(score_map->value.dim(1) == H && score_map->value.dim(2) == W,
            "head output resolution differs from the input image");
  auto score = ops::select_scalar(tape, score_map, int64_t(probe_y) * W + probe_x);
  tape.backward(score);

  ErfReport rep;
  rep.probe_y = probe_y;
  rep.probe_x = probe_x;
  rep.k = k;
  for (const auto& leaf : leaves) {
    Tensor<double> mag({H, W});
    for (int64_t i = 0; i < mag.numel(); ++i)
      mag[i] = std::abs(double(leaf->grad[i]));  // single channel: max == abs
    rep.magnitude.push_back(std::move(mag));
  }

  const Tensor<double>& last = rep.magnitude.back();
  std::vector<double> sorted(last.data.begin(), last.data.end());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                   std::greater<double>());
  rep.threshold = sorted[static_cast<size_t>(k - 1)];
  rep.flagged_zero = *std::max_element(last.data.begin(), last.data.end()) == 0;
  for (const auto& mag : rep.magnitude) {
    // Zero pixels never enter a mask, so a vanished gradient yields empty
    // masks rather than an all-ones mask from a zero threshold.
    img::LabelMap mask = img::make_labels(H, W);
    for (int64_t i = 0; i < mag.numel(); ++i)
      if (mag[i] >= rep.threshold && mag[i] > 0) mask.ids[static_cast<size_t>(i)] = 1;
    rep.masks.push_back(std::move(mask));
  }
  return rep;
}

// Centroid of the nonzero pixels; false when the mask is empty.
inline bool mask_centroid(const img::LabelMap& mask, double* cy, double* cx) {
  double sy = 0, sx = 0;
  int64_t n = 0;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      if (mask.ids[static_cast<size_t>(y) * mask.w + x] != 0) {
        sy += y;
        sx += x;
        ++n;
      }
  if (n == 0) return false;
  if (cy) *cy = sy / double(n);
  if (cx) *cx = sx / double(n);
  return true;
}

inline img::Gray8 mask_image(const img::LabelMap& mask) {
  img::Gray8 im = img::make_gray(mask.h, mask.w);
  for (size_t i = 0; i < mask.ids.size(); ++i) im.pix[i] = mask.ids[i] ? 255 : 0;
  return im;
}

inline img::Gray8 magnitude_image(const Tensor<double>& mag) { return error_map_image(mag); }

}  // namespace f2f::analysis
