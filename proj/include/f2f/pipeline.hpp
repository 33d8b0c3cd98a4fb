#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "f2f/clipgen.hpp"
#include "f2f/f2f_model.hpp"
#include "f2f/metrics.hpp"
#include "f2f/optim.hpp"
#include "f2f/seg_model.hpp"
#include "f2f/serialize.hpp"

// Orchestration of the training procedures: single-frame training, F2F L2
// training on cached features, cross-entropy fine-tuning with gradient
// averaging, autoregressive unrolling, and probability ensembling.

namespace f2f::pipe {

using autodiff::make_leaf;
using autodiff::Tape;
using autodiff::Var;

// --- specs -------------------------------------------------------------------

struct OptimSpec {
  enum class Kind { kAdam, kSgd };
  Kind kind = Kind::kAdam;
  double lr = 5e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static OptimSpec adam(double lr) {
    OptimSpec o;
    o.kind = Kind::kAdam;
    o.lr = lr;
    return o;
  }
  static OptimSpec sgd(double lr) {
    OptimSpec o;
    o.kind = Kind::kSgd;
    o.lr = lr;
    return o;
  }
};

struct TrainSpec {
  OptimSpec optim = OptimSpec::adam(5e-4);
  int epochs = 160;
  int batch_size = 12;
  int target_offset = 3;  // +3 (short-term) or +9 (mid-term) frames
  int frames = 4;         // T
  int frame_stride = 3;
  bool two_samples_per_clip = false;
  int unroll_steps = 1;  // >1: autoregressive unrolling during fine-tuning
  uint64_t seed = 0;

  // Earliest needed frame for the tuple ending at t, and the target frame.
  int horizon() const { return target_offset * unroll_steps; }

  void validate() const {
    F2F_CHECK(epochs >= 0 && batch_size >= 1, "bad epoch/batch settings");
    F2F_CHECK(target_offset == 3 || target_offset == 9, "target offset must be +3 or +9");
    F2F_CHECK(frames >= 1 && frame_stride >= 1, "bad frame tuple settings");
    F2F_CHECK(unroll_steps >= 1, "unroll steps must be >= 1");
    F2F_CHECK(frame_stride * (frames - 1) <= data::kObservedFrame,
              "input tuple reaches before frame 0");
    F2F_CHECK(data::kObservedFrame + horizon() < data::kClipFrames,
              "target frame beyond the clip");
  }

  // Defaults mirroring the published recipe.
  static TrainSpec l2_published() {
    TrainSpec s;
    s.optim = OptimSpec::adam(5e-4);
    s.epochs = 160;
    s.batch_size = 12;
    return s;
  }
  static TrainSpec finetune_published() {
    TrainSpec s;
    s.optim = OptimSpec::sgd(1e-4);
    s.epochs = 5;
    s.batch_size = 8;
    return s;
  }
};

// --- tuple sampling ----------------------------------------------------------

struct Sample {
  int clip = 0;
  int t = data::kObservedFrame;  // last input frame; target is t + horizon
};

inline std::vector<int> input_frames(int t, int frames, int stride) {
  std::vector<int> out;
  for (int i = frames - 1; i >= 0; --i) out.push_back(t - stride * i);  // oldest first
  return out;
}

// One sample per clip ending at t=10; with two_samples_per_clip, also the
// farthest other valid tuple position in the clip.
inline std::vector<Sample> make_samples(const std::vector<int>& clip_ids, const TrainSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  int second = -1;
  if (spec.two_samples_per_clip) {
    for (int t = data::kClipFrames - 1 - spec.horizon(); t >= 0; --t) {
      if (t == data::kObservedFrame) continue;
      if (t - spec.frame_stride * (spec.frames - 1) < 0) continue;
      second = t;
      break;
    }
  }
  for (int id : clip_ids) {
    out.push_back({id, data::kObservedFrame});
    if (second >= 0) out.push_back({id, second});
  }
  return out;
}

// Deterministic Fisher-Yates; std::shuffle is implementation-defined.
template <class V>
void shuffle(std::vector<V>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(0, int64_t(i) - 1))]);
}

// --- feature normalizer ------------------------------------------------------

template <class T>
struct FeatureNormalizer {
  Tensor<T> mean;   // [D]
  Tensor<T> stdev;  // [D], >= 0
  T epsilon = T(1e-6);

  int channels() const { return mean.dim(0); }

  // (x - mean) / (std + eps), channel-wise over [N,D,h,w] (in place).
  void apply(Tensor<T>& x) const {
    affine(x, true);
  }
  void invert(Tensor<T>& x) const {
    affine(x, false);
  }

  Var<T> apply_t(Tape<T>& tape, const Var<T>& x) const {
    return ops::affine_channels(tape, x, coeff_mul(), coeff_add());
  }
  Var<T> invert_t(Tape<T>& tape, const Var<T>& x) const {
    const int D = channels();
    Tensor<T> m({D}), a({D});
    for (int c = 0; c < D; ++c) {
      m[c] = stdev[c] + epsilon;
      a[c] = mean[c];
    }
    return ops::affine_channels(tape, x, m, a);
  }

 private:
  Tensor<T> coeff_mul() const {
    const int D = channels();
    Tensor<T> m({D});
    for (int c = 0; c < D; ++c) m[c] = T(1) / (stdev[c] + epsilon);
    return m;
  }
  Tensor<T> coeff_add() const {
    const int D = channels();
    Tensor<T> a({D});
    for (int c = 0; c < D; ++c) a[c] = -mean[c] / (stdev[c] + epsilon);
    return a;
  }
  void affine(Tensor<T>& x, bool forward) const {
    F2F_CHECK(x.rank() == 4 && x.dim(1) == channels(),
              "normalizer expects [N," + std::to_string(channels()) + ",h,w]");
    const int N = x.dim(0), D = x.dim(1);
    const int64_t hw = int64_t(x.dim(2)) * x.dim(3);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < D; ++c) {
        T* row = x.ptr() + (int64_t(n) * D + c) * hw;
        const T s = stdev[c] + epsilon, m = mean[c];
        if (forward)
          for (int64_t i = 0; i < hw; ++i) row[i] = (row[i] - m) / s;
        else
          for (int64_t i = 0; i < hw; ++i) row[i] = row[i] * s + m;
      }
  }
};

// Per-channel statistics over every cached record of the given clips.
template <class T>
FeatureNormalizer<T> fit_normalizer(const cache::CacheReader& reader,
                                    const std::vector<int>& clip_ids) {
  std::set<uint32_t> want(clip_ids.begin(), clip_ids.end());
  int D = -1;
  std::vector<double> sum, sumsq;
  int64_t count = 0;  // per-channel element count
  for (const auto& key : reader.keys()) {
    if (!want.count(key.clip)) continue;
    Tensor<float> feat = reader.read(key.clip, key.frame);
    F2F_CHECK_DATA(feat.rank() == 3, "cached feature must be [D,h,w]");
    if (D < 0) {
      D = feat.dim(0);
      sum.assign(static_cast<size_t>(D), 0.0);
      sumsq.assign(static_cast<size_t>(D), 0.0);
    }
    F2F_CHECK_DATA(feat.dim(0) == D, "cached feature channel count varies");
    const int64_t hw = int64_t(feat.dim(1)) * feat.dim(2);
    for (int c = 0; c < D; ++c) {
      const float* row = feat.ptr() + c * hw;
      for (int64_t i = 0; i < hw; ++i) {
        sum[static_cast<size_t>(c)] += row[i];
        sumsq[static_cast<size_t>(c)] += double(row[i]) * row[i];
      }
    }
    count += hw;
  }
  F2F_CHECK_DATA(count > 0, "cannot fit a normalizer on an empty training set");
  FeatureNormalizer<T> nz;
  nz.mean = Tensor<T>({D});
  nz.stdev = Tensor<T>({D});
  for (int c = 0; c < D; ++c) {
    const double m = sum[static_cast<size_t>(c)] / double(count);
    double var = sumsq[static_cast<size_t>(c)] / double(count) - m * m;
    if (var < 0) var = 0;  // rounding guard
    nz.mean[c] = T(m);
    nz.stdev[c] = T(std::sqrt(var));
  }
  return nz;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> normalizer_records(
    const FeatureNormalizer<T>& nz) {
  return {{"norm.mean", nz.mean}, {"norm.std", nz.stdev}};
}

template <class T>
FeatureNormalizer<T> normalizer_from_records(const std::map<std::string, Tensor<float>>& recs,
                                             const std::string& origin) {
  auto mi = recs.find("norm.mean");
  auto si = recs.find("norm.std");
  if (mi == recs.end() || si == recs.end())
    throw CheckpointError(origin + ": missing norm.mean/norm.std records");
  FeatureNormalizer<T> nz;
  nz.mean = Tensor<T>({mi->second.dim(0)});
  nz.stdev = Tensor<T>({si->second.dim(0)});
  for (int64_t i = 0; i < nz.mean.numel(); ++i) nz.mean[i] = T(mi->second[i]);
  for (int64_t i = 0; i < nz.stdev.numel(); ++i) nz.stdev[i] = T(si->second[i]);
  return nz;
}

// --- cache access ------------------------------------------------------------

template <class T>
Tensor<T> cached_features(const cache::CacheReader& reader, int clip, int frame) {
  Tensor<float> f = reader.read(static_cast<uint32_t>(clip), static_cast<uint16_t>(frame));
  F2F_CHECK_DATA(f.rank() == 3, "cached feature must be [D,h,w]");
  Tensor<T> t;
  t.shape = f.shape;
  t.data.resize(f.data.size());
  for (size_t i = 0; i < f.data.size(); ++i) t.data[i] = T(f.data[i]);
  return t;
}

// Stacks B rank-3 tensors into [B,D,h,w].
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  F2F_CHECK(!items.empty(), "empty batch");
  const Shape& s = items[0].shape;
  Tensor<T> out({static_cast<int>(items.size()), s[0], s[1], s[2]});
  const int64_t per = items[0].numel();
  for (size_t b = 0; b < items.size(); ++b) {
    F2F_CHECK(items[b].shape == s, "batch items disagree in shape");
    std::copy(items[b].data.begin(), items[b].data.end(), out.data.begin() + int64_t(b) * per);
  }
  return out;
}

// --- loss curves -------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double loss = 0;
};

using EpochFn = std::function<void(const EpochLog&)>;

inline void write_loss_csv(const std::string& path, const std::vector<EpochLog>& curve) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << "epoch,loss\n";
  for (const auto& e : curve) f << e.epoch << "," << e.loss << "\n";
  if (!f) throw DataError("short write: " + path);
}

// --- optimizer dispatch ------------------------------------------------------

template <class T>
class Optimizer {
 public:
  Optimizer(std::vector<Var<T>> params, const OptimSpec& spec) {
    if (spec.kind == OptimSpec::Kind::kAdam)
      adam_.emplace(std::move(params), T(spec.lr), T(spec.beta1), T(spec.beta2), T(spec.eps));
    else
      sgd_.emplace(std::move(params), T(spec.lr));
  }
  void step() {
    if (adam_) adam_->step();
    if (sgd_) sgd_->step();
  }
  void zero_grad() {
    if (adam_) adam_->zero_grad();
    if (sgd_) sgd_->zero_grad();
  }

 private:
  std::optional<opt::Adam<T>> adam_;
  std::optional<opt::Sgd<T>> sgd_;
};

// --- single-frame training ---------------------------------------------------

inline const std::vector<int> kSingleTrainFrames = {4, 10, 19};

template <class T>
std::vector<EpochLog> train_single(model::SingleFrameModel<T>& m, const data::Dataset& ds,
                                   const std::vector<int>& clip_ids, const TrainSpec& spec,
                                   const EpochFn& on_epoch = {}) {
  F2F_CHECK(!clip_ids.empty(), "no training clips");
  struct Item {
    int clip, frame;
  };
  std::vector<Item> items;
  for (int id : clip_ids)
    for (int f : kSingleTrainFrames) items.push_back({id, f});

  Optimizer<T> optim(m.parameters(), spec.optim);
  std::vector<EpochLog> curve;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng rng(derive_seed(derive_seed(spec.seed, 0x73655045 /* "sePE" */), uint64_t(epoch)));
    shuffle(items, rng);
    double loss_sum = 0;
    for (size_t at = 0; at < items.size(); at += size_t(spec.batch_size)) {
      const size_t end = std::min(items.size(), at + size_t(spec.batch_size));
      std::vector<Tensor<T>> frames;
      std::vector<int32_t> labels;
      for (size_t i = at; i < end; ++i) {
        img::Gray8 im = data::load_frame(ds, items[i].clip, items[i].frame);
        Tensor<T> t = img::to_tensor<T>(im);
        frames.push_back(Tensor<T>({1, im.h, im.w}, std::move(t.data)));
        img::LabelMap lm = data::load_labels(ds, items[i].clip, items[i].frame);
        labels.insert(labels.end(), lm.ids.begin(), lm.ids.end());
      }
      Tape<T> tape;
      auto in = make_leaf(stack_batch(frames));
      auto logits = model::forward_single(tape, m, in);
      auto loss = ops::cross_entropy(tape, logits, labels);
      optim.zero_grad();
      tape.backward(loss);
      optim.step();
      loss_sum += double(loss->value[0]) * double(end - at);
    }
    curve.push_back({epoch, loss_sum / double(items.size())});
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

// Per-clip single-frame prediction, accumulated against ground truth.
template <class T>
img::LabelMap predict_single(const model::SingleFrameModel<T>& m, const img::Gray8& frame) {
  Tape<T> tape;
  auto logits = model::forward_single(tape, m, make_leaf(img::to_tensor<T>(frame)));
  img::LabelMap lm = img::make_labels(frame.h, frame.w);
  lm.ids = ops::argmax_channel(logits->value);
  return lm;
}

template <class T>
metric::ConfusionMatrix eval_single(const model::SingleFrameModel<T>& m, const data::Dataset& ds,
                                    const std::vector<int>& clip_ids, int frame) {
  metric::ConfusionMatrix cm(m.cfg.classes);
  for (int id : clip_ids) {
    img::LabelMap pred = predict_single(m, data::load_frame(ds, id, frame));
    metric::accumulate(cm, pred, data::load_labels(ds, id, frame));
  }
  return cm;
}

// --- feature extraction ------------------------------------------------------

template <class T>
void extract_to_cache(const model::SingleFrameModel<T>& m, const data::Dataset& ds,
                      const std::string& cache_path) {
  cache::CacheWriter writer(cache_path);
  for (int id = 0; id < ds.clip_count; ++id) {
    for (int frame = 0; frame < data::kClipFrames; ++frame) {
      img::Gray8 im = data::load_frame(ds, id, frame);
      Tape<T> tape;
      auto feats = model::extract_features(tape, m, make_leaf(img::to_tensor<T>(im)));
      const Tensor<T>& v = feats->value;
      Tensor<float> rec({v.dim(1), v.dim(2), v.dim(3)});
      for (int64_t i = 0; i < v.numel(); ++i) rec[i] = float(v[i]);
      writer.add(static_cast<uint32_t>(id), static_cast<uint16_t>(frame), rec);
    }
  }
  writer.close();
}

// --- F2F forward helpers -----------------------------------------------------

// Normalized input leaves for the tuple ending at t (batch of samples).
template <class T>
std::vector<Var<T>> batch_input_leaves(Tape<T>&, const cache::CacheReader& reader,
                                       const FeatureNormalizer<T>& nz,
                                       const std::vector<Sample>& batch, const TrainSpec& spec) {
  std::vector<Var<T>> leaves;
  for (int f = spec.frames - 1; f >= 0; --f) {  // oldest first
    std::vector<Tensor<T>> items;
    for (const Sample& s : batch)
      items.push_back(cached_features<T>(reader, s.clip, s.t - spec.frame_stride * f));
    Tensor<T> stacked = stack_batch(items);
    nz.apply(stacked);
    leaves.push_back(make_leaf(std::move(stacked)));
  }
  return leaves;
}

template <class T>
Var<T> batch_target_leaf(Tape<T>&, const cache::CacheReader& reader,
                         const FeatureNormalizer<T>& nz, const std::vector<Sample>& batch,
                         const TrainSpec& spec) {
  std::vector<Tensor<T>> items;
  for (const Sample& s : batch)
    items.push_back(cached_features<T>(reader, s.clip, s.t + spec.horizon()));
  Tensor<T> stacked = stack_batch(items);
  nz.apply(stacked);
  return make_leaf(std::move(stacked));
}

// Applies the model recurrently: each step appends the forecast and drops the
// oldest input. steps=1 is exactly forward_f2f.
template <class T>
Var<T> autoregress(Tape<T>& tape, const model::F2FModel<T>& m, std::vector<Var<T>> window,
                   int steps) {
  if (steps < 1) throw UsageError("autoregression needs steps >= 1");
  Var<T> pred;
  for (int s = 0; s < steps; ++s) {
    pred = model::forward_f2f(tape, m, window);
    if (window.size() > 1) window.erase(window.begin());
    else window.clear();
    window.push_back(pred);
  }
  return pred;
}

// --- F2F L2 training ---------------------------------------------------------

template <class T>
std::vector<EpochLog> train_f2f_l2(model::F2FModel<T>& m, const cache::CacheReader& reader,
                                   const std::vector<int>& train_clips,
                                   const FeatureNormalizer<T>& nz, const TrainSpec& spec,
                                   const EpochFn& on_epoch = {}) {
  spec.validate();
  F2F_CHECK(spec.unroll_steps == 1, "L2 pre-training is single-step");
  std::vector<Sample> samples = make_samples(train_clips, spec);
  Optimizer<T> optim(m.parameters(), spec.optim);
  std::vector<EpochLog> curve;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng rng(derive_seed(derive_seed(spec.seed, 0x6c325045 /* "l2PE" */), uint64_t(epoch)));
    shuffle(samples, rng);
    double loss_sum = 0;
    for (size_t at = 0; at < samples.size(); at += size_t(spec.batch_size)) {
      const size_t end = std::min(samples.size(), at + size_t(spec.batch_size));
      const std::vector<Sample> batch(samples.begin() + int64_t(at),
                                      samples.begin() + int64_t(end));
      Tape<T> tape;
      auto inputs = batch_input_leaves(tape, reader, nz, batch, spec);
      auto target = batch_target_leaf(tape, reader, nz, batch, spec);
      auto pred = model::forward_f2f(tape, m, inputs);
      auto loss = ops::l2_loss(tape, pred, target);
      optim.zero_grad();
      tape.backward(loss);
      optim.step();
      loss_sum += double(loss->value[0]) * double(batch.size());
    }
    curve.push_back({epoch, loss_sum / double(samples.size())});
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

// Mean L2 over the given clips' tuples (normalized feature space).
template <class T>
double eval_f2f_l2(const model::F2FModel<T>& m, const cache::CacheReader& reader,
                   const std::vector<int>& clips, const FeatureNormalizer<T>& nz,
                   const TrainSpec& spec) {
  std::vector<Sample> samples = make_samples(clips, spec);
  F2F_CHECK(!samples.empty(), "no evaluation samples");
  double sum = 0;
  for (const Sample& s : samples) {
    Tape<T> tape;
    auto inputs = batch_input_leaves(tape, reader, nz, {s}, spec);
    auto target = batch_target_leaf(tape, reader, nz, {s}, spec);
    auto pred = (spec.unroll_steps == 1)
                    ? model::forward_f2f(tape, m, inputs)
                    : autoregress(tape, m, inputs, spec.unroll_steps);
    sum += double(ops::l2_loss(tape, pred, target)->value[0]);
  }
  return sum / double(samples.size());
}

// --- fine-tuning with gradient averaging -------------------------------------

template <class T>
struct GradCapture {
  // Per-F2F-parameter gradients from the first processed batch.
  std::vector<Tensor<T>> g_l2;      // after the L2 backward pass
  std::vector<Tensor<T>> g_total;   // after both passes (g_l2 + g_ce)
  std::vector<Tensor<T>> applied;   // what the optimizer consumed
  bool captured = false;
};

template <class T>
struct FinetuneOptions {
  bool head_detached = false;        // test hook: skip the CE pass entirely
  GradCapture<T>* capture = nullptr; // observe the first batch's gradients
};

// One stage of the fine-tuning recipe: F2F parameters get (g_L2 + g_CE)/2,
// the upsampling head gets pure CE gradients, the extractor stays frozen
// (features come from the cache and never re-enter the graph). With
// spec.unroll_steps > 1 the forward pass is the unrolled recurrence and both
// losses attach to the final step only.
template <class T>
std::vector<EpochLog> finetune_f2f(model::F2FModel<T>& f2f, model::SingleFrameModel<T>& stub,
                                   const cache::CacheReader& reader, const data::Dataset& ds,
                                   const std::vector<int>& train_clips,
                                   const FeatureNormalizer<T>& nz, const TrainSpec& spec,
                                   const FinetuneOptions<T>& options = {},
                                   const EpochFn& on_epoch = {}) {
  spec.validate();
  std::vector<Sample> samples = make_samples(train_clips, spec);
  Optimizer<T> optim_f2f(f2f.parameters(), spec.optim);
  Optimizer<T> optim_head(stub.head_parameters(), spec.optim);
  std::vector<EpochLog> curve;
  bool first_batch = true;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng rng(derive_seed(derive_seed(spec.seed, 0x66745045 /* "ftPE" */), uint64_t(epoch)));
    shuffle(samples, rng);
    double loss_sum = 0;
    for (size_t at = 0; at < samples.size(); at += size_t(spec.batch_size)) {
      const size_t end = std::min(samples.size(), at + size_t(spec.batch_size));
      const std::vector<Sample> batch(samples.begin() + int64_t(at),
                                      samples.begin() + int64_t(end));
      std::vector<int32_t> labels;
      for (const Sample& s : batch) {
        img::LabelMap lm = data::load_labels(ds, s.clip, s.t + spec.horizon());
        labels.insert(labels.end(), lm.ids.begin(), lm.ids.end());
      }

      Tape<T> tape;
      auto inputs = batch_input_leaves(tape, reader, nz, batch, spec);
      auto target = batch_target_leaf(tape, reader, nz, batch, spec);
      auto pred = (spec.unroll_steps == 1)
                      ? model::forward_f2f(tape, f2f, inputs)
                      : autoregress(tape, f2f, inputs, spec.unroll_steps);
      auto l2 = ops::l2_loss(tape, pred, target);

      optim_f2f.zero_grad();
      optim_head.zero_grad();
      tape.backward(l2);  // leaves now hold g_L2 (head untouched)
      if (options.capture && first_batch)
        for (const auto& p : f2f.parameters()) options.capture->g_l2.push_back(p->grad);

      double ce_val = 0;
      if (!options.head_detached) {
        // Leaf grads survive the second backward, so after it the F2F leaves
        // hold g_L2 + g_CE while the head holds pure g_CE.
        auto raw = nz.invert_t(tape, pred);
        auto logits = model::predict_from_features(tape, stub, raw);
        auto ce = ops::cross_entropy(tape, logits, labels);
        tape.backward(ce);
        ce_val = double(ce->value[0]);
      }
      if (options.capture && first_batch)
        for (const auto& p : f2f.parameters()) options.capture->g_total.push_back(p->grad);

      opt::scale_grads(f2f.parameters(), T(0.5));  // mean of the two gradients
      if (options.capture && first_batch) {
        for (const auto& p : f2f.parameters()) options.capture->applied.push_back(p->grad);
        options.capture->captured = true;
        first_batch = false;
      }
      optim_f2f.step();
      if (!options.head_detached) optim_head.step();
      loss_sum += (0.5 * double(l2->value[0]) + ce_val) * double(batch.size());
    }
    curve.push_back({epoch, loss_sum / double(samples.size())});
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

// --- ensembling --------------------------------------------------------------

// Eq.-style blend of two per-pixel class distributions.
template <class T>
Tensor<T> ensemble(const Tensor<T>& p_current, const Tensor<T>& p_forecast, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw UsageError("ensemble weight must lie in [0,1]");
  F2F_CHECK(p_current.shape == p_forecast.shape, "ensemble inputs must have equal shapes");
  Tensor<T> out(p_current.shape);
  const T l = T(lambda), r = T(1) - T(lambda);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = l * p_current[i] + r * p_forecast[i];
  return out;
}

// --- forecasting inference ---------------------------------------------------

// Denormalized forecast features [1,D,h,w] for one clip tuple.
template <class T>
Tensor<T> forecast_features(const model::F2FModel<T>& m, const cache::CacheReader& reader,
                            const FeatureNormalizer<T>& nz, int clip, int t, int steps,
                            int frame_stride = 3) {
  Tape<T> tape;
  std::vector<Var<T>> window;
  for (int f : input_frames(t, m.cfg.frames, frame_stride)) {
    Tensor<T> feat = cached_features<T>(reader, clip, f);
    Tensor<T> item({1, feat.dim(0), feat.dim(1), feat.dim(2)}, std::move(feat.data));
    nz.apply(item);
    window.push_back(make_leaf(std::move(item)));
  }
  auto pred = autoregress(tape, m, window, steps);
  Tensor<T> out = pred->value;
  nz.invert(out);
  return out;
}

template <class T>
img::LabelMap decode_features(const model::SingleFrameModel<T>& stub, const Tensor<T>& feats) {
  Tape<T> tape;
  auto logits = model::predict_from_features(tape, stub, make_leaf(feats));
  img::LabelMap lm =
      img::make_labels(logits->value.dim(2), logits->value.dim(3));
  lm.ids = ops::argmax_channel(logits->value);
  return lm;
}

template <class T>
img::LabelMap forecast_labels(const model::F2FModel<T>& m, const model::SingleFrameModel<T>& stub,
                              const cache::CacheReader& reader, const FeatureNormalizer<T>& nz,
                              int clip, int t, int steps, int frame_stride = 3) {
  return decode_features(stub, forecast_features(m, reader, nz, clip, t, steps, frame_stride));
}

// --- benchmark confusion matrices -------------------------------------------

// Oracle: single-frame model applied directly to the target frame.
template <class T>
metric::ConfusionMatrix cm_oracle(const model::SingleFrameModel<T>& stub,
                                  const data::Dataset& ds, const std::vector<int>& clips,
                                  int target_frame) {
  return eval_single(stub, ds, clips, target_frame);
}

// Copy baseline: segment frame t, score against labels at the target frame.
template <class T>
metric::ConfusionMatrix cm_copy(const model::SingleFrameModel<T>& stub, const data::Dataset& ds,
                                const std::vector<int>& clips, int t, int target_frame) {
  metric::ConfusionMatrix cm(stub.cfg.classes);
  for (int id : clips) {
    img::LabelMap pred = predict_single(stub, data::load_frame(ds, id, t));
    metric::accumulate(cm, pred, data::load_labels(ds, id, target_frame));
  }
  return cm;
}

template <class T>
metric::ConfusionMatrix cm_forecast(const model::F2FModel<T>& m,
                                    const model::SingleFrameModel<T>& stub,
                                    const cache::CacheReader& reader,
                                    const FeatureNormalizer<T>& nz, const data::Dataset& ds,
                                    const std::vector<int>& clips, int t, int steps,
                                    int target_frame, int frame_stride = 3) {
  metric::ConfusionMatrix cm(stub.cfg.classes);
  for (int id : clips) {
    img::LabelMap pred = forecast_labels(m, stub, reader, nz, id, t, steps, frame_stride);
    metric::accumulate(cm, pred, data::load_labels(ds, id, target_frame));
  }
  return cm;
}

// Ensemble of the single-frame prediction on the (now current) target frame
// with the forecast made from the past tuple.
template <class T>
metric::ConfusionMatrix cm_ensemble(const model::F2FModel<T>& m,
                                    const model::SingleFrameModel<T>& stub,
                                    const cache::CacheReader& reader,
                                    const FeatureNormalizer<T>& nz, const data::Dataset& ds,
                                    const std::vector<int>& clips, int t, int steps,
                                    int target_frame, double lambda, int frame_stride = 3) {
  metric::ConfusionMatrix cm(stub.cfg.classes);
  for (int id : clips) {
    Tape<T> tape;
    auto cur_logits =
        model::forward_single(tape, stub, make_leaf(img::to_tensor<T>(data::load_frame(ds, id, target_frame))));
    Tensor<T> p_cur = ops::softmax_plain(cur_logits->value, 1);
    Tensor<T> feats = forecast_features(m, reader, nz, id, t, steps, frame_stride);
    auto fore_logits = model::predict_from_features(tape, stub, make_leaf(feats));
    Tensor<T> p_fore = ops::softmax_plain(fore_logits->value, 1);
    Tensor<T> blend = ensemble(p_cur, p_fore, lambda);
    img::LabelMap pred = img::make_labels(blend.dim(2), blend.dim(3));
    pred.ids = ops::argmax_channel(blend);
    metric::accumulate(cm, pred, data::load_labels(ds, id, target_frame));
  }
  return cm;
}

}  // namespace f2f::pipe
