#pragma once

#include <string>
#include <vector>

#include "f2f/f2f_model.hpp"

// Desk-scale single-frame segmentation model: a strided conv encoder (the
// feature extractor whose output F2F forecasts), a pyramid-pooling context
// layer, and a plain upsampling decoder with no lateral connections. The same
// weights serve oracle prediction, the copy baseline, and feature extraction.

namespace f2f::model {

struct StubConfig {
  int downsample = 8;   // s: total encoder stride, a power of 2
  int feat_dim = 64;    // D: extractor output channels
  int classes = 6;      // C
  std::vector<int> spp_grids = {1, 2, 4};
  std::vector<int> moving_class_ids = {3, 4, 5};
  int head_width = 64;
  int in_channels = 1;

  void validate() const {
    F2F_CHECK(downsample >= 2 && (downsample & (downsample - 1)) == 0,
              "downsample must be a power of 2");
    F2F_CHECK(feat_dim > 0 && head_width > 0 && in_channels > 0, "widths must be positive");
    F2F_CHECK(classes >= 2, "need at least 2 classes");
    F2F_CHECK(!spp_grids.empty(), "need at least one pooling grid");
    for (int id : moving_class_ids)
      F2F_CHECK(0 <= id && id < classes, "moving class id outside [0,C)");
  }

  int stages() const {
    int n = 0;
    for (int s = downsample; s > 1; s /= 2) ++n;
    return n;
  }
};

template <class T>
struct SingleFrameModel {
  StubConfig cfg;
  std::vector<ConvLayer<T>> encoder;  // stride-2 3x3 stages, cfg.stages() of them
  ConvLayer<T> spp_proj;              // 3x3 over [feats | pooled contexts]
  std::vector<ConvLayer<T>> decoder;  // 3x3 after each x2 upsampling
  ConvLayer<T> classifier;            // 1x1 -> C

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    auto push = [&out](const std::string& p, const ConvLayer<T>& c) {
      out.push_back({p + ".weight", c.weight});
      out.push_back({p + ".bias", c.bias});
    };
    for (size_t i = 0; i < encoder.size(); ++i) push("enc" + std::to_string(i + 1), encoder[i]);
    push("spp", spp_proj);
    for (size_t i = 0; i < decoder.size(); ++i) push("dec" + std::to_string(i + 1), decoder[i]);
    push("cls", classifier);
    return out;
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    for (auto& np : named_parameters()) out.push_back(np.var);
    return out;
  }

  // The parameters updated by cross-entropy during fine-tuning: everything
  // downstream of the extractor output.
  std::vector<Var<T>> head_parameters() const {
    std::vector<Var<T>> out = {spp_proj.weight, spp_proj.bias};
    for (auto& d : decoder) {
      out.push_back(d.weight);
      out.push_back(d.bias);
    }
    out.push_back(classifier.weight);
    out.push_back(classifier.bias);
    return out;
  }

  std::vector<Var<T>> extractor_parameters() const {
    std::vector<Var<T>> out;
    for (auto& e : encoder) {
      out.push_back(e.weight);
      out.push_back(e.bias);
    }
    return out;
  }

  int64_t count_parameters() const {
    int64_t n = 0;
    for (auto& np : named_parameters()) n += np.var->value.numel();
    return n;
  }
};

template <class T>
SingleFrameModel<T> build_stub(const StubConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x73747562 /* "stub" */));
  SingleFrameModel<T> m;
  m.cfg = cfg;
  const int stages = cfg.stages();
  int cin = cfg.in_channels;
  for (int i = 0; i < stages; ++i) {
    const int cout = (i == stages - 1) ? cfg.feat_dim
                                       : std::max(8, cfg.feat_dim >> (stages - 1 - i));
    m.encoder.push_back(make_conv_layer<T>(cin, cout, 3, 1, rng));
    cin = cout;
  }
  const int ctx_in = cfg.feat_dim * (1 + static_cast<int>(cfg.spp_grids.size()));
  m.spp_proj = make_conv_layer<T>(ctx_in, cfg.head_width, 3, 1, rng);
  int dw = cfg.head_width;
  for (int i = 0; i < stages; ++i) {
    const int cout = std::max(8, dw / 2);
    m.decoder.push_back(make_conv_layer<T>(dw, cout, 3, 1, rng));
    dw = cout;
  }
  m.classifier = make_conv_layer<T>(dw, cfg.classes, 1, 1, rng);
  return m;
}

// frames: [N, in_channels, H, W] with H, W divisible by the total stride.
template <class T>
Var<T> extract_features(Tape<T>& tape, const SingleFrameModel<T>& m, const Var<T>& frames) {
  const Tensor<T>& v = frames->value;
  F2F_CHECK(v.rank() == 4 && v.dim(1) == m.cfg.in_channels,
            "frame batch must be [N," + std::to_string(m.cfg.in_channels) + ",H,W], got " +
                shape_str(v.shape));
  F2F_CHECK(v.dim(2) % m.cfg.downsample == 0 && v.dim(3) % m.cfg.downsample == 0,
            "frame dims " + shape_str(v.shape) + " not divisible by stride " +
                std::to_string(m.cfg.downsample));
  Var<T> x = frames;
  for (const auto& stage : m.encoder) {
    ops::ConvSpec cs;
    cs.stride = 2;
    cs.pad = 1;
    x = ops::relu(tape, ops::conv2d(tape, x, stage.weight, stage.bias, cs));
  }
  return x;
}

// feats: [N, D, h, w] -> logits [N, C, h*s, w*s].
template <class T>
Var<T> predict_from_features(Tape<T>& tape, const SingleFrameModel<T>& m, const Var<T>& feats) {
  const Tensor<T>& v = feats->value;
  F2F_CHECK(v.rank() == 4 && v.dim(1) == m.cfg.feat_dim,
            "features must be [N," + std::to_string(m.cfg.feat_dim) + ",h,w], got " +
                shape_str(v.shape));
  const int h = v.dim(2), w = v.dim(3);
  std::vector<Var<T>> ctx = {feats};
  for (int g : m.cfg.spp_grids) {
    const int gh = std::min(g, h), gw = std::min(g, w);
    ctx.push_back(ops::upsample_nearest(tape, ops::avg_pool_grid(tape, feats, gh, gw), h, w));
  }
  Var<T> x = ops::concat_channels(tape, ctx);
  ops::ConvSpec same;
  same.pad = 1;
  x = ops::relu(tape, ops::conv2d(tape, x, m.spp_proj.weight, m.spp_proj.bias, same));
  int th = h, tw = w;
  for (const auto& stage : m.decoder) {
    th *= 2;
    tw *= 2;
    x = ops::upsample_nearest(tape, x, th, tw);
    x = ops::relu(tape, ops::conv2d(tape, x, stage.weight, stage.bias, same));
  }
  ops::ConvSpec one;
  return ops::conv2d(tape, x, m.classifier.weight, m.classifier.bias, one);
}

template <class T>
Var<T> forward_single(Tape<T>& tape, const SingleFrameModel<T>& m, const Var<T>& frames) {
  return predict_from_features(tape, m, extract_features(tape, m, frames));
}

// The copy baseline: segment frame t, reuse the labels for t+dt.
template <class T>
std::vector<int32_t> copy_last_segmentation(const SingleFrameModel<T>& m,
                                            const Tensor<T>& last_frame) {
  Tape<T> tape;
  auto logits = forward_single(tape, m, autodiff::make_leaf(last_frame));
  return ops::argmax_channel(logits->value);
}

}  // namespace f2f::model
