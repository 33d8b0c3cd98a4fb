#pragma once

#include <string>
#include <variant>
#include <vector>

#include "f2f/deform_conv.hpp"

// The F2F (feature-to-feature) forecasting family. Layer 1 is always a
// regular 1x1 convolution blending the T concatenated input frames down to
// the hidden width; layers 2..N are 3x3 convolutions of the chosen variant
// (plain, 2x dilated, or modulated deformable), the last one projecting back
// to the backbone feature width D. ReLU between layers, none after the last.

namespace f2f::model {

using autodiff::Tape;
using autodiff::Var;

enum class Variant { kPlain, kDilated, kDeformable };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kPlain: return "conv";
    case Variant::kDilated: return "dilated";
    case Variant::kDeformable: return "deform";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "conv" || s == "plain") return Variant::kPlain;
  if (s == "dilated") return Variant::kDilated;
  if (s == "deform" || s == "deformable") return Variant::kDeformable;
  throw UsageError("unknown F2F variant '" + s + "' (want conv|dilated|deform)");
}

struct F2FConfig {
  Variant variant = Variant::kDeformable;
  int n_layers = 8;            // N, counting the 1x1 blend layer
  int frames = 4;              // T
  int channels_per_frame = 0;  // D, matches the feature extractor
  int hidden = 128;
  int dilation = 2;            // dilated variant only
  bool final_relu = false;

  void validate() const {
    F2F_CHECK(n_layers >= 2, "F2F needs at least 2 layers (1x1 blend + output)");
    F2F_CHECK(frames >= 1, "F2F needs at least one input frame");
    F2F_CHECK(hidden > 0 && channels_per_frame > 0, "F2F widths must be positive");
    F2F_CHECK(dilation >= 1, "dilation must be >= 1");
  }
};

template <class T>
struct ConvLayer {
  Var<T> weight;  // [Cout, Cin, k, k]
  Var<T> bias;    // [Cout]
  int dilation = 1;
};

template <class T>
using F2FLayer = std::variant<ConvLayer<T>, ops::DeformConvLayer<T>>;

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <class T>
struct F2FModel {
  F2FConfig cfg;
  std::vector<F2FLayer<T>> layers;

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i + 1) + ".";
      if (const auto* c = std::get_if<ConvLayer<T>>(&layers[i])) {
        out.push_back({p + "weight", c->weight});
        out.push_back({p + "bias", c->bias});
      } else {
        const auto& d = std::get<ops::DeformConvLayer<T>>(layers[i]);
        out.push_back({p + "weight", d.weight});
        out.push_back({p + "bias", d.bias});
        out.push_back({p + "offset_weight", d.offset_weight});
        out.push_back({p + "offset_bias", d.offset_bias});
      }
    }
    return out;
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    for (auto& np : named_parameters()) out.push_back(np.var);
    return out;
  }

  int64_t count_parameters() const {
    int64_t n = 0;
    for (auto& np : named_parameters()) n += np.var->value.numel();
    return n;
  }
};

template <class T>
ConvLayer<T> make_conv_layer(int cin, int cout, int k, int dilation, Rng& rng) {
  const T s = T(1) / std::sqrt(T(cin * k * k));
  ConvLayer<T> L;
  L.weight = autodiff::make_leaf(random_uniform<T>({cout, cin, k, k}, -s, s, rng), true);
  L.bias = autodiff::make_leaf(random_uniform<T>({cout}, -s, s, rng), true);
  L.dilation = dilation;
  return L;
}

template <class T>
F2FModel<T> build_f2f(const F2FConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x66326600 /* "f2f" */));
  F2FModel<T> m;
  m.cfg = cfg;
  const int tin = cfg.frames * cfg.channels_per_frame;
  m.layers.push_back(make_conv_layer<T>(tin, cfg.hidden, 1, 1, rng));
  for (int i = 1; i < cfg.n_layers; ++i) {
    const int cin = cfg.hidden;
    const int cout = (i == cfg.n_layers - 1) ? cfg.channels_per_frame : cfg.hidden;
    switch (cfg.variant) {
      case Variant::kPlain:
        m.layers.push_back(make_conv_layer<T>(cin, cout, 3, 1, rng));
        break;
      case Variant::kDilated:
        m.layers.push_back(make_conv_layer<T>(cin, cout, 3, cfg.dilation, rng));
        break;
      case Variant::kDeformable:
        m.layers.push_back(ops::make_deform_layer<T>(cin, cout, 3, rng));
        break;
    }
  }
  return m;
}

template <class T>
Var<T> apply_f2f_layer(Tape<T>& tape, const F2FLayer<T>& layer, const Var<T>& x,
                       bool unit_mod = false) {
  if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
    ops::ConvSpec cs;
    cs.dilation = c->dilation;
    cs.pad = ops::same_padding(c->weight->value.dim(2), c->dilation);
    return ops::conv2d(tape, x, c->weight, c->bias, cs);
  }
  return ops::deform_layer_apply(tape, std::get<ops::DeformConvLayer<T>>(layer), x, unit_mod);
}

// inputs: T feature tensors [N, D, h, w], oldest first.
template <class T>
Var<T> forward_f2f(Tape<T>& tape, const F2FModel<T>& m, const std::vector<Var<T>>& inputs,
                   bool unit_mod = false) {
  F2F_CHECK(static_cast<int>(inputs.size()) == m.cfg.frames,
            "F2F expects " + std::to_string(m.cfg.frames) + " input frames, got " +
                std::to_string(inputs.size()));
  for (const auto& f : inputs) {
    F2F_CHECK(f->value.rank() == 4 && f->value.dim(1) == m.cfg.channels_per_frame,
              "input frame shape " + shape_str(f->value.shape) + " does not carry D=" +
                  std::to_string(m.cfg.channels_per_frame) + " channels");
  }
  Var<T> x = (inputs.size() == 1) ? inputs[0] : ops::concat_channels(tape, inputs);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    x = apply_f2f_layer(tape, m.layers[i], x, unit_mod);
    const bool last = i + 1 == m.layers.size();
    if (!last || m.cfg.final_relu) x = ops::relu(tape, x);
  }
  return x;
}

}  // namespace f2f::model
