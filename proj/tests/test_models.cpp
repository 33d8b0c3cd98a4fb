#include <vector>

#include "doctest.h"
#include "f2f/f2f_model.hpp"
#include "f2f/seg_model.hpp"
#include "test_util.hpp"

using namespace f2f;
using autodiff::make_leaf;
using autodiff::Tape;
using autodiff::Var;
using model::F2FConfig;
using model::StubConfig;
using model::Variant;
using testutil::gradcheck;
using testutil::max_abs_diff;
using testutil::project;
using testutil::rand_tensor;

namespace {

F2FConfig paper_cfg(Variant v, int n, int d = 512) {
  F2FConfig c;
  c.variant = v;
  c.n_layers = n;
  c.frames = 4;
  c.channels_per_frame = d;
  c.hidden = 128;
  return c;
}

F2FConfig desk_cfg(Variant v, int n, int t = 4, int d = 16, int hidden = 16) {
  F2FConfig c;
  c.variant = v;
  c.n_layers = n;
  c.frames = t;
  c.channels_per_frame = d;
  c.hidden = hidden;
  return c;
}

}  // namespace

TEST_CASE("parameter-count identities at full paper dimensions") {
  auto conv5 = model::build_f2f<double>(paper_cfg(Variant::kPlain, 5), 1);
  auto dil5 = model::build_f2f<double>(paper_cfg(Variant::kDilated, 5), 2);
  auto def5 = model::build_f2f<double>(paper_cfg(Variant::kDeformable, 5), 3);
  auto def8 = model::build_f2f<double>(paper_cfg(Variant::kDeformable, 8), 4);
  auto def8w = model::build_f2f<double>(paper_cfg(Variant::kDeformable, 8, 1024), 5);

  CHECK(conv5.count_parameters() == 1'295'360);
  CHECK(dil5.count_parameters() == 1'295'360);
  CHECK(def5.count_parameters() == 1'419'884);
  CHECK(def8.count_parameters() == 1'956'029);
  CHECK(def8w.count_parameters() == 2'808'509);

  // Counts are a function of the architecture, not the seed.
  auto conv5b = model::build_f2f<double>(paper_cfg(Variant::kPlain, 5), 99);
  CHECK(conv5b.count_parameters() == conv5.count_parameters());
}

TEST_CASE("build_f2f lays out the documented widths") {
  auto m = model::build_f2f<double>(paper_cfg(Variant::kPlain, 5), 7);
  REQUIRE(m.layers.size() == 5);
  const auto& l1 = std::get<model::ConvLayer<double>>(m.layers[0]);
  CHECK(l1.weight->value.shape == Shape{128, 2048, 1, 1});
  for (int i = 1; i < 4; ++i) {
    const auto& li = std::get<model::ConvLayer<double>>(m.layers[size_t(i)]);
    CHECK(li.weight->value.shape == Shape{128, 128, 3, 3});
  }
  const auto& l5 = std::get<model::ConvLayer<double>>(m.layers[4]);
  CHECK(l5.weight->value.shape == Shape{512, 128, 3, 3});

  auto d8 = model::build_f2f<double>(paper_cfg(Variant::kDeformable, 8), 8);
  CHECK(std::holds_alternative<model::ConvLayer<double>>(d8.layers[0]));
  for (size_t i = 1; i < 8; ++i)
    CHECK(std::holds_alternative<ops::DeformConvLayer<double>>(d8.layers[i]));

  F2FConfig bad = paper_cfg(Variant::kPlain, 1);
  CHECK_THROWS_AS(model::build_f2f<double>(bad, 1), Error);
}

TEST_CASE("forward_f2f shape, blending, and input checking") {
  Rng rng(301);
  auto m = model::build_f2f<double>(desk_cfg(Variant::kPlain, 3), 11);
  std::vector<Var<double>> frames;
  for (int i = 0; i < 4; ++i) frames.push_back(make_leaf(rand_tensor({2, 16, 6, 6}, rng)));
  Tape<double> t;
  auto out = model::forward_f2f(t, m, frames);
  CHECK(out->value.shape == frames[0]->value.shape);

  // Zero final layer: output equals its bias everywhere.
  auto& last = std::get<model::ConvLayer<double>>(m.layers.back());
  last.weight->value.fill(0.0);
  for (int i = 0; i < 16; ++i) last.bias->value[i] = 0.25 * i;
  Tape<double> t2;
  auto out2 = model::forward_f2f(t2, m, frames);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 16; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) CHECK(out2->value.at4(n, c, y, x) == 0.25 * c);

  std::vector<Var<double>> three(frames.begin(), frames.begin() + 3);
  CHECK_THROWS_AS(model::forward_f2f(t2, m, three), Error);
  auto badframe = frames;
  badframe[1] = make_leaf(rand_tensor({2, 8, 6, 6}, rng));
  CHECK_THROWS_AS(model::forward_f2f(t2, m, badframe), Error);

  // T=1 degenerates to a single-frame transformation.
  auto m1 = model::build_f2f<double>(desk_cfg(Variant::kPlain, 3, 1), 12);
  Tape<double> t3;
  auto o1 = model::forward_f2f(t3, m1, {frames[0]});
  CHECK(o1->value.shape == frames[0]->value.shape);
}

TEST_CASE("forward_f2f equals a reference composition of the tested ops") {
  Rng rng(302);
  auto m = model::build_f2f<double>(desk_cfg(Variant::kPlain, 3, 2, 4, 6), 13);
  std::vector<Var<double>> frames = {make_leaf(rand_tensor({1, 4, 5, 5}, rng)),
                                     make_leaf(rand_tensor({1, 4, 5, 5}, rng))};
  Tape<double> t;
  auto out = model::forward_f2f(t, m, frames);

  const auto& l1 = std::get<model::ConvLayer<double>>(m.layers[0]);
  const auto& l2 = std::get<model::ConvLayer<double>>(m.layers[1]);
  const auto& l3 = std::get<model::ConvLayer<double>>(m.layers[2]);
  ops::ConvSpec k1, k3;
  k3.pad = 1;
  auto x = ops::concat_channels(t, frames);
  x = ops::relu(t, ops::conv2d(t, x, l1.weight, l1.bias, k1));
  x = ops::relu(t, ops::conv2d(t, x, l2.weight, l2.bias, k3));
  x = ops::conv2d(t, x, l3.weight, l3.bias, k3);
  CHECK(max_abs_diff(out->value, x->value) == 0.0);
}

TEST_CASE("forward_f2f is sensitive to frame order") {
  Rng rng(303);
  auto m = model::build_f2f<double>(desk_cfg(Variant::kPlain, 3, 2, 4, 6), 14);
  auto a = make_leaf(rand_tensor({1, 4, 5, 5}, rng));
  auto b = make_leaf(rand_tensor({1, 4, 5, 5}, rng));
  Tape<double> t;
  auto ab = model::forward_f2f(t, m, {a, b});
  auto ba = model::forward_f2f(t, m, {b, a});
  CHECK(max_abs_diff(ab->value, ba->value) > 1e-6);
}

TEST_CASE("variant layer kinds: dilated uses dilation, deform carries offsets") {
  auto dil = model::build_f2f<double>(desk_cfg(Variant::kDilated, 3), 15);
  const auto& mid = std::get<model::ConvLayer<double>>(dil.layers[1]);
  CHECK(mid.dilation == 2);
  const auto& first = std::get<model::ConvLayer<double>>(dil.layers[0]);
  CHECK(first.dilation == 1);

  auto def = model::build_f2f<double>(desk_cfg(Variant::kDeformable, 3), 16);
  const auto& dl = std::get<ops::DeformConvLayer<double>>(def.layers[1]);
  for (int64_t i = 0; i < dl.offset_weight->value.numel(); ++i)
    CHECK(dl.offset_weight->value[i] == 0.0);
}

TEST_CASE("gradients flow through a deformable F2F stack") {
  Rng rng(304);
  F2FConfig cfg = desk_cfg(Variant::kDeformable, 3, 2, 3, 4);
  auto m = model::build_f2f<double>(cfg, 17);
  // Nudge the offset branch off zero so sampling positions avoid the
  // bilinear integer kinks (fractional parts near 0.37).
  for (auto& np : m.named_parameters())
    if (np.name.find("offset_bias") != std::string::npos)
      for (int64_t i = 0; i < np.var->value.numel(); ++i) np.var->value[i] = 0.37;
  auto fa = make_leaf(rand_tensor({1, 3, 4, 4}, rng), true);
  auto fb = make_leaf(rand_tensor({1, 3, 4, 4}, rng), true);
  Tensor<double> proj = rand_tensor({1, 3, 4, 4}, rng);
  std::vector<Var<double>> checked = {fa, fb};
  for (auto& p : m.parameters()) checked.push_back(p);
  auto r = gradcheck(
      [&](Tape<double>& t) { return project(t, model::forward_f2f(t, m, {fa, fb}), proj); },
      checked);
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("stub shapes: 64x64 at stride 8 gives 64x8x8 features") {
  StubConfig cfg;
  auto m = model::build_stub<double>(cfg, 21);
  Rng rng(311);
  auto frames = make_leaf(rand_tensor({2, 1, 64, 64}, rng));
  Tape<double> t;
  auto feats = model::extract_features(t, m, frames);
  CHECK(feats->value.shape == Shape{2, 64, 8, 8});
  auto logits = model::predict_from_features(t, m, feats);
  CHECK(logits->value.shape == Shape{2, 6, 64, 64});

  auto labels = ops::argmax_channel(logits->value);
  for (int32_t l : labels) {
    CHECK(l >= 0);
    CHECK(l < 6);
  }

  auto bad = make_leaf(rand_tensor({1, 1, 60, 64}, rng));
  CHECK_THROWS_AS(model::extract_features(t, m, bad), Error);
  auto badfeat = make_leaf(rand_tensor({1, 32, 8, 8}, rng));
  CHECK_THROWS_AS(model::predict_from_features(t, m, badfeat), Error);
}

TEST_CASE("stub features are deterministic and shift-equivariant") {
  StubConfig cfg;
  auto m = model::build_stub<double>(cfg, 22);
  Rng rng(312);
  Tensor<double> img = rand_tensor({1, 1, 64, 64}, rng);

  Tape<double> t;
  auto f1 = model::extract_features(t, m, make_leaf(img));
  auto f2 = model::extract_features(t, m, make_leaf(img));
  CHECK(max_abs_diff(f1->value, f2->value) == 0.0);

  // Shift the scene right by the full stride; features shift by one column.
  Tensor<double> shifted({1, 1, 64, 64});
  for (int y = 0; y < 64; ++y)
    for (int x = 8; x < 64; ++x) shifted.at4(0, 0, y, x) = img.at4(0, 0, y, x - 8);
  auto fs = model::extract_features(t, m, make_leaf(shifted));
  for (int c = 0; c < 64; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 2; x < 8; ++x)
        CHECK(fs->value.at4(0, c, y, x) == f1->value.at4(0, c, y, x - 1));
}

TEST_CASE("stub parameter partition and copy baseline") {
  StubConfig cfg;
  auto m = model::build_stub<double>(cfg, 23);
  const size_t all = m.parameters().size();
  CHECK(m.head_parameters().size() + m.extractor_parameters().size() == all);
  CHECK(m.count_parameters() > 0);

  Rng rng(313);
  auto labels = model::copy_last_segmentation(m, rand_tensor({1, 1, 64, 64}, rng));
  CHECK(labels.size() == 64 * 64);
  for (int32_t l : labels) {
    CHECK(l >= 0);
    CHECK(l < cfg.classes);
  }
}

TEST_CASE("cross-entropy gradients flow through the whole stub") {
  StubConfig cfg;
  cfg.downsample = 2;
  cfg.feat_dim = 8;
  cfg.classes = 3;
  cfg.spp_grids = {1, 2};
  cfg.moving_class_ids = {2};
  cfg.head_width = 8;
  auto m = model::build_stub<double>(cfg, 24);
  Rng rng(314);
  auto img = make_leaf(rand_tensor({1, 1, 4, 4}, rng), true);
  std::vector<int32_t> labels(16);
  for (auto& l : labels) l = int32_t(rng.uniform_int(0, 2));
  std::vector<Var<double>> checked = {img};
  for (auto& p : m.parameters()) checked.push_back(p);
  auto r = gradcheck(
      [&](Tape<double>& t) {
        return ops::cross_entropy(t, model::forward_single(t, m, img), labels, -1);
      },
      checked);
  CHECK(r.max_rel <= 1e-4);
}
