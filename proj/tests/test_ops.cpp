#include <cmath>
#include <vector>

#include "doctest.h"
#include "f2f/ops.hpp"
#include "test_util.hpp"

using namespace f2f;
using autodiff::make_leaf;
using autodiff::Tape;
using autodiff::Var;
using testutil::gradcheck;
using testutil::max_abs_diff;
using testutil::naive_conv2d;
using testutil::project;
using testutil::rand_tensor;

namespace {

ops::ConvSpec spec(int stride, int dilation, int pad) {
  ops::ConvSpec cs;
  cs.stride = stride;
  cs.dilation = dilation;
  cs.pad = pad;
  return cs;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 sums the window") {
  auto in = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto out = ops::conv2d_forward(in, w, b, spec(1, 1, 1));
  CHECK(out.at4(0, 0, 1, 1) == 9.0);
  CHECK(out.at4(0, 0, 0, 0) == 4.0);  // corner sees a 2x2 window
  CHECK(out.at4(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d: identity kernel is the identity map, bit for bit") {
  Rng rng(21);
  auto in = rand_tensor({2, 3, 6, 7}, rng);
  auto w = Tensor<double>::zeros({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w.at4(c, c, 1, 1) = 1.0;
  auto b = Tensor<double>::zeros({3});
  auto out = ops::conv2d_forward(in, w, b, spec(1, 1, 1));
  REQUIRE(out.same_shape(in));
  for (int64_t i = 0; i < in.numel(); ++i) CHECK(out[i] == in[i]);
}

TEST_CASE("conv2d matches the naive seven-loop oracle") {
  Rng rng(22);
  struct Case {
    Shape in, w;
    ops::ConvSpec cs;
  };
  std::vector<Case> cases = {
      {{1, 2, 5, 5}, {3, 2, 3, 3}, spec(1, 2, ops::same_padding(3, 2))},
      {{1, 2, 5, 5}, {3, 2, 3, 3}, spec(1, 1, 1)},
      {{2, 3, 8, 9}, {4, 3, 3, 3}, spec(1, 1, 1)},
      {{2, 3, 9, 9}, {4, 3, 3, 3}, spec(2, 1, 1)},
      {{1, 4, 7, 7}, {2, 4, 1, 1}, spec(1, 1, 0)},
      {{1, 2, 10, 11}, {2, 2, 5, 5}, spec(1, 1, 2)},
      {{1, 2, 12, 12}, {2, 2, 3, 3}, spec(3, 2, 2)},
  };
  for (const auto& c : cases) {
    auto in = rand_tensor(c.in, rng);
    auto w = rand_tensor(c.w, rng);
    auto b = rand_tensor({c.w[0]}, rng);
    auto fast = ops::conv2d_forward(in, w, b, c.cs);
    auto ref = naive_conv2d(in, w, b, c.cs);
    CHECK(max_abs_diff(fast, ref) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch with a shape diagnostic") {
  auto in = Tensor<double>::zeros({1, 3, 4, 4});
  auto w = Tensor<double>::zeros({2, 4, 3, 3});
  auto b = Tensor<double>::zeros({2});
  CHECK_THROWS_WITH_AS(ops::conv2d_forward(in, w, b, spec(1, 1, 1)),
                       doctest::Contains("Cin"), Error);
}

TEST_CASE("conv2d gradients pass finite differences") {
  for (uint64_t seed : {31u, 32u, 33u}) {
    Rng rng(seed);
    auto in = make_leaf(rand_tensor({1, 2, 5, 5}, rng), true);
    auto w = make_leaf(rand_tensor({3, 2, 3, 3}, rng), true);
    auto b = make_leaf(rand_tensor({3}, rng), true);
    const auto cs = (seed == 31u) ? spec(1, 1, 1) : (seed == 32u) ? spec(2, 1, 1)
                                                                  : spec(1, 2, 2);
    Tensor<double> proj;
    {
      Tape<double> t;
      proj = rand_tensor(ops::conv2d(t, in, w, b, cs)->value.shape, rng);
    }
    auto r = gradcheck(
        [&](Tape<double>& t) { return project(t, ops::conv2d(t, in, w, b, cs), proj); },
        {in, w, b});
    CHECK(r.max_rel <= 1e-4);
    CHECK(r.checked == in->value.numel() + w->value.numel() + b->value.numel());
  }
}

TEST_CASE("dilated_conv2d defaults to dilation 2 with same padding") {
  Rng rng(25);
  auto inv = rand_tensor({1, 2, 6, 6}, rng);
  auto wv = rand_tensor({2, 2, 3, 3}, rng);
  auto bv = rand_tensor({2}, rng);
  auto in = make_leaf(inv), w = make_leaf(wv), b = make_leaf(bv);
  Tape<double> t;
  auto out = ops::dilated_conv2d(t, in, w, b);
  auto ref = naive_conv2d(inv, wv, bv, spec(1, 2, 2));
  CHECK(out->value.same_shape(inv));
  CHECK(max_abs_diff(out->value, ref) <= 1e-12);

  auto d1 = ops::dilated_conv2d(t, in, w, b, 1);
  auto c1 = ops::conv2d(t, in, w, b, spec(1, 1, 1));
  CHECK(max_abs_diff(d1->value, c1->value) == 0.0);
}

TEST_CASE("relu forward and gradient") {
  Rng rng(41);
  Tensor<double> xv({37});
  for (int64_t i = 0; i < 37; ++i) {
    double v = rng.uniform(-1.0, 1.0);
    xv[i] = (std::abs(v) < 0.02) ? v + 0.05 : v;  // keep clear of the kink
  }
  auto x = make_leaf(xv, true);
  Tensor<double> proj = rand_tensor({37}, rng);
  auto r = gradcheck([&](Tape<double>& t) { return project(t, ops::relu(t, x), proj); }, {x});
  CHECK(r.max_rel <= 1e-4);

  Tape<double> t;
  auto y = ops::relu(t, x);
  for (int64_t i = 0; i < 37; ++i) CHECK(y->value[i] == std::max(xv[i], 0.0));
}

TEST_CASE("bilinear_sample: hand values") {
  // One channel, 2x2 map [[0,1],[2,3]] laid out rows = y.
  Tensor<double> m({1, 2, 2}, {0, 1, 2, 3});
  double out;
  ops::bilinear_sample_raw(m, 0.5, 0.5, &out);
  CHECK(out == doctest::Approx(1.5).epsilon(1e-12));

  // [[0,4],[8,12]] at (x,y)=(0.25,0.5) -> 5.0.
  Tensor<double> m2({1, 2, 2}, {0, 4, 8, 12});
  ops::bilinear_sample_raw(m2, 0.25, 0.5, &out);
  CHECK(out == doctest::Approx(5.0).epsilon(1e-12));

  // Integer coordinates hit the grid point exactly.
  Rng rng(51);
  auto m3 = rand_tensor({3, 4, 5}, rng);
  double v3[3];
  ops::bilinear_sample_raw(m3, 1.0, 2.0, v3);
  for (int c = 0; c < 3; ++c) CHECK(v3[c] == m3.at3(c, 2, 1));

  // Far out of bounds: every corner missing, zero-padding gives 0.
  ops::bilinear_sample_raw(m3, -7.5, 2.25, v3);
  for (int c = 0; c < 3; ++c) CHECK(v3[c] == 0.0);

  // Half out: x=-0.25 keeps only the x0+1 corners with weight fx=0.75.
  Tensor<double> m4({1, 1, 2}, {10, 20});
  ops::bilinear_sample_raw(m4, -0.25, 0.0, &out);
  CHECK(out == doctest::Approx(0.75 * 10).epsilon(1e-12));
}

TEST_CASE("bilinear_sample gradients (map and coordinates)") {
  for (uint64_t seed : {61u, 62u, 63u}) {
    Rng rng(seed);
    auto map = make_leaf(rand_tensor({2, 5, 6}, rng), true);
    // Coordinates partly out of bounds, kept >= 1e-3 away from integers.
    Tensor<double> cv({2});
    for (int i = 0; i < 2; ++i) {
      double c = rng.uniform(-1.2, 6.2);
      double fr = c - std::floor(c);
      if (fr < 1e-2) c += 2e-2;
      if (fr > 1 - 1e-2) c -= 2e-2;
      cv[i] = c;
    }
    auto coords = make_leaf(cv, true);
    Tensor<double> proj = rand_tensor({2}, rng);
    auto r = gradcheck(
        [&](Tape<double>& t) { return project(t, ops::bilinear_sample(t, map, coords), proj); },
        {map, coords});
    CHECK(r.max_rel <= 1e-4);
  }
}

TEST_CASE("softmax values, row sums, gradient") {
  Tensor<double> logits({1, 3, 1, 1}, {1, 2, 3});
  auto x = make_leaf(logits, true);
  Tape<double> t;
  auto p = ops::softmax(t, x, 1);
  CHECK(p->value[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(p->value[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(p->value[2] == doctest::Approx(0.66524).epsilon(1e-4));

  Rng rng(71);
  auto big = make_leaf(rand_tensor({2, 5, 3, 4}, rng, -4, 4), true);
  Tape<double> t2;
  auto pb = ops::softmax(t2, big, 1);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 4; ++xx) {
        double s = 0;
        for (int c = 0; c < 5; ++c) s += pb->value.at4(n, c, y, xx);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      }

  Tensor<double> proj = rand_tensor({2, 5, 3, 4}, rng);
  auto r = gradcheck([&](Tape<double>& tp) { return project(tp, ops::softmax(tp, big, 1), proj); },
                     {big});
  CHECK(r.max_rel <= 1e-4);

  // A non-channel axis also works.
  auto v = make_leaf(rand_tensor({4, 6}, rng), true);
  Tensor<double> pv = rand_tensor({4, 6}, rng);
  auto r2 = gradcheck([&](Tape<double>& tp) { return project(tp, ops::softmax(tp, v, 0), pv); },
                      {v});
  CHECK(r2.max_rel <= 1e-4);
}

TEST_CASE("l2_loss basics and gradient") {
  Rng rng(81);
  auto a = make_leaf(rand_tensor({2, 3, 4, 4}, rng), true);
  auto bsame = make_leaf(a->value);
  Tape<double> t;
  CHECK(ops::l2_loss(t, a, bsame)->value[0] == 0.0);

  auto b = make_leaf(rand_tensor({2, 3, 4, 4}, rng), true);
  double ref = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) {
    double d = a->value[i] - b->value[i];
    ref += d * d;
  }
  ref /= double(a->value.numel());
  Tape<double> t2;
  auto l = ops::l2_loss(t2, a, b);
  CHECK(l->value[0] == doctest::Approx(ref).epsilon(1e-12));
  CHECK(l->value[0] >= 0.0);

  auto r = gradcheck([&](Tape<double>& tp) { return ops::l2_loss(tp, a, b); }, {a, b});
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("cross_entropy values, ignore handling, gradient") {
  // Two classes, both logits zero: -log(1/2).
  Tensor<double> z({1, 2, 1, 1}, {0, 0});
  auto x = make_leaf(z, true);
  Tape<double> t;
  CHECK(ops::cross_entropy(t, x, {0})->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(91);
  auto logits = make_leaf(rand_tensor({1, 3, 4, 4}, rng, -2, 2), true);
  std::vector<int32_t> labels(16);
  for (auto& l : labels) l = int32_t(rng.uniform_int(0, 2));
  labels[5] = 255;  // ignored
  labels[11] = 255;

  // Hand computation of the mean over non-ignored pixels.
  double ref = 0;
  int scored = 0;
  for (int p = 0; p < 16; ++p) {
    if (labels[size_t(p)] == 255) continue;
    double m = -1e300, zs = 0;
    for (int c = 0; c < 3; ++c) m = std::max(m, logits->value[c * 16 + p]);
    for (int c = 0; c < 3; ++c) zs += std::exp(logits->value[c * 16 + p] - m);
    ref += m + std::log(zs) - logits->value[labels[size_t(p)] * 16 + p];
    ++scored;
  }
  ref /= scored;
  Tape<double> t2;
  auto l = ops::cross_entropy(t2, logits, labels, 255);
  CHECK(l->value[0] == doctest::Approx(ref).epsilon(1e-12));
  CHECK(l->value[0] >= 0.0);

  auto r = gradcheck(
      [&](Tape<double>& tp) { return ops::cross_entropy(tp, logits, labels, 255); }, {logits});
  CHECK(r.max_rel <= 1e-4);

  // Ignored pixels must get zero gradient.
  logits->zero_grad();
  Tape<double> t3;
  auto l3 = ops::cross_entropy(t3, logits, labels, 255);
  t3.backward(l3);
  for (int c = 0; c < 3; ++c) {
    CHECK(logits->grad[c * 16 + 5] == 0.0);
    CHECK(logits->grad[c * 16 + 11] == 0.0);
  }

  std::vector<int32_t> all_ignored(16, 255);
  Tape<double> t4;
  CHECK_THROWS_AS(ops::cross_entropy(t4, logits, all_ignored, 255), DataError);

  std::vector<int32_t> bad(16, 0);
  bad[3] = 7;
  Tape<double> t5;
  CHECK_THROWS_AS(ops::cross_entropy(t5, logits, bad, 255), Error);
}

TEST_CASE("log_max_softmax value and gradient") {
  Rng rng(101);
  Tensor<double> lv = rand_tensor({1, 4, 3, 3}, rng, -2, 2);
  // Widen each pixel's top-two gap so the argmax is FD-stable.
  for (int p = 0; p < 9; ++p) {
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (lv[c * 9 + p] > lv[best * 9 + p]) best = c;
    lv[best * 9 + p] += 0.1;
  }
  auto x = make_leaf(lv, true);
  Tape<double> t;
  auto out = ops::log_max_softmax(t, x);
  REQUIRE(out->value.shape == Shape{1, 3, 3});
  for (int p = 0; p < 9; ++p) {
    double m = -1e300, zs = 0;
    for (int c = 0; c < 4; ++c) m = std::max(m, lv[c * 9 + p]);
    for (int c = 0; c < 4; ++c) zs += std::exp(lv[c * 9 + p] - m);
    CHECK(out->value[p] == doctest::Approx(std::log(std::exp(0.0) / zs)).epsilon(1e-10));
    CHECK(out->value[p] <= 0.0);
  }

  Tensor<double> proj = rand_tensor({1, 3, 3}, rng);
  auto r = gradcheck(
      [&](Tape<double>& tp) { return project(tp, ops::log_max_softmax(tp, x), proj); }, {x});
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("concat and slice are inverses; grads route to the right slices") {
  Rng rng(111);
  auto a = make_leaf(rand_tensor({2, 3, 4, 5}, rng), true);
  auto b = make_leaf(rand_tensor({2, 2, 4, 5}, rng), true);
  auto c = make_leaf(rand_tensor({2, 4, 4, 5}, rng), true);

  Tape<double> t;
  auto cat = ops::concat_channels(t, {a, b, c});
  REQUIRE(cat->value.shape == Shape{2, 9, 4, 5});
  auto sa = ops::slice_channels(t, cat, 0, 3);
  auto sb = ops::slice_channels(t, cat, 3, 5);
  auto sc = ops::slice_channels(t, cat, 5, 9);
  CHECK(max_abs_diff(sa->value, a->value) == 0.0);
  CHECK(max_abs_diff(sb->value, b->value) == 0.0);
  CHECK(max_abs_diff(sc->value, c->value) == 0.0);

  Tensor<double> proj = rand_tensor({2, 9, 4, 5}, rng);
  auto r = gradcheck(
      [&](Tape<double>& tp) { return project(tp, ops::concat_channels(tp, {a, b, c}), proj); },
      {a, b, c});
  CHECK(r.max_rel <= 1e-4);

  Tensor<double> projs = rand_tensor({2, 2, 4, 5}, rng);
  auto r2 = gradcheck(
      [&](Tape<double>& tp) {
        auto cc = ops::concat_channels(tp, {a, b, c});
        return project(tp, ops::slice_channels(tp, cc, 3, 5), projs);
      },
      {a, b, c});
  CHECK(r2.max_rel <= 1e-4);
  CHECK_THROWS_AS(ops::slice_channels(t, cat, 5, 12), Error);
}

TEST_CASE("avg_pool_grid means and gradient") {
  Tensor<double> v({1, 1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) v[i] = double(i + 1);
  auto x = make_leaf(v, true);
  Tape<double> t;
  auto p = ops::avg_pool_grid(t, x, 2, 2);
  CHECK(p->value.at4(0, 0, 0, 0) == 3.5);
  CHECK(p->value.at4(0, 0, 0, 1) == 5.5);
  CHECK(p->value.at4(0, 0, 1, 0) == 11.5);
  CHECK(p->value.at4(0, 0, 1, 1) == 13.5);
  auto g = ops::avg_pool_grid(t, x, 1, 1);
  CHECK(g->value[0] == doctest::Approx(8.5).epsilon(1e-12));

  Rng rng(121);
  auto big = make_leaf(rand_tensor({2, 3, 6, 9}, rng), true);
  Tensor<double> proj = rand_tensor({2, 3, 2, 3}, rng);
  auto r = gradcheck(
      [&](Tape<double>& tp) { return project(tp, ops::avg_pool_grid(tp, big, 2, 3), proj); },
      {big});
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("upsample_nearest replication and gradient") {
  Tensor<double> v({1, 1, 2, 2}, {1, 2, 3, 4});
  auto x = make_leaf(v, true);
  Tape<double> t;
  auto u = ops::upsample_nearest(t, x, 4, 4);
  const double expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(u->value[i] == expect[i]);

  Rng rng(131);
  auto big = make_leaf(rand_tensor({1, 2, 3, 4}, rng), true);
  Tensor<double> proj = rand_tensor({1, 2, 7, 9}, rng);
  auto r = gradcheck(
      [&](Tape<double>& tp) { return project(tp, ops::upsample_nearest(tp, big, 7, 9), proj); },
      {big});
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("argmax_channel picks the max class, lowest id on ties") {
  Tensor<double> v({1, 3, 1, 2}, {5, 1, /*c1*/ 5, 7, /*c2*/ 2, 7});
  auto ids = ops::argmax_channel(v);
  CHECK(ids[0] == 0);  // 5 vs 5 vs 2: tie between c0 and c1 -> 0
  CHECK(ids[1] == 1);  // 1 vs 7 vs 7: tie between c1 and c2 -> 1
}

TEST_CASE("conv2d output is deterministic across repeated runs") {
  Rng rng(141);
  auto in = rand_tensor({1, 3, 8, 8}, rng);
  auto w = rand_tensor({4, 3, 3, 3}, rng);
  auto b = rand_tensor({4}, rng);
  auto o1 = ops::conv2d_forward(in, w, b, spec(1, 1, 1));
  auto o2 = ops::conv2d_forward(in, w, b, spec(1, 1, 1));
  for (int64_t i = 0; i < o1.numel(); ++i) CHECK(o1[i] == o2[i]);
}
