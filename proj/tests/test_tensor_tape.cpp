#include <cmath>

#include "doctest.h"
#include "f2f/ops.hpp"
#include "test_util.hpp"

using namespace f2f;
using autodiff::make_leaf;
using autodiff::Tape;
using autodiff::Var;

TEST_CASE("tensor layout is row-major") {
  Tensor<double> t({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = double(i);
  CHECK(t.at4(0, 0, 0, 0) == 0.0);
  CHECK(t.at4(0, 0, 0, 4) == 4.0);
  CHECK(t.at4(0, 0, 1, 0) == 5.0);
  CHECK(t.at4(0, 1, 0, 0) == 20.0);
  CHECK(t.at4(1, 0, 0, 0) == 60.0);
  CHECK(t.at4(1, 2, 3, 4) == 119.0);

  Tensor<double> t3({3, 4, 5});
  for (int64_t i = 0; i < t3.numel(); ++i) t3[i] = double(i);
  CHECK(t3.at3(1, 2, 3) == 33.0);
  CHECK(t3.at3(2, 0, 0) == 40.0);
}

TEST_CASE("tensor factories and cast") {
  auto z = Tensor<float>::zeros({2, 2});
  for (int64_t i = 0; i < 4; ++i) CHECK(z[i] == 0.0f);
  auto f = Tensor<double>::full({3}, 2.5);
  CHECK(f[2] == 2.5);
  auto s = Tensor<double>::scalar(7.0);
  CHECK(s.numel() == 1);
  CHECK(s.rank() == 1);

  Rng rng(11);
  auto d = random_uniform<double>({4, 4}, -2.0, 3.0, rng);
  for (int64_t i = 0; i < d.numel(); ++i) {
    CHECK(d[i] >= -2.0);
    CHECK(d[i] < 3.0);
  }
  auto ff = d.cast<float>();
  auto dd = ff.cast<double>();
  for (int64_t i = 0; i < d.numel(); ++i)
    CHECK(dd[i] == doctest::Approx(d[i]).epsilon(1e-6));
}

TEST_CASE("rng streams are deterministic and salted") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform01() == b.uniform01());
  CHECK(derive_seed(42, 1) != derive_seed(42, 2));
  CHECK(derive_seed(42, 1) == derive_seed(42, 1));

  Rng n(7);
  double mean = 0, var = 0;
  const int N = 20000;
  std::vector<double> xs(N);
  for (auto& x : xs) x = n.normal();
  for (double x : xs) mean += x;
  mean /= N;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= N;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("sum backward fills ones; detached leaves stay empty") {
  Rng rng(3);
  auto x = make_leaf(testutil::rand_tensor({2, 3, 4, 4}, rng), true);
  auto c = make_leaf(testutil::rand_tensor({2, 3, 4, 4}, rng), false);

  Tape<double> tape;
  auto y = ops::mul(tape, x, c);
  auto loss = ops::sum(tape, y);
  tape.backward(loss);

  REQUIRE(x->grad_allocated());
  for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(x->grad[i] == c->value[i]);
  CHECK(!c->grad_allocated());
}

TEST_CASE("loss = sum(x*x)/2 gives grad x") {
  Rng rng(4);
  auto x = make_leaf(testutil::rand_tensor({3, 7}, rng), true);
  Tape<double> tape;
  auto loss = ops::scale(tape, ops::sum(tape, ops::mul(tape, x, x)), 0.5);
  tape.backward(loss);
  for (int64_t i = 0; i < x->value.numel(); ++i)
    CHECK(x->grad[i] == doctest::Approx(x->value[i]).epsilon(1e-12));
}

TEST_CASE("backward is repeatable and leaf grads accumulate") {
  Rng rng(5);
  auto x = make_leaf(testutil::rand_tensor({5}, rng), true);
  Tape<double> tape;
  auto loss = ops::sum(tape, ops::mul(tape, x, x));

  tape.backward(loss);
  Tensor<double> first = x->grad;
  for (int64_t i = 0; i < 5; ++i)
    CHECK(first[i] == doctest::Approx(2 * x->value[i]).epsilon(1e-12));

  // Without clearing, a second pass adds on top of the first.
  tape.backward(loss);
  for (int64_t i = 0; i < 5; ++i)
    CHECK(x->grad[i] == doctest::Approx(2 * first[i]).epsilon(1e-12));

  // After clearing, the same tape reproduces the original grads exactly.
  x->zero_grad();
  tape.backward(loss);
  for (int64_t i = 0; i < 5; ++i) CHECK(x->grad[i] == first[i]);
}

TEST_CASE("two losses on one tape backpropagate independently") {
  Rng rng(6);
  auto x = make_leaf(testutil::rand_tensor({6}, rng), true);
  Tape<double> tape;
  auto la = ops::sum(tape, x);
  auto lb = ops::sum(tape, ops::mul(tape, x, x));

  tape.backward(la);
  for (int64_t i = 0; i < 6; ++i) CHECK(x->grad[i] == 1.0);

  x->zero_grad();
  tape.backward(lb);
  for (int64_t i = 0; i < 6; ++i)
    CHECK(x->grad[i] == doctest::Approx(2 * x->value[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects bad targets") {
  Rng rng(7);
  auto x = make_leaf(testutil::rand_tensor({2, 2}, rng), true);
  Tape<double> tape;
  auto y = ops::mul(tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), Error);        // non-scalar
  CHECK_THROWS_AS(tape.backward(x), Error);        // leaf, not on tape
  auto loss = ops::sum(tape, y);
  Tape<double> other;
  auto foreign = ops::sum(other, ops::mul(other, x, x));
  CHECK_THROWS_AS(tape.backward(foreign), Error);  // wrong tape
  tape.backward(loss);                             // sanity: the good one works
}
