#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "f2f/common.hpp"

namespace f2f {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    F2F_CHECK(d >= 0, "negative tensor extent");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major N-d value array. Gradient buffers and tape linkage live in
// autodiff::Node; this is the raw storage every module shares.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    F2F_CHECK(numel_of(shape) == static_cast<int64_t>(data.size()),
              "tensor data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // row-major offset helpers for the layouts the ops use
  T& at2(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
  const T& at2(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }
  T& at3(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  const T& at3(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  T& at4(int n, int c, int y, int x) {
    return data[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
  const T& at4(int n, int c, int y, int x) const {
    return data[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  void fill(T v) {
    for (auto& x : data) x = v;
  }
};

template <class T>
Tensor<T> random_uniform(Shape s, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(s));
  for (auto& x : t.data) x = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace f2f
