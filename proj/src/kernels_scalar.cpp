#include "f2f/kernels.hpp"

namespace f2f::kernels::detail {

namespace {

template <class T>
void axpy_scalar(T* y, const T* x, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
T dot_scalar(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
T sum_scalar(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <class T>
T sqdiff_scalar(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

template <class T>
void add_scalar(T* y, const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

template <class T>
void scale_scalar(T* y, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] *= a;
}

template <class T>
void relu_scalar(T* y, const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_grad_scalar(T* dx, const T* x, const T* dy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > T(0)) dx[i] += dy[i];
}

}  // namespace

template <class T>
Table<T> scalar_table() {
  Table<T> t;
  t.axpy = axpy_scalar<T>;
  t.dot = dot_scalar<T>;
  t.sum = sum_scalar<T>;
  t.sqdiff = sqdiff_scalar<T>;
  t.add = add_scalar<T>;
  t.scale = scale_scalar<T>;
  t.relu = relu_scalar<T>;
  t.relu_grad = relu_grad_scalar<T>;
  return t;
}

template Table<float> scalar_table<float>();
template Table<double> scalar_table<double>();

}  // namespace f2f::kernels::detail
