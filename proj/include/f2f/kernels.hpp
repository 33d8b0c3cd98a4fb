#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner-loop kernels behind the tensor ops. Every kernel has a
// scalar reference implementation and an AVX2 variant; the active table is
// selected once at startup (cpuid) and can be overridden for equivalence
// tests or to pin a manifest to a backend.
//
// Scalar kernels accumulate strictly left to right; this is the fixed
// reduction order the determinism guarantees rely on. SIMD variants reorder
// lane sums and are held to the documented 1e-12-level equivalence gates
// instead of bit equality.

namespace f2f::kernels {

enum class Backend { kAuto, kScalar, kAvx2 };

// Selects the backend for all subsequent kernel calls. kAuto resolves via
// cpuid. Requesting kAvx2 on a CPU without AVX2+FMA throws.
void select(Backend b);

// Backend actually in use after resolution.
Backend active();

bool avx2_supported();

std::string backend_name(Backend b);
Backend backend_from_name(const std::string& name);

template <class T>
struct Table {
  // y[i] += a * x[i]
  void (*axpy)(T* y, const T* x, T a, std::size_t n);
  // sum_i a[i] * b[i]
  T (*dot)(const T* a, const T* b, std::size_t n);
  // sum_i x[i]
  T (*sum)(const T* x, std::size_t n);
  // sum_i (a[i] - b[i])^2
  T (*sqdiff)(const T* a, const T* b, std::size_t n);
  // y[i] += x[i]
  void (*add)(T* y, const T* x, std::size_t n);
  // y[i] *= a
  void (*scale)(T* y, T a, std::size_t n);
  // y[i] = max(x[i], 0)
  void (*relu)(T* y, const T* x, std::size_t n);
  // dx[i] += x[i] > 0 ? dy[i] : 0
  void (*relu_grad)(T* dx, const T* x, const T* dy, std::size_t n);
};

template <class T>
const Table<T>& table();

// Convenience forwarders through the active table.
template <class T>
inline void axpy(T* y, const T* x, T a, std::size_t n) { table<T>().axpy(y, x, a, n); }
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) { return table<T>().dot(a, b, n); }
template <class T>
inline T sum(const T* x, std::size_t n) { return table<T>().sum(x, n); }
template <class T>
inline T sqdiff(const T* a, const T* b, std::size_t n) { return table<T>().sqdiff(a, b, n); }
template <class T>
inline void add(T* y, const T* x, std::size_t n) { table<T>().add(y, x, n); }
template <class T>
inline void scale(T* y, T a, std::size_t n) { table<T>().scale(y, a, n); }
template <class T>
inline void relu(T* y, const T* x, std::size_t n) { table<T>().relu(y, x, n); }
template <class T>
inline void relu_grad(T* dx, const T* x, const T* dy, std::size_t n) {
  table<T>().relu_grad(dx, x, dy, n);
}

namespace detail {
template <class T>
Table<T> scalar_table();
template <class T>
Table<T> avx2_table();  // valid to call only when avx2_supported()
}  // namespace detail

}  // namespace f2f::kernels
