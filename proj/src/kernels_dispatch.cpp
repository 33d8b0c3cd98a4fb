#include "f2f/kernels.hpp"

#include "f2f/common.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <cpuid.h>
#define F2F_X86 1
#else
#define F2F_X86 0
#endif

namespace f2f::kernels {

namespace {

bool detect_avx2_fma() {
#if F2F_X86
  unsigned int eax = 0, ebx = 0, ecx = 0, edx = 0;
  if (__get_cpuid_max(0, nullptr) < 7) return false;
  __get_cpuid(1, &eax, &ebx, &ecx, &edx);
  bool fma = (ecx & (1u << 12)) != 0;
  __get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx);
  bool avx2 = (ebx & (1u << 5)) != 0;
  return fma && avx2;
#else
  return false;
#endif
}

struct State {
  Backend resolved = Backend::kScalar;
  Table<float> f32 = detail::scalar_table<float>();
  Table<double> f64 = detail::scalar_table<double>();
};

State& state() {
  static State s = [] {
    State init;
    if (detect_avx2_fma()) {
      init.resolved = Backend::kAvx2;
      init.f32 = detail::avx2_table<float>();
      init.f64 = detail::avx2_table<double>();
    }
    return init;
  }();
  return s;
}

}  // namespace

bool avx2_supported() {
  static bool supported = detect_avx2_fma();
  return supported;
}

void select(Backend b) {
  State& s = state();
  switch (b) {
    case Backend::kAuto:
      b = avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
      break;
    case Backend::kAvx2:
      if (!avx2_supported()) throw UsageError("avx2 kernel backend requested but CPU lacks AVX2+FMA");
      break;
    case Backend::kScalar:
      break;
  }
  s.resolved = b;
  if (b == Backend::kAvx2) {
    s.f32 = detail::avx2_table<float>();
    s.f64 = detail::avx2_table<double>();
  } else {
    s.f32 = detail::scalar_table<float>();
    s.f64 = detail::scalar_table<double>();
  }
}

Backend active() { return state().resolved; }

std::string backend_name(Backend b) {
  switch (b) {
    case Backend::kAuto: return "auto";
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
  }
  return "?";
}

Backend backend_from_name(const std::string& name) {
  if (name == "auto") return Backend::kAuto;
  if (name == "scalar") return Backend::kScalar;
  if (name == "avx2") return Backend::kAvx2;
  throw UsageError("unknown kernel backend '" + name + "' (expected auto|scalar|avx2)");
}

template <>
const Table<float>& table<float>() { return state().f32; }

template <>
const Table<double>& table<double>() { return state().f64; }

}  // namespace f2f::kernels
