#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace f2f {

inline constexpr const char* kVersion = "0.1.0";

// Error categories map 1:1 to CLI exit codes: usage 1, data 2, checkpoint 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline std::string format_check_msg(const char* expr, const std::string& msg) {
  std::ostringstream os;
  os << msg << " (check failed: " << expr << ")";
  return os.str();
}
}  // namespace detail

#define F2F_CHECK(cond, msg)                                               \
  do {                                                                     \
    if (!(cond)) throw ::f2f::Error(::f2f::detail::format_check_msg(#cond, (msg))); \
  } while (0)

#define F2F_CHECK_DATA(cond, msg)                                          \
  do {                                                                     \
    if (!(cond)) throw ::f2f::DataError(::f2f::detail::format_check_msg(#cond, (msg))); \
  } while (0)

// splitmix64; used to derive independent seeds from (base seed, salt) pairs
// so per-clip / per-layer streams stay stable under reordering.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t salt) {
  return splitmix64(base ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

// Deterministic RNG with fully specified value derivation (the standard pins
// mt19937_64 output; the scaling below avoids implementation-defined
// std::uniform_real_distribution).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [lo, hi] via rejection-free modulo of a wide draw
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(eng_() % span);
  }

  double normal() {
    // Box-Muller on the portable uniform; one value per call, no cache.
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace f2f
