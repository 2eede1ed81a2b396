#pragma once

// Small dense linear algebra, seeded RNG, and error types shared by the
// whole library. Everything runs in double precision.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mabe {

using Vec = std::vector<double>;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error("numeric error: " + m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error("io error: " + m) {}
};

inline void log_warn(const std::string& msg) {
  std::fprintf(stderr, "[mabe] warning: %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
  std::fprintf(stderr, "[mabe] %s\n", msg.c_str());
}

// Row-major dense matrix.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double nrm2(std::span<const double> x) {
  return std::sqrt(dot(x, x));
}

// y = W x + b
inline void matvec(const Mat& w, std::span<const double> x, std::span<const double> b, Vec& y) {
  y.assign(static_cast<size_t>(w.rows), 0.0);
  for (int r = 0; r < w.rows; ++r) {
    const double* row = w.a.data() + static_cast<size_t>(r) * w.cols;
    double s = b.empty() ? 0.0 : b[r];
    for (int c = 0; c < w.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Deterministic, portable RNG (splitmix64 stream + Box-Muller normals).
// derive() spawns statistically independent child streams so that every
// component of a run owns its own seed lineage.
struct Rng {
  uint64_t state = 0x853C49E6748FEA9BULL;
  bool has_spare = false;
  double spare = 0.0;

  Rng() = default;
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    state = seed ^ 0x9E3779B97F4A7C15ULL;
    // burn a few outputs so nearby seeds decorrelate
    for (int i = 0; i < 4; ++i) splitmix64(state);
    has_spare = false;
  }

  uint64_t next_u64() { return splitmix64(state); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  size_t index(size_t n) { return static_cast<size_t>(uniform() * static_cast<double>(n)) % n; }

  double normal() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare = r * std::sin(a);
    has_spare = true;
    return r * std::cos(a);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  Rng derive(uint64_t stream) const {
    uint64_t s = state ^ (0xD1342543DE82EF95ULL * (stream + 1));
    return Rng(splitmix64(s));
  }

  Rng derive(std::string_view label) const { return derive(fnv1a64(label)); }
};

}  // namespace mabe
