#pragma once

#include <cstdint>
#include <random>

#include "abft/dense.hpp"

namespace abft {

/// Seeded generator with platform-independent real draws. The standard
/// distributions are implementation-defined, so doubles are built directly
/// from the top 53 bits of mt19937_64 output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }

 private:
  std::mt19937_64 engine_;
};

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace abft
