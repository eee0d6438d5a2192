#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace rflab {

/// SplitMix64 finalizer. Bijective on 64-bit integers.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derive an independent substream seed from (base, index). Injective in
/// `index` for a fixed base because splitmix64 is a bijection.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) + index);
}

/// Deterministic random stream used everywhere in rflab.
///
/// The engine is std::mt19937_64 (bit-exact across platforms by the
/// standard); all value transforms are written out explicitly instead of
/// relying on implementation-defined std::*_distribution behaviour, so a
/// given seed reproduces the same doubles on any toolchain.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1]; never returns 0 so logs are safe.
  double uniform01_pos() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform on the open interval (0, 1).
  double uniform01_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; the second variate of each pair is
  /// cached so the stream consumes exactly one uniform pair per two normals.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01_pos();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Laplace(loc, scale) by inverse CDF.
  double laplace(double loc, double scale) {
    const double v = uniform01_open() - 0.5;
    const double s = (v < 0.0) ? -1.0 : 1.0;
    return loc - scale * s * std::log1p(-2.0 * std::abs(v));
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fill `out` (row-major traversal: row 0 left to right, then row 1, ...)
/// with i.i.d. standard normals. The traversal order is part of the
/// determinism contract.
inline void fill_normal(Rng& rng, Eigen::Ref<Eigen::MatrixXd> out) {
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = rng.normal();
}

}  // namespace rflab
