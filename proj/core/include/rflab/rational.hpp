#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace rflab {

/// Exact rational number on 64-bit integers, always kept in lowest terms
/// with a positive denominator. Only the small arithmetic needed by the
/// exact counterexample enumeration is provided; overflow is out of scope
/// for the tiny values involved.
class Rational {
public:
  Rational() = default;
  Rational(std::int64_t num, std::int64_t den);
  static Rational integer(std::int64_t n) { return Rational(n, 1); }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  Rational operator+(const Rational& o) const;
  Rational operator-(const Rational& o) const;
  Rational operator*(const Rational& o) const;
  Rational operator/(const Rational& o) const;
  bool operator==(const Rational& o) const {
    return num_ == o.num_ && den_ == o.den_;
  }
  bool operator!=(const Rational& o) const { return !(*this == o); }

  bool is_zero() const { return num_ == 0; }
  double to_double() const {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }
  std::string to_string() const;

  /// Exact square root if the value is a perfect square of a rational,
  /// std::nullopt otherwise. Requires a nonnegative value.
  std::optional<Rational> exact_sqrt() const;

private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace rflab
