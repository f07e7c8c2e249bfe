#pragma once

// Forward-mode dual scalar carrying a batch of tangent slots.
//
// A Dual holds a value and a row of k directional derivatives that propagate
// through arithmetic in one pass.  An empty row means "zero tangent" so plain
// constants stay cheap.  The row storage is stack-allocated with a fixed
// capacity; larger seed batches are split into chunks by the evaluation layer
// (see tangent.hpp), never by the scalar itself.

#include <Eigen/Dense>
#include <cmath>

#include "hybridae/errors.hpp"

namespace hybridae {

// Upper bound on tangent slots carried by one Dual.
inline constexpr int kMaxTangents = 40;

using TangentRow =
    Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, kMaxTangents>;

class Dual {
 public:
  Dual() : v_(0.0) {}
  Dual(double v) : v_(v) {}  // NOLINT: implicit by design, constants promote
  Dual(double v, TangentRow d) : v_(v), d_(std::move(d)) {}

  // Value with a unit tangent in one of k slots.
  static Dual seeded(double v, int k, int slot, double scale = 1.0) {
    TangentRow d = TangentRow::Zero(k);
    d(slot) = scale;
    return Dual(v, std::move(d));
  }

  // Value with an explicit tangent row.
  static Dual with_tangent(double v, const Eigen::Ref<const Eigen::RowVectorXd>& d) {
    TangentRow row(d.size());
    row = d;
    return Dual(v, std::move(row));
  }

  double value() const { return v_; }
  const TangentRow& tangent() const { return d_; }
  bool has_tangent() const { return d_.size() > 0; }

  // d/dslot, treating an empty row as zero.
  double deriv(int slot) const { return d_.size() > 0 ? d_(slot) : 0.0; }

  Dual operator-() const { return Dual(-v_, scaled(d_, -1.0)); }

  friend Dual operator+(const Dual& a, const Dual& b) {
    return Dual(a.v_ + b.v_, combine(a.d_, 1.0, b.d_, 1.0));
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    return Dual(a.v_ - b.v_, combine(a.d_, 1.0, b.d_, -1.0));
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    return Dual(a.v_ * b.v_, combine(a.d_, b.v_, b.d_, a.v_));
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    // the value uses a true division so dual evaluation reproduces plain
    // double arithmetic bit for bit; only the tangents use the reciprocal
    const double inv = 1.0 / b.v_;
    return Dual(a.v_ / b.v_, combine(a.d_, inv, b.d_, -a.v_ * inv * inv));
  }

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }

  // Chain rule for unary elementary functions: value f(a), slope df.
  static Dual chain(const Dual& a, double value, double slope) {
    return Dual(value, scaled(a.d_, slope));
  }

 private:
  static TangentRow scaled(const TangentRow& d, double c) {
    if (d.size() == 0) return {};
    TangentRow r(d.size());
    r = d * c;
    return r;
  }

  // ca*a + cb*b with empty rows acting as zeros.
  static TangentRow combine(const TangentRow& a, double ca, const TangentRow& b,
                            double cb) {
    if (a.size() == 0) return scaled(b, cb);
    if (b.size() == 0) return scaled(a, ca);
    TangentRow r(a.size());
    r = ca * a + cb * b;
    return r;
  }

  double v_;
  TangentRow d_;
};

inline Dual operator+(const Dual& a, double b) { return a + Dual(b); }
inline Dual operator+(double a, const Dual& b) { return Dual(a) + b; }
inline Dual operator-(const Dual& a, double b) { return a - Dual(b); }
inline Dual operator-(double a, const Dual& b) { return Dual(a) - b; }
inline Dual operator*(const Dual& a, double b) { return a * Dual(b); }
inline Dual operator*(double a, const Dual& b) { return Dual(a) * b; }
inline Dual operator/(const Dual& a, double b) { return a / Dual(b); }
inline Dual operator/(double a, const Dual& b) { return Dual(a) / b; }

inline Dual sin(const Dual& a) {
  return Dual::chain(a, std::sin(a.value()), std::cos(a.value()));
}
inline Dual cos(const Dual& a) {
  return Dual::chain(a, std::cos(a.value()), -std::sin(a.value()));
}
inline Dual tan(const Dual& a) {
  const double c = std::cos(a.value());
  return Dual::chain(a, std::tan(a.value()), 1.0 / (c * c));
}
inline Dual exp(const Dual& a) {
  const double e = std::exp(a.value());
  return Dual::chain(a, e, e);
}
inline Dual log(const Dual& a) {
  return Dual::chain(a, std::log(a.value()), 1.0 / a.value());
}
inline Dual sqrt(const Dual& a) {
  const double r = std::sqrt(a.value());
  return Dual::chain(a, r, 0.5 / r);
}
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.value());
  return Dual::chain(a, t, 1.0 - t * t);
}
inline Dual atan(const Dual& a) {
  return Dual::chain(a, std::atan(a.value()),
                     1.0 / (1.0 + a.value() * a.value()));
}
inline Dual pow(const Dual& a, double n) {
  return Dual::chain(a, std::pow(a.value(), n),
                     n * std::pow(a.value(), n - 1.0));
}
inline Dual pow(const Dual& a, int n) { return pow(a, static_cast<double>(n)); }

inline double value_of(const Dual& a) { return a.value(); }
inline double value_of(double a) { return a; }

}  // namespace hybridae
