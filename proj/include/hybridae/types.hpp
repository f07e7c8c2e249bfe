#pragma once

// Shared dense-algebra aliases and small helpers.

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

namespace hybridae {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using RowX = Eigen::RowVectorXd;

inline std::span<const double> as_span(const VecX& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline VecX from_span(std::span<const double> s) {
  return Eigen::Map<const VecX>(s.data(), static_cast<Eigen::Index>(s.size()));
}

inline bool all_finite(const VecX& v) { return v.allFinite(); }

// Numerically stable logistic function.
inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace hybridae
