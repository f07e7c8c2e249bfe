#pragma once

// Batched directional differentiation of model maps.
//
// tangent_eval pushes k seed directions over (t, x, z, p) through a map in a
// single forward pass (chunked internally when k exceeds the dual-scalar
// capacity) and returns the value together with the k Jacobian-vector
// products.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybridae/dual.hpp"
#include "hybridae/errors.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

// k seed directions across all four argument groups.  Row counts must match
// the map's argument sizes; dt has one entry per direction.
struct TangentSeeds {
  VecX dt;  // k
  MatX dx;  // n_x x k
  MatX dz;  // n_z x k
  MatX dp;  // n_p x k

  int count() const { return static_cast<int>(dt.size()); }

  static TangentSeeds zero(int n_x, int n_z, int n_p, int k) {
    return {VecX::Zero(k), MatX::Zero(n_x, k), MatX::Zero(n_z, k),
            MatX::Zero(n_p, k)};
  }
};

// Value and per-direction directional derivatives of a vector-valued map.
struct TangentBundle {
  VecX value;    // n_out
  MatX tangent;  // n_out x k
};

namespace detail {

inline void seed_group(std::vector<Dual>& out, const VecX& values,
                       const MatX& seeds, int col0, int kc) {
  const int n = static_cast<int>(values.size());
  out.resize(n);
  for (int i = 0; i < n; ++i) {
    TangentRow row(kc);
    for (int j = 0; j < kc; ++j) row(j) = seeds(i, col0 + j);
    out[i] = Dual(values(i), std::move(row));
  }
}

}  // namespace detail

// Evaluates `fn` (callable over dual scalars) at (t, x, z, p) carrying the
// given seed directions.  `fn` must write n_out entries:
//   fn(const Dual& t, span<const Dual> x, span<const Dual> z,
//      span<const Dual> p, span<Dual> out)
template <class Fn>
TangentBundle tangent_eval(Fn&& fn, int n_out, double t, const VecX& x,
                           const VecX& z, const VecX& p,
                           const TangentSeeds& seeds,
                           const char* map_name = "map") {
  const int k = seeds.count();
  if (seeds.dx.cols() != k || seeds.dz.cols() != k || seeds.dp.cols() != k ||
      seeds.dx.rows() != x.size() || seeds.dz.rows() != z.size() ||
      seeds.dp.rows() != p.size()) {
    throw InvalidArgument(std::string("tangent_eval: seed shape mismatch for ") +
                          map_name);
  }

  TangentBundle bundle;
  bundle.value = VecX::Zero(n_out);
  bundle.tangent = MatX::Zero(n_out, k);

  std::vector<Dual> xd, zd, pd, outd;
  int col = 0;
  bool first = true;
  // k == 0 still evaluates once so the plain value is returned.
  do {
    const int kc = std::min(kMaxTangents, k - col);
    Dual td;
    if (kc > 0) {
      TangentRow trow(kc);
      for (int j = 0; j < kc; ++j) trow(j) = seeds.dt(col + j);
      td = Dual(t, std::move(trow));
      detail::seed_group(xd, x, seeds.dx, col, kc);
      detail::seed_group(zd, z, seeds.dz, col, kc);
      detail::seed_group(pd, p, seeds.dp, col, kc);
    } else {
      td = Dual(t);
      detail::seed_group(xd, x, MatX::Zero(x.size(), 1), 0, 0);
      detail::seed_group(zd, z, MatX::Zero(z.size(), 1), 0, 0);
      detail::seed_group(pd, p, MatX::Zero(p.size(), 1), 0, 0);
    }
    outd.assign(n_out, Dual());
    fn(td, std::span<const Dual>(xd), std::span<const Dual>(zd),
       std::span<const Dual>(pd), std::span<Dual>(outd));
    for (int i = 0; i < n_out; ++i) {
      if (first) bundle.value(i) = outd[i].value();
      for (int j = 0; j < kc; ++j) bundle.tangent(i, col + j) = outd[i].deriv(j);
    }
    first = false;
    col += kc;
  } while (col < k);

  if (!bundle.value.allFinite() || !bundle.tangent.allFinite()) {
    throw NumericalFailure(std::string("tangent_eval: non-finite output of ") +
                           map_name);
  }
  return bundle;
}

}  // namespace hybridae
