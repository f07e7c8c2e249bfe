#pragma once

// Algebraic subsystem solves and implicit-function tangents.
//
// solve_algebraic drives 0 = g(t, x, z, p) to tolerance with a chord-Newton
// iteration: the (regularized) Jacobian G_z is factorized once and reused
// across updates, with a bounded number of restarts that refresh the
// factorization at the current iterate.  algebraic_tangent differentiates the
// solved z through the implicit function theorem,
//
//   dz = -g_z^{-1} (g_t dt + g_x dx + g_p dp).

#include <Eigen/Dense>

#include "hybridae/errors.hpp"
#include "hybridae/model.hpp"

namespace hybridae {

struct AlgebraicConfig {
  int chord_iters = 8;      // updates per factorization
  double eps_z = 1e-10;     // Tikhonov shift on the chord Jacobian
  double tol_g = 1e-10;     // convergence threshold on ||g||_inf
  int max_restarts = 3;     // extra factorizations allowed
};

// Chord-Newton solve of the algebraic system at fixed (t, x, p).
template <HybridModel M>
VecX solve_algebraic(const M& m, double t, const VecX& x, const VecX& p,
                     const VecX& z_guess, const AlgebraicConfig& cfg = {}) {
  const int n_z = m.dims().n_z;
  if (n_z == 0) return VecX();

  VecX z = z_guess;
  VecX g = eval_g(m, t, x, z, p);
  if (g.lpNorm<Eigen::Infinity>() <= cfg.tol_g) return z;

  for (int restart = 0; restart <= cfg.max_restarts; ++restart) {
    MatX gz = g_z_matrix(m, t, x, z, p);
    gz.diagonal().array() += cfg.eps_z;
    Eigen::FullPivLU<MatX> lu(gz);
    if (!lu.isInvertible()) {
      throw SingularJacobian("solve_algebraic: singular chord Jacobian");
    }
    for (int q = 0; q < cfg.chord_iters; ++q) {
      z -= lu.solve(g);
      g = eval_g(m, t, x, z, p);
      if (!g.allFinite()) {
        throw AlgebraicFailure("solve_algebraic: non-finite residual");
      }
      if (g.lpNorm<Eigen::Infinity>() <= cfg.tol_g) return z;
    }
  }
  throw AlgebraicFailure("solve_algebraic: no convergence within restarts");
}

// Full-Newton solve with a fresh Jacobian per iteration.  Used where the
// algebraic state must be resolved to near machine precision (discrete
// re-solves feeding exactness checks).
template <HybridModel M>
VecX newton_algebraic(const M& m, double t, const VecX& x, const VecX& p,
                      const VecX& z_guess, double tol = 1e-13,
                      int max_iters = 25) {
  const int n_z = m.dims().n_z;
  if (n_z == 0) return VecX();

  VecX z = z_guess;
  for (int it = 0; it < max_iters; ++it) {
    VecX g = eval_g(m, t, x, z, p);
    if (!g.allFinite()) {
      throw AlgebraicFailure("newton_algebraic: non-finite residual");
    }
    if (g.lpNorm<Eigen::Infinity>() <= tol) return z;
    Eigen::FullPivLU<MatX> lu(g_z_matrix(m, t, x, z, p));
    if (!lu.isInvertible()) {
      throw SingularJacobian("newton_algebraic: singular Jacobian");
    }
    z -= lu.solve(g);
  }
  // Accept a slightly looser stall if the residual is still tiny.
  VecX g = eval_g(m, t, x, z, p);
  if (g.lpNorm<Eigen::Infinity>() <= 100.0 * tol) return z;
  throw AlgebraicFailure("newton_algebraic: no convergence");
}

// Implicit-function tangents of the algebraic solution: for each seed column
// (dt, dx, dp) returns dz = -g_z^{-1} (g_t dt + g_x dx + g_p dp).  The z rows
// of `seeds` are ignored; z is the consistent solution at (t, x, p).
template <HybridModel M>
MatX algebraic_tangent(const M& m, double t, const VecX& x, const VecX& z,
                       const VecX& p, const TangentSeeds& seeds) {
  const Dims d = m.dims();
  if (d.n_z == 0) return MatX(0, seeds.count());

  Eigen::FullPivLU<MatX> lu(g_z_matrix(m, t, x, z, p));
  if (!lu.isInvertible()) {
    throw SingularJacobian("algebraic_tangent: singular g_z");
  }
  TangentSeeds s = seeds;
  s.dz = MatX::Zero(d.n_z, seeds.count());
  const MatX b = g_tangent(m, t, x, z, p, s).tangent;
  return -lu.solve(b);
}

// dz/dx as a matrix (IFT with identity x-seeds).
template <HybridModel M>
MatX algebraic_dz_dx(const M& m, double t, const VecX& x, const VecX& z,
                     const VecX& p) {
  const Dims d = m.dims();
  TangentSeeds s = TangentSeeds::zero(d.n_x, d.n_z, d.n_p, d.n_x);
  s.dx = MatX::Identity(d.n_x, d.n_x);
  return algebraic_tangent(m, t, x, z, p, s);
}

}  // namespace hybridae
