#pragma once

// Model contract for semi-explicit hybrid DAEs
//
//   x' = f(t, x, z, p),   0 = g(t, x, z, p),   y = h(t, x, z, p)
//
// with event clauses e = 0..n_e-1 given by guard functions (positive before
// the event, crossing zero from above when it fires) and reset maps applied
// to the differential state.  All maps are templated over the scalar type so
// the same definitions serve plain evaluation and batched forward-mode
// differentiation.  Maps must be smooth in their arguments: no branches,
// comparisons, or non-differentiable functions of the scalars.

#include <concepts>
#include <span>
#include <vector>

#include "hybridae/dual.hpp"
#include "hybridae/params.hpp"
#include "hybridae/tangent.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

template <class M>
concept HybridModel = requires(const M m, int e, double td,
                               std::span<const double> sd, std::span<double> od,
                               Dual tdl, std::span<const Dual> sl,
                               std::span<Dual> ol) {
  { m.dims() } -> std::convertible_to<Dims>;
  { m.layout() } -> std::convertible_to<ParameterLayout>;
  { m.horizon() } -> std::convertible_to<double>;
  { m.x0() } -> std::convertible_to<VecX>;
  { m.z0_guess() } -> std::convertible_to<VecX>;
  { m.reset_targets(e) } -> std::convertible_to<const std::vector<int>&>;
  m.template f<double>(td, sd, sd, sd, od);
  m.template g<double>(td, sd, sd, sd, od);
  m.template h<double>(td, sd, sd, sd, od);
  { m.template guard<double>(e, td, sd, sd, sd) } -> std::convertible_to<double>;
  m.template reset<double>(e, td, sd, sd, sd, od);
  m.template f<Dual>(tdl, sl, sl, sl, ol);
  m.template g<Dual>(tdl, sl, sl, sl, ol);
  m.template h<Dual>(tdl, sl, sl, sl, ol);
  { m.template guard<Dual>(e, tdl, sl, sl, sl) } -> std::convertible_to<Dual>;
  m.template reset<Dual>(e, tdl, sl, sl, sl, ol);
};

// ---- plain (double) evaluation -------------------------------------------

template <HybridModel M>
VecX eval_f(const M& m, double t, const VecX& x, const VecX& z, const VecX& p) {
  VecX out(m.dims().n_x);
  m.template f<double>(t, as_span(x), as_span(z), as_span(p),
                       std::span<double>(out.data(), out.size()));
  return out;
}

template <HybridModel M>
VecX eval_g(const M& m, double t, const VecX& x, const VecX& z, const VecX& p) {
  VecX out(m.dims().n_z);
  m.template g<double>(t, as_span(x), as_span(z), as_span(p),
                       std::span<double>(out.data(), out.size()));
  return out;
}

template <HybridModel M>
VecX eval_h(const M& m, double t, const VecX& x, const VecX& z, const VecX& p) {
  VecX out(m.dims().n_y);
  m.template h<double>(t, as_span(x), as_span(z), as_span(p),
                       std::span<double>(out.data(), out.size()));
  return out;
}

template <HybridModel M>
double eval_guard(const M& m, int e, double t, const VecX& x, const VecX& z,
                  const VecX& p) {
  return m.template guard<double>(e, t, as_span(x), as_span(z), as_span(p));
}

template <HybridModel M>
VecX eval_reset(const M& m, int e, double t, const VecX& x, const VecX& z,
                const VecX& p) {
  VecX out(m.dims().n_x);
  m.template reset<double>(e, t, as_span(x), as_span(z), as_span(p),
                           std::span<double>(out.data(), out.size()));
  return out;
}

// ---- batched tangents -----------------------------------------------------

template <HybridModel M>
TangentBundle f_tangent(const M& m, double t, const VecX& x, const VecX& z,
                        const VecX& p, const TangentSeeds& seeds) {
  auto fn = [&m](const Dual& td, std::span<const Dual> xd,
                 std::span<const Dual> zd, std::span<const Dual> pd,
                 std::span<Dual> out) { m.template f<Dual>(td, xd, zd, pd, out); };
  return tangent_eval(fn, m.dims().n_x, t, x, z, p, seeds, "f");
}

template <HybridModel M>
TangentBundle g_tangent(const M& m, double t, const VecX& x, const VecX& z,
                        const VecX& p, const TangentSeeds& seeds) {
  auto fn = [&m](const Dual& td, std::span<const Dual> xd,
                 std::span<const Dual> zd, std::span<const Dual> pd,
                 std::span<Dual> out) { m.template g<Dual>(td, xd, zd, pd, out); };
  return tangent_eval(fn, m.dims().n_z, t, x, z, p, seeds, "g");
}

template <HybridModel M>
TangentBundle h_tangent(const M& m, double t, const VecX& x, const VecX& z,
                        const VecX& p, const TangentSeeds& seeds) {
  auto fn = [&m](const Dual& td, std::span<const Dual> xd,
                 std::span<const Dual> zd, std::span<const Dual> pd,
                 std::span<Dual> out) { m.template h<Dual>(td, xd, zd, pd, out); };
  return tangent_eval(fn, m.dims().n_y, t, x, z, p, seeds, "h");
}

template <HybridModel M>
TangentBundle guard_tangent(const M& m, int e, double t, const VecX& x,
                            const VecX& z, const VecX& p,
                            const TangentSeeds& seeds) {
  auto fn = [&m, e](const Dual& td, std::span<const Dual> xd,
                    std::span<const Dual> zd, std::span<const Dual> pd,
                    std::span<Dual> out) {
    out[0] = m.template guard<Dual>(e, td, xd, zd, pd);
  };
  return tangent_eval(fn, 1, t, x, z, p, seeds, "guard");
}

template <HybridModel M>
TangentBundle reset_tangent(const M& m, int e, double t, const VecX& x,
                            const VecX& z, const VecX& p,
                            const TangentSeeds& seeds) {
  auto fn = [&m, e](const Dual& td, std::span<const Dual> xd,
                    std::span<const Dual> zd, std::span<const Dual> pd,
                    std::span<Dual> out) {
    m.template reset<Dual>(e, td, xd, zd, pd, out);
  };
  return tangent_eval(fn, m.dims().n_x, t, x, z, p, seeds, "reset");
}

// Jacobian of g with respect to z at a point (identity seeds over z).
template <HybridModel M>
MatX g_z_matrix(const M& m, double t, const VecX& x, const VecX& z,
                const VecX& p) {
  const Dims d = m.dims();
  TangentSeeds s = TangentSeeds::zero(d.n_x, d.n_z, d.n_p, d.n_z);
  s.dz = MatX::Identity(d.n_z, d.n_z);
  return g_tangent(m, t, x, z, p, s).tangent;
}

}  // namespace hybridae
