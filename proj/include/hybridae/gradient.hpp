#pragma once

// Shared result type, the finite-difference oracle, and small utilities for
// the two gradient back ends.

#include <cmath>
#include <limits>
#include <vector>

#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/target.hpp"
#include "hybridae/trajectory.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

// Loss value and its gradient with respect to the optimized parameters.
// `grad_valid` is false when the trajectory passed through a grazing event
// (the derivative is undefined there) or saturated the segment capacity; the
// loss is still reported so optimizers can react.
struct GradientReport {
  double loss = std::numeric_limits<double>::infinity();
  VecX grad;  // n_opt entries
  bool grad_valid = false;
  bool saturated = false;
  int n_events = 0;
  std::vector<GrazingWarning> grazing;
};

namespace detail {

inline VecX vec(const MatX& m) {
  return Eigen::Map<const VecX>(m.data(), m.size());
}

inline MatX unvec(const Eigen::Ref<const VecX>& v, int rows, int cols) {
  return Eigen::Map<const MatX>(v.data(), rows, cols);
}

}  // namespace detail

// Central finite-difference gradient of the simulation loss — the oracle the
// analytic routes are cross-checked against.  Each optimized parameter is
// probed at p_i +- eps_i with eps_i = eps_rel * |p_i| (eps_rel if p_i == 0).
// A component is flagged unstable when a probe changes the event count or
// saturates: there the difference quotient straddles a topology change and
// does not estimate a derivative.
struct FdGradient {
  double loss0 = std::numeric_limits<double>::infinity();
  VecX grad;                 // n_opt entries
  std::vector<char> stable;  // per component
  int n_events = 0;          // event count at the base point
};

template <HybridModel M>
FdGradient fd_gradient(const M& m, const VecX& p, double t1,
                       const TargetSet& targets, const BlendConfig& blend = {},
                       const SimConfig& cfg = {}, double eps_rel = 1e-6) {
  const ParameterLayout layout = m.layout();
  layout.validate();
  const int n_opt = layout.n_opt();

  FdGradient out;
  out.grad = VecX::Zero(n_opt);
  out.stable.assign(n_opt, 1);

  const EventSplitTrajectory base = simulate(m, p, t1, cfg);
  out.loss0 = loss(m, base, targets, blend, cfg.algebraic);
  out.n_events = base.n_events();

  for (int j = 0; j < n_opt; ++j) {
    const int idx = layout.opt_idx[j];
    const double pj = p(idx);
    const double eps = pj != 0.0 ? eps_rel * std::abs(pj) : eps_rel;
    auto probe = [&](double v) {
      VecX q = p;
      q(idx) = v;
      const EventSplitTrajectory traj = simulate(m, q, t1, cfg);
      if (traj.saturated || traj.n_events() != out.n_events) {
        out.stable[j] = 0;
      }
      return loss(m, traj, targets, blend, cfg.algebraic);
    };
    const double lp = probe(pj + eps);
    const double lm = probe(pj - eps);
    if (!std::isfinite(lp) || !std::isfinite(lm)) out.stable[j] = 0;
    out.grad(j) = (lp - lm) / (2.0 * eps);
  }
  return out;
}

}  // namespace hybridae
