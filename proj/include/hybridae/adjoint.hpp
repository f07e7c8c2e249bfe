#pragma once

// Discrete adjoint gradients over an event-split trajectory.
//
// The adaptive integration fixes a discretization skeleton: the number of
// segments, the event clause fired at each interior boundary and a normalized
// node grid eta in [0,1] per segment.  On that frozen skeleton the trajectory
// is re-solved as a fully discrete root-finding problem:
//
//   * node states obey an implicit trapezoid step plus the algebraic
//     constraint,  R_j = [ -x_j + x_{j-1} + (h_j/2)(f_{j-1} + f_j);
//                          g(t_j, x_j, z_j, p) ] = 0,
//   * each interior boundary time solves the guard condition
//     phi_e(tau, w_last(tau)) = 0 with node times t_j = tau_L + eta_j
//     (tau_R - tau_L),
//   * events tie consecutive segments together through the residual
//     E = [ phi(tau, w-); x+ - Psi rows (reset targets); x+ - x- rows
//     (untouched components); g(tau, x+, z+) ] = 0,
//   * the initial algebraic state closes the system through g(t0, x0, z0) = 0.
//
// The fitting loss is evaluated from the discrete nodes by piecewise-linear
// interpolation, with the algebraic output reconstruction re-solved at each
// target exactly as in the continuous pipeline.  The adjoint then
// differentiates THIS discrete problem: one transposed linear solve per step,
// one small rank-deficient multiplier system per event whose free direction
// is fixed by stationarity in the event time.  The result is the exact
// gradient of a consistent O(h^2) approximation of the continuous loss --
// the property that makes it verifiable against central finite differences
// of the discrete loss itself to near solver precision, with no integration
// noise in the comparison.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hybridae/algebraic.hpp"
#include "hybridae/errors.hpp"
#include "hybridae/gradient.hpp"
#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/target.hpp"
#include "hybridae/trajectory.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

struct AdjointConfig {
  int resample_nodes = 0;     // >= 2: uniform node count per segment; 0 keeps
                              // the skeleton grids
  double newton_tol = 1e-12;  // per-node residual target, infinity norm
  int newton_iters = 12;      // Newton cap per node
  double tau_tol = 1e-13;     // guard residual target of the event-time solve
  int tau_iters = 30;         // secant cap per event time
  double feas_step = 1e-10;   // acceptance threshold on step residuals
  double feas_event = 1e-9;   // acceptance threshold on event residuals
  double c_reg = 1e-12;       // sign-preserving shift guarding the event-time
                              // stationarity denominator
  double rank_rtol = 1e-11;   // relative rank threshold of the event SVD
};

// Re-solved node states on the frozen skeleton.  Reuses the segment/event
// block layout of the continuous trajectory; xdot holds f at the solved
// nodes and events carry the discrete boundary states.
struct DiscreteTrajectory {
  double t0 = 0.0, t_final = 0.0;
  VecX p;  // full parameter vector the nodes were solved with
  std::vector<SegmentBlock> segments;
  std::vector<EventBlock> events;
  double max_step_residual = 0.0;   // worst trapezoid/algebraic node residual
  double max_event_residual = 0.0;  // worst guard/post-event residual

  int n_segments() const { return static_cast<int>(segments.size()); }
  int n_events() const { return static_cast<int>(events.size()); }
};

namespace detail {

// Newton solve of the trapezoid step for the node at t_n, given the solved
// node (t_c, w_c).  Seeded from `seed`; returns the node state and stores the
// final residual norm in `res`.
template <HybridModel M>
VecX solve_trapezoid_node(const M& m, const VecX& p, double t_c,
                          const VecX& w_c, double t_n, const VecX& seed,
                          const AdjointConfig& acfg, double* res) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  const double h = t_n - t_c;
  const VecX f_c = eval_f(m, t_c, w_c.head(n_x), w_c.tail(n_z), p);

  TangentSeeds seeds = TangentSeeds::zero(n_x, n_z, dims.n_p, n_w);
  seeds.dx.leftCols(n_x).setIdentity();
  seeds.dz.rightCols(n_z).setIdentity();

  VecX w = seed;
  VecX r(n_w);
  MatX jac(n_w, n_w);
  double rnorm = std::numeric_limits<double>::infinity();
  int it = 0;
  for (;;) {
    const VecX x_n = w.head(n_x), z_n = w.tail(n_z);
    const TangentBundle fb = f_tangent(m, t_n, x_n, z_n, p, seeds);
    r.head(n_x) = -x_n + w_c.head(n_x) + (h / 2.0) * (f_c + fb.value);
    jac.topRows(n_x) = (h / 2.0) * fb.tangent;
    jac.topLeftCorner(n_x, n_x) -= MatX::Identity(n_x, n_x);
    if (n_z > 0) {
      const TangentBundle gb = g_tangent(m, t_n, x_n, z_n, p, seeds);
      r.tail(n_z) = gb.value;
      jac.bottomRows(n_z) = gb.tangent;
    }
    rnorm = r.lpNorm<Eigen::Infinity>();
    if (rnorm <= acfg.newton_tol || it >= acfg.newton_iters) break;
    Eigen::FullPivLU<MatX> lu(jac);
    if (!lu.isInvertible()) {
      throw StaleTrajectory("discrete re-solve: singular step Jacobian");
    }
    w -= lu.solve(r);
    ++it;
  }
  // Accept a mild stall; anything worse means the skeleton no longer
  // describes this parameter point.
  if (!w.allFinite() || rnorm > 100.0 * acfg.newton_tol) {
    throw StaleTrajectory("discrete re-solve: node Newton stalled at residual " +
                          std::to_string(rnorm));
  }
  *res = rnorm;
  return w;
}

// Marches all nodes of one segment for a candidate end time.  Seeds come
// from a previous march of the same segment when given (warm), else from the
// skeleton interpolants.  Returns the (n_x + n_z) x n_nodes node matrix.
template <HybridModel M>
MatX march_segment(const M& m, const VecX& p, double t_start, double t_end,
                   const VecX& eta, const VecX& w_start,
                   const SegmentBlock& skeleton_seg, const MatX* warm,
                   const AdjointConfig& acfg, double* max_res) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  const int n = static_cast<int>(eta.size());
  const double span = t_end - t_start;
  MatX nodes(n_w, n);
  nodes.col(0) = w_start;
  *max_res = 0.0;
  for (int j = 1; j < n; ++j) {
    const double t_c = t_start + eta(j - 1) * span;
    const double t_n = t_start + eta(j) * span;
    VecX seed;
    if (warm != nullptr && warm->cols() == n) {
      seed = warm->col(j);
    } else {
      const double tc = clip_time(t_n, skeleton_seg.t_start, skeleton_seg.t_end);
      seed.resize(n_w);
      seed.head(n_x) = interp_x(skeleton_seg, tc);
      seed.tail(n_z) = interp_z_linear(skeleton_seg, tc);
    }
    double res = 0.0;
    nodes.col(j) = solve_trapezoid_node(m, p, t_c, VecX(nodes.col(j - 1)), t_n,
                                        seed, acfg, &res);
    *max_res = std::max(*max_res, res);
  }
  return nodes;
}

}  // namespace detail

// Re-solves the trajectory as the discrete system described above, keeping
// the skeleton's segment count, clause order and (unless resampled) node
// grids.  `p` may differ from the parameters the skeleton was produced with;
// this is what makes frozen-topology finite differences of the discrete loss
// well defined.  Throws StaleTrajectory when the skeleton no longer fits.
template <HybridModel M>
DiscreteTrajectory resolve_discrete_trajectory(const M& m,
                                               const EventSplitTrajectory& skeleton,
                                               const VecX& p,
                                               const AdjointConfig& acfg = {}) {
  const Dims dims = m.dims();
  dims.validate();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  if (p.size() != dims.n_p) {
    throw InvalidArgument("resolve_discrete_trajectory: parameter size mismatch");
  }
  if (skeleton.saturated) {
    throw InvalidArgument("resolve_discrete_trajectory: saturated skeleton");
  }
  if (skeleton.n_segments() == 0) {
    throw InvalidArgument("resolve_discrete_trajectory: empty skeleton");
  }

  DiscreteTrajectory dt;
  dt.t0 = skeleton.t0;
  dt.t_final = skeleton.t_final;
  dt.p = p;

  // Initial node: x0 is data, z0 closes the algebraic constraint at t0.
  const VecX x_init = m.x0();
  VecX z_init;
  if (n_z > 0) {
    z_init = newton_algebraic(m, skeleton.t0, x_init, p,
                              VecX(skeleton.segments[0].z.col(0)),
                              acfg.newton_tol);
  }
  VecX w_start(n_w);
  w_start.head(n_x) = x_init;
  w_start.tail(n_z) = z_init;

  double t_start = skeleton.t0;
  const int n_segs = skeleton.n_segments();
  for (int k = 0; k < n_segs; ++k) {
    const SegmentBlock& rk = skeleton.segments[k];
    const VecX eta = acfg.resample_nodes >= 2
                         ? VecX(VecX::LinSpaced(acfg.resample_nodes, 0.0, 1.0))
                         : rk.eta;
    const bool last = (k == n_segs - 1);

    double t_end = 0.0, seg_res = 0.0, psi_final = 0.0;
    MatX nodes;
    if (last) {
      t_end = skeleton.t_final;
      nodes = detail::march_segment(m, p, t_start, t_end, eta, w_start, rk,
                                    nullptr, acfg, &seg_res);
    } else {
      const EventBlock& ev = skeleton.events[k];
      const int e = ev.event_index;
      // Secant root of psi(tau) = phi_e(tau, w_last(tau)); each evaluation
      // re-marches the segment with warm node seeds from the previous one.
      MatX cur;
      bool have_cur = false;
      double best_tau = 0.0, best_psi = std::numeric_limits<double>::infinity();
      double best_res = 0.0;
      MatX best_nodes;
      auto eval_tau = [&](double tau) {
        double res = 0.0;
        cur = detail::march_segment(m, p, t_start, tau, eta, w_start, rk,
                                    have_cur ? &cur : nullptr, acfg, &res);
        have_cur = true;
        const double psi =
            eval_guard(m, e, tau, VecX(cur.col(eta.size() - 1).head(n_x)),
                       VecX(cur.col(eta.size() - 1).tail(n_z)), p);
        if (std::abs(psi) < std::abs(best_psi)) {
          best_tau = tau;
          best_psi = psi;
          best_res = res;
          best_nodes = cur;
        }
        return psi;
      };
      double tau_a = ev.tau;
      double psi_a = eval_tau(tau_a);
      if (std::abs(psi_a) > acfg.tau_tol) {
        const double slope = ev.guard_slope;
        if (!(slope < 0.0)) {
          throw StaleTrajectory(
              "discrete re-solve: event-time solve needs a transversal "
              "skeleton event");
        }
        double tau_b = tau_a - psi_a / slope;
        for (int it = 0; it < acfg.tau_iters; ++it) {
          if (!std::isfinite(tau_b) || tau_b <= t_start) {
            throw StaleTrajectory(
                "discrete re-solve: event time left the segment");
          }
          const double psi_b = eval_tau(tau_b);
          if (std::abs(psi_b) <= acfg.tau_tol) break;
          const double denom = psi_b - psi_a;
          if (denom == 0.0) break;
          const double tau_c = tau_b - psi_b * (tau_b - tau_a) / denom;
          tau_a = tau_b;
          psi_a = psi_b;
          tau_b = tau_c;
        }
      }
      t_end = best_tau;
      nodes = best_nodes;
      seg_res = best_res;
      psi_final = best_psi;
    }

    SegmentBlock seg;
    seg.t_start = t_start;
    seg.t_end = t_end;
    seg.eta = eta;
    seg.x = nodes.topRows(n_x);
    seg.z = nodes.bottomRows(n_z);
    const int n = seg.n_nodes();
    seg.xdot.resize(n_x, n);
    for (int j = 0; j < n; ++j) {
      seg.xdot.col(j) = eval_f(m, seg.node_time(j), VecX(seg.x.col(j)),
                               VecX(seg.z.col(j)), p);
    }
    dt.segments.push_back(seg);
    dt.max_step_residual = std::max(dt.max_step_residual, seg_res);

    if (!last) {
      const int e = skeleton.events[k].event_index;
      EventBlock eb;
      eb.tau = t_end;
      eb.event_index = e;
      eb.x_minus = seg.x.col(n - 1);
      eb.z_minus = seg.z.col(n - 1);
      eb.x_plus = eb.x_minus;
      const VecX psi_reset = eval_reset(m, e, t_end, eb.x_minus, eb.z_minus, p);
      for (int rT : m.reset_targets(e)) eb.x_plus(rT) = psi_reset(rT);
      if (n_z > 0) {
        eb.z_plus = newton_algebraic(m, t_end, eb.x_plus, p, eb.z_minus,
                                     acfg.newton_tol);
      }
      // Guard slope along the pre-event flow (diagnostic).
      TangentSeeds gs = TangentSeeds::zero(n_x, n_z, dims.n_p, 1);
      gs.dt(0) = 1.0;
      gs.dx.col(0) = seg.xdot.col(n - 1);
      if (n_z > 0) {
        gs.dz = algebraic_tangent(m, t_end, eb.x_minus, eb.z_minus, p, gs);
      }
      eb.guard_slope =
          guard_tangent(m, e, t_end, eb.x_minus, eb.z_minus, p, gs).tangent(0, 0);

      double ev_res = std::abs(psi_final);
      if (n_z > 0) {
        const VecX g_res = eval_g(m, t_end, eb.x_plus, eb.z_plus, p);
        ev_res = std::max(ev_res, g_res.lpNorm<Eigen::Infinity>());
      }
      dt.max_event_residual = std::max(dt.max_event_residual, ev_res);
      dt.events.push_back(std::move(eb));

      w_start.head(n_x) = dt.events.back().x_plus;
      w_start.tail(n_z) = dt.events.back().z_plus;
      t_start = t_end;
    }
  }

  if (dt.max_step_residual > acfg.feas_step) {
    throw StaleTrajectory("discrete re-solve: step residual " +
                          std::to_string(dt.max_step_residual) +
                          " exceeds the feasibility threshold");
  }
  if (dt.max_event_residual > acfg.feas_event) {
    throw StaleTrajectory("discrete re-solve: event residual " +
                          std::to_string(dt.max_event_residual) +
                          " exceeds the feasibility threshold");
  }
  return dt;
}

// ---- discrete predictions and loss ------------------------------------------

// One target reconstructed from the discrete nodes: hard/soft selection as in
// the continuous pipeline, piecewise-linear state interpolation, algebraic
// re-solve and output map.  Keeps the intermediate pieces the adjoint loads
// need.
struct DiscreteTargetEval {
  int ks = -1;     // hard-selected segment
  double tc = 0.0; // target time clipped into that segment
  VecX w_raw;      // unnormalized soft windows per segment (soft mode)
  double w_den = 1.0;
  MatX cand;       // n_x x n_segments clipped candidates (soft mode)
  VecX cand_tc;    // per-segment clipped times (soft mode)
  VecX x_hat, z_hat, y_hat;
};

template <HybridModel M>
DiscreteTargetEval reconstruct_discrete_target(const M& m,
                                               const DiscreteTrajectory& dt,
                                               double t,
                                               const BlendConfig& blend,
                                               const AdjointConfig& acfg) {
  const Dims dims = m.dims();
  const int n_seg = dt.n_segments();
  DiscreteTargetEval ev;
  for (int k = 0; k < n_seg; ++k) {
    const SegmentBlock& seg = dt.segments[k];
    if (t >= seg.t_start && t <= seg.t_end) ev.ks = k;
  }
  if (ev.ks < 0) {
    throw InvalidArgument("discrete target time outside the trajectory span");
  }
  const SegmentBlock& sel = dt.segments[ev.ks];
  ev.tc = clip_time(t, sel.t_start, sel.t_end);

  if (blend.mode == BlendMode::hard) {
    ev.x_hat = linear_interp(sel, sel.x, ev.tc);
  } else {
    ev.w_raw.resize(n_seg);
    ev.cand.resize(dims.n_x, n_seg);
    ev.cand_tc.resize(n_seg);
    for (int k = 0; k < n_seg; ++k) {
      const SegmentBlock& seg = dt.segments[k];
      ev.w_raw(k) = soft_window(t, seg.t_start, seg.t_end, blend.beta);
      ev.cand_tc(k) = clip_time(t, seg.t_start, seg.t_end);
      ev.cand.col(k) = linear_interp(seg, seg.x, ev.cand_tc(k));
    }
    ev.w_den = ev.w_raw.sum() + blend.eps_omega;
    ev.x_hat = VecX::Zero(dims.n_x);
    for (int k = 0; k < n_seg; ++k) {
      ev.x_hat += (ev.w_raw(k) / ev.w_den) * ev.cand.col(k);
    }
  }
  const VecX z_warm = dims.n_z > 0
                          ? VecX(sel.z.col(bracket_node(sel, ev.tc)))
                          : VecX();
  ev.z_hat = newton_algebraic(m, t, ev.x_hat, dt.p, z_warm, acfg.newton_tol);
  ev.y_hat = eval_h(m, t, ev.x_hat, ev.z_hat, dt.p);
  return ev;
}

// Predicted outputs at the target times from the discrete nodes (n_y x N).
template <HybridModel M>
MatX discrete_predictions(const M& m, const DiscreteTrajectory& dt,
                          const VecX& times, const BlendConfig& blend,
                          const AdjointConfig& acfg = {}) {
  MatX yhat(m.dims().n_y, times.size());
  for (int i = 0; i < times.size(); ++i) {
    yhat.col(i) = reconstruct_discrete_target(m, dt, times(i), blend, acfg).y_hat;
  }
  return yhat;
}

// Mean squared output mismatch of the discrete trajectory.  This is the
// objective the adjoint differentiates exactly.
template <HybridModel M>
double discrete_loss(const M& m, const DiscreteTrajectory& dt,
                     const TargetSet& targets, const BlendConfig& blend,
                     const AdjointConfig& acfg = {}) {
  if (targets.data.rows() != m.dims().n_y ||
      targets.data.cols() != targets.count()) {
    throw InvalidArgument("discrete_loss: data shape mismatch");
  }
  double acc = 0.0;
  for (int i = 0; i < targets.count(); ++i) {
    const DiscreteTargetEval ev =
        reconstruct_discrete_target(m, dt, targets.times(i), blend, acfg);
    acc += (ev.y_hat - targets.data.col(i)).squaredNorm();
  }
  return acc / targets.count();
}

// ---- loss loads --------------------------------------------------------------

// Pullback of the discrete loss onto the things the discrete system treats as
// unknowns: node states (z rows stay zero -- the target reconstruction solves
// z implicitly from the blended state, so its chain folds into the x loads
// and the direct parameter term), per-segment boundary times (interpolation
// abscissae move with the boundaries; soft windows depend on them directly)
// and the explicit parameter dependence of h and g at the targets.
struct LossLoads {
  double value = 0.0;           // the discrete loss itself
  std::vector<MatX> node;       // per segment: (n_x + n_z) x n_nodes
  std::vector<double> q_ts;     // per segment: load on its start time
  std::vector<double> q_te;     // per segment: load on its end time
  VecX ell_p;                   // direct parameter load (n_opt)
};

namespace detail {

// Distributes the x_hat pullback `u` of one interpolation candidate onto the
// node stencil and, when the target time was not clipped, onto the boundary
// times through the moving abscissae: theta = (t - t_j)/(t_{j+1} - t_j) with
// d theta/d t_j = (theta - 1)/dt, d theta/d t_{j+1} = -theta/dt and
// t_j = tau_L + eta_j (tau_R - tau_L).  Clipped candidates track a node
// exactly, so their abscissa chain vanishes.
inline void add_candidate_loads(const SegmentBlock& seg, double t, double tc,
                                double weight, const VecX& u, MatX& node_loads,
                                double& q_ts, double& q_te) {
  const int n_x = static_cast<int>(u.size());
  const int j = bracket_node(seg, tc);
  const double tj = seg.node_time(j), tj1 = seg.node_time(j + 1);
  const double dt = tj1 - tj;
  const double th = dt > 0.0 ? (tc - tj) / dt : 0.0;
  node_loads.col(j).head(n_x) += weight * (1.0 - th) * u;
  node_loads.col(j + 1).head(n_x) += weight * th * u;
  const bool clipped = (t < seg.t_start) || (t > seg.t_end);
  if (!clipped && dt > 0.0) {
    const double base = weight * u.dot(seg.x.col(j + 1) - seg.x.col(j)) / dt;
    const double load_tj = base * (th - 1.0);
    const double load_tj1 = base * (-th);
    q_ts += load_tj * (1.0 - seg.eta(j)) + load_tj1 * (1.0 - seg.eta(j + 1));
    q_te += load_tj * seg.eta(j) + load_tj1 * seg.eta(j + 1);
  }
}

}  // namespace detail

template <HybridModel M>
LossLoads loss_loads(const M& m, const DiscreteTrajectory& dt,
                     const TargetSet& targets, const BlendConfig& blend,
                     const AdjointConfig& acfg = {}) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  const ParameterLayout layout = m.layout();
  const int n_opt = layout.n_opt();
  const MatX sel = opt_seed_matrix(layout);
  if (targets.data.rows() != dims.n_y ||
      targets.data.cols() != targets.count()) {
    throw InvalidArgument("loss_loads: data shape mismatch");
  }

  LossLoads out;
  out.node.reserve(dt.n_segments());
  for (const SegmentBlock& seg : dt.segments) {
    out.node.push_back(MatX::Zero(n_w, seg.n_nodes()));
  }
  out.q_ts.assign(dt.n_segments(), 0.0);
  out.q_te.assign(dt.n_segments(), 0.0);
  out.ell_p = VecX::Zero(n_opt);

  const double n_obs = targets.count();
  double acc = 0.0;
  // Identity seeds over (t, x, z, p_opt) reused at every target point.
  const int k_seeds = 1 + n_x + n_z + n_opt;
  TangentSeeds seeds = TangentSeeds::zero(n_x, n_z, dims.n_p, k_seeds);
  seeds.dt(0) = 1.0;
  seeds.dx.middleCols(1, n_x).setIdentity();
  seeds.dz.middleCols(1 + n_x, n_z).setIdentity();
  seeds.dp.rightCols(n_opt) = sel;

  for (int i = 0; i < targets.count(); ++i) {
    const double t = targets.times(i);
    const DiscreteTargetEval ev =
        reconstruct_discrete_target(m, dt, t, blend, acfg);
    const VecX r = ev.y_hat - targets.data.col(i);
    acc += r.squaredNorm();
    const VecX rbar = (2.0 / n_obs) * r;

    // Pullback through the output map and the implicit algebraic solve:
    // u = (h_x - h_z g_z^{-1} g_x)^T rbar on x_hat, plus the direct p term.
    const TangentBundle hb =
        h_tangent(m, t, ev.x_hat, ev.z_hat, dt.p, seeds);
    const MatX h_x = hb.tangent.middleCols(1, n_x);
    VecX u = h_x.transpose() * rbar;
    out.ell_p += hb.tangent.rightCols(n_opt).transpose() * rbar;
    if (n_z > 0) {
      const MatX h_z = hb.tangent.middleCols(1 + n_x, n_z);
      const TangentBundle gb =
          g_tangent(m, t, ev.x_hat, ev.z_hat, dt.p, seeds);
      const MatX g_x = gb.tangent.middleCols(1, n_x);
      const MatX g_z = gb.tangent.middleCols(1 + n_x, n_z);
      Eigen::FullPivLU<MatX> lu(g_z.transpose());
      if (!lu.isInvertible()) {
        throw SingularJacobian("loss_loads: singular g_z at a target");
      }
      const VecX q = lu.solve(h_z.transpose() * rbar);
      u -= g_x.transpose() * q;
      out.ell_p -= gb.tangent.rightCols(n_opt).transpose() * q;
    }

    if (blend.mode == BlendMode::hard) {
      detail::add_candidate_loads(dt.segments[ev.ks], t, ev.tc, 1.0, u,
                                  out.node[ev.ks], out.q_ts[ev.ks],
                                  out.q_te[ev.ks]);
    } else {
      const double s_hat = u.dot(ev.x_hat);
      for (int k = 0; k < dt.n_segments(); ++k) {
        const SegmentBlock& seg = dt.segments[k];
        const double wbar = ev.w_raw(k) / ev.w_den;
        detail::add_candidate_loads(seg, t, ev.cand_tc(k), wbar, u,
                                    out.node[k], out.q_ts[k], out.q_te[k]);
        // Window chain: d loss / d omega_k through the normalization, then
        // omega_k = sigma(beta (t - a)) sigma(beta (b - t)) onto (a, b).
        const double dldw = (u.dot(ev.cand.col(k)) - s_hat) / ev.w_den;
        const double su = sigmoid(blend.beta * (t - seg.t_start));
        const double sv = sigmoid(blend.beta * (seg.t_end - t));
        out.q_ts[k] += dldw * (-blend.beta * su * (1.0 - su) * sv);
        out.q_te[k] += dldw * (blend.beta * su * sv * (1.0 - sv));
      }
    }
  }
  out.value = acc / n_obs;
  return out;
}

// ---- step Jacobians and the reverse sweep ------------------------------------

// Jacobian blocks of the model maps at one node, restricted to the optimized
// parameter directions.
struct NodeJac {
  VecX f;           // n_x
  VecX f_t;         // n_x
  MatX f_x, f_z, f_p;
  VecX g_t;         // n_z
  MatX g_x, g_z, g_p;
};

// Per-step blocks of the trapezoid residual R(w_c, w_n, t_c, t_n, p) and the
// factorization of d R / d w_n transposed, used by the reverse sweep.
struct StepJac {
  MatX Jc, Jn, Jp;  // n_w x n_w, n_w x n_w, n_w x n_opt
  VecX dc, dn;      // n_w: d R / d t_c, d R / d t_n
  Eigen::FullPivLU<MatX> lu_JnT;
};

struct SegmentWorkspace {
  const SegmentBlock* seg = nullptr;
  std::vector<NodeJac> node;  // per node
  std::vector<StepJac> step;  // step j couples nodes j and j+1; size n-1
};

namespace detail {

template <HybridModel M>
NodeJac node_jacobians(const M& m, const VecX& p, const MatX& sel, double t,
                       const VecX& x, const VecX& z) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z;
  const int n_opt = static_cast<int>(sel.cols());
  const int k = 1 + n_x + n_z + n_opt;
  TangentSeeds seeds = TangentSeeds::zero(n_x, n_z, dims.n_p, k);
  seeds.dt(0) = 1.0;
  seeds.dx.middleCols(1, n_x).setIdentity();
  seeds.dz.middleCols(1 + n_x, n_z).setIdentity();
  seeds.dp.rightCols(n_opt) = sel;

  NodeJac nj;
  const TangentBundle fb = f_tangent(m, t, x, z, p, seeds);
  nj.f = fb.value;
  nj.f_t = fb.tangent.col(0);
  nj.f_x = fb.tangent.middleCols(1, n_x);
  nj.f_z = fb.tangent.middleCols(1 + n_x, n_z);
  nj.f_p = fb.tangent.rightCols(n_opt);
  if (n_z > 0) {
    const TangentBundle gb = g_tangent(m, t, x, z, p, seeds);
    nj.g_t = gb.tangent.col(0);
    nj.g_x = gb.tangent.middleCols(1, n_x);
    nj.g_z = gb.tangent.middleCols(1 + n_x, n_z);
    nj.g_p = gb.tangent.rightCols(n_opt);
  } else {
    nj.g_t = VecX(0);
    nj.g_x = MatX(0, n_x);
    nj.g_z = MatX(0, 0);
    nj.g_p = MatX(0, n_opt);
  }
  return nj;
}

}  // namespace detail

// Builds the per-node Jacobians and per-step factorizations of one segment.
// The workspace is reused across reverse sweeps with different loads.
template <HybridModel M>
SegmentWorkspace build_segment_workspace(const M& m, const VecX& p,
                                         const MatX& sel,
                                         const SegmentBlock& seg) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  const int n_opt = static_cast<int>(sel.cols());
  const int n = seg.n_nodes();
  SegmentWorkspace ws;
  ws.seg = &seg;
  ws.node.reserve(n);
  for (int j = 0; j < n; ++j) {
    ws.node.push_back(detail::node_jacobians(m, p, sel, seg.node_time(j),
                                             VecX(seg.x.col(j)),
                                             VecX(seg.z.col(j))));
  }
  ws.step.resize(n - 1);
  for (int j = 1; j < n; ++j) {
    const NodeJac& nc = ws.node[j - 1];
    const NodeJac& nn = ws.node[j];
    const double h = seg.node_time(j) - seg.node_time(j - 1);
    StepJac& st = ws.step[j - 1];
    st.Jc = MatX::Zero(n_w, n_w);
    st.Jc.topLeftCorner(n_x, n_x) =
        MatX::Identity(n_x, n_x) + (h / 2.0) * nc.f_x;
    st.Jc.topRightCorner(n_x, n_z) = (h / 2.0) * nc.f_z;
    st.Jn = MatX::Zero(n_w, n_w);
    st.Jn.topLeftCorner(n_x, n_x) =
        -MatX::Identity(n_x, n_x) + (h / 2.0) * nn.f_x;
    st.Jn.topRightCorner(n_x, n_z) = (h / 2.0) * nn.f_z;
    st.Jn.bottomLeftCorner(n_z, n_x) = nn.g_x;
    st.Jn.bottomRightCorner(n_z, n_z) = nn.g_z;
    st.Jp.resize(n_w, n_opt);
    st.Jp.topRows(n_x) = (h / 2.0) * (nc.f_p + nn.f_p);
    st.Jp.bottomRows(n_z) = nn.g_p;
    const VecX f_avg = 0.5 * (nc.f + nn.f);
    st.dc.resize(n_w);
    st.dc.head(n_x) = -f_avg + (h / 2.0) * nc.f_t;
    st.dc.tail(n_z).setZero();
    st.dn.resize(n_w);
    st.dn.head(n_x) = f_avg + (h / 2.0) * nn.f_t;
    st.dn.tail(n_z) = nn.g_t;
    st.lu_JnT.compute(st.Jn.transpose());
    if (!st.lu_JnT.isInvertible()) {
      throw AdjointLinearFailure("reverse sweep: singular step Jacobian");
    }
  }
  return ws;
}

// Output of one reverse sweep: the load left on node 0, the parameter
// accumulation and the loads on the segment's boundary times.  stationarity
// is the worst residual of the transposed step solves.
struct SweepResult {
  VecX a0;
  VecX q_p;
  double q_ts = 0.0;
  double q_te = 0.0;
  double stationarity = 0.0;
};

// Reverse sweep of one segment: solves Jn^T lambda = -a backwards over the
// steps, accumulating q_p += Jp^T lambda and mapping the time loads onto the
// boundary times through t_j = tau_L + eta_j (tau_R - tau_L).  `loads` holds
// the per-node loss loads (plus any event coupling on the last node);
// qts/qte seed the boundary-time accumulators with the loss's direct terms.
inline SweepResult sweep_segment(const SegmentWorkspace& ws, const MatX& loads,
                                 double qts_seed, double qte_seed, int n_opt) {
  const SegmentBlock& seg = *ws.seg;
  const int n = seg.n_nodes();
  SweepResult out;
  out.q_p = VecX::Zero(n_opt);
  out.q_ts = qts_seed;
  out.q_te = qte_seed;
  VecX a = loads.col(n - 1);
  for (int j = n - 1; j >= 1; --j) {
    const StepJac& st = ws.step[j - 1];
    const VecX lambda = st.lu_JnT.solve(-a);
    out.stationarity =
        std::max(out.stationarity,
                 (st.Jn.transpose() * lambda + a).lpNorm<Eigen::Infinity>());
    out.q_p += st.Jp.transpose() * lambda;
    const double tl_c = st.dc.dot(lambda);
    const double tl_n = st.dn.dot(lambda);
    out.q_ts += tl_c * (1.0 - seg.eta(j - 1)) + tl_n * (1.0 - seg.eta(j));
    out.q_te += tl_c * seg.eta(j - 1) + tl_n * seg.eta(j);
    a = loads.col(j - 1) + st.Jc.transpose() * lambda;
  }
  out.a0 = a;
  return out;
}

// ---- event residual system ----------------------------------------------------

// Jacobian blocks of the event residual
//   E = [ phi(tau, w-); x+ - Psi rows / x+ - x- rows; g(tau, w+) ]
// with respect to the post state (A), the pre state (B), the event time
// (e_tau) and the optimized parameters (C), plus the residual value itself.
struct EventSystem {
  MatX A;        // (1 + n_w) x n_w
  MatX B;        // (1 + n_w) x n_w
  MatX C;        // (1 + n_w) x n_opt
  VecX e_tau;    // 1 + n_w
  VecX residual; // 1 + n_w
};

template <HybridModel M>
EventSystem build_event_system(const M& m, const VecX& p, const MatX& sel,
                               double tau, const VecX& x_minus,
                               const VecX& z_minus, const VecX& x_plus,
                               const VecX& z_plus, int e) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  const int n_opt = static_cast<int>(sel.cols());
  const int k = 1 + n_x + n_z + n_opt;
  TangentSeeds seeds = TangentSeeds::zero(n_x, n_z, dims.n_p, k);
  seeds.dt(0) = 1.0;
  seeds.dx.middleCols(1, n_x).setIdentity();
  seeds.dz.middleCols(1 + n_x, n_z).setIdentity();
  seeds.dp.rightCols(n_opt) = sel;

  const TangentBundle gt = guard_tangent(m, e, tau, x_minus, z_minus, p, seeds);
  const TangentBundle rt = reset_tangent(m, e, tau, x_minus, z_minus, p, seeds);
  std::vector<char> is_target(n_x, 0);
  for (int rT : m.reset_targets(e)) is_target[rT] = 1;

  EventSystem es;
  es.A = MatX::Zero(1 + n_w, n_w);
  es.B = MatX::Zero(1 + n_w, n_w);
  es.C = MatX::Zero(1 + n_w, n_opt);
  es.e_tau = VecX::Zero(1 + n_w);
  es.residual = VecX::Zero(1 + n_w);

  // phi row: depends on (tau, w-) only.
  es.B.row(0).head(n_x) = gt.tangent.row(0).segment(1, n_x);
  es.B.row(0).segment(n_x, n_z) = gt.tangent.row(0).segment(1 + n_x, n_z);
  es.e_tau(0) = gt.tangent(0, 0);
  es.C.row(0) = gt.tangent.row(0).tail(n_opt);
  es.residual(0) = gt.value(0);

  // state rows: x+ appears with identity; reset targets subtract Psi at
  // (tau, w-), untouched components subtract x-.
  for (int i = 0; i < n_x; ++i) {
    es.A(1 + i, i) = 1.0;
    if (is_target[i]) {
      es.B.row(1 + i).head(n_x) = -rt.tangent.row(i).segment(1, n_x);
      es.B.row(1 + i).segment(n_x, n_z) =
          -rt.tangent.row(i).segment(1 + n_x, n_z);
      es.e_tau(1 + i) = -rt.tangent(i, 0);
      es.C.row(1 + i) = -rt.tangent.row(i).tail(n_opt);
      es.residual(1 + i) = x_plus(i) - rt.value(i);
    } else {
      es.B(1 + i, i) = -1.0;
      es.residual(1 + i) = x_plus(i) - x_minus(i);
    }
  }

  // post-event algebraic rows: depend on (tau, w+).
  if (n_z > 0) {
    const TangentBundle gb = g_tangent(m, tau, x_plus, z_plus, p, seeds);
    es.A.block(1 + n_x, 0, n_z, n_x) = gb.tangent.middleCols(1, n_x);
    es.A.block(1 + n_x, n_x, n_z, n_z) = gb.tangent.middleCols(1 + n_x, n_z);
    es.e_tau.tail(n_z) = gb.tangent.col(0);
    es.C.bottomRows(n_z) = gb.tangent.rightCols(n_opt);
    es.residual.tail(n_z) = gb.value;
  }
  return es;
}

// Stationarity in the post-event state reads A^T mu = -a_plus: n_w equations
// in n_w + 1 multipliers.  Returns the minimum-norm particular solution and
// the kernel direction of A^T (sign-normalized so its first nonzero component
// is positive); the kernel coefficient is fixed later by stationarity in the
// event time.  Rank loss means the event conditions do not determine the
// post state and is reported as DegenerateEvent.
struct EventMultiplier {
  VecX mu0;  // minimum-norm solution of A^T mu = -a_plus
  VecX v;    // kernel direction of A^T, unit norm
};

inline EventMultiplier solve_event_multiplier(const MatX& A, const VecX& a_plus,
                                              double rank_rtol = 1e-11) {
  const int n_w = static_cast<int>(A.cols());
  if (A.rows() != n_w + 1 || a_plus.size() != n_w) {
    throw InvalidArgument("solve_event_multiplier: shape mismatch");
  }
  Eigen::JacobiSVD<MatX> svd(A.transpose(),
                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  svd.setThreshold(rank_rtol);
  if (svd.rank() < n_w) {
    throw DegenerateEvent("event residual Jacobian is rank deficient");
  }
  EventMultiplier em;
  em.mu0 = svd.solve(-a_plus);
  em.v = svd.matrixV().col(n_w);
  for (int i = 0; i < em.v.size(); ++i) {
    if (std::abs(em.v(i)) > 1e-14) {
      if (em.v(i) < 0.0) em.v = -em.v;
      break;
    }
  }
  return em;
}

// Fixes the kernel coefficient from the event-time stationarity equation
// q0 + c qv = 0, shifting the denominator by a sign-preserving epsilon so a
// nearly tangential configuration degrades gracefully instead of dividing by
// zero.  Returns (c, regularized denominator).
inline std::pair<double, double> resolve_event_coefficient(double q0, double qv,
                                                           double reg = 1e-12) {
  const double den = qv + (qv >= 0.0 ? reg : -reg);
  return {-q0 / den, den};
}

// ---- gradient assembly ---------------------------------------------------------

struct AdjointEventDiag {
  double tau = 0.0;
  double c = 0.0;            // kernel coefficient fixed by the time equation
  double denominator = 0.0;  // regularized stationarity denominator
  double residual = 0.0;     // ||E||_inf of the discrete event conditions
};

struct AdjointGradient : GradientReport {
  double max_step_residual = 0.0;
  double max_event_residual = 0.0;
  // Worst stationarity residual over step solves, event multiplier systems,
  // event-time equations and the initial algebraic closure.
  double stationarity_residual = 0.0;
  std::vector<AdjointEventDiag> event_diag;
};

// Discrete adjoint gradient over a given skeleton.  The reported loss is the
// discrete loss (the objective actually differentiated); saturated skeletons
// return +inf with an invalid gradient, grazing skeletons report the
// continuous-pipeline loss with an invalid gradient since the event time is
// not differentiable there.
template <HybridModel M>
AdjointGradient adjoint_on_trajectory(const M& m,
                                      const EventSplitTrajectory& skeleton,
                                      const TargetSet& targets,
                                      const BlendConfig& blend = {},
                                      const AdjointConfig& acfg = {}) {
  const Dims dims = m.dims();
  const int n_x = dims.n_x, n_z = dims.n_z, n_w = n_x + n_z;
  const ParameterLayout layout = m.layout();
  layout.validate();
  const int n_opt = layout.n_opt();
  const MatX sel = opt_seed_matrix(layout);
  if (targets.data.rows() != dims.n_y ||
      targets.data.cols() != targets.count()) {
    throw InvalidArgument("adjoint_on_trajectory: data shape mismatch");
  }

  AdjointGradient out;
  out.grad = VecX::Zero(n_opt);
  out.n_events = skeleton.n_events();
  out.grazing = skeleton.grazing;
  out.saturated = skeleton.saturated;
  if (skeleton.saturated) {
    out.loss = std::numeric_limits<double>::infinity();
    return out;
  }
  if (!skeleton.grazing.empty()) {
    out.loss = loss(m, skeleton, targets, blend);
    return out;
  }

  const DiscreteTrajectory dtr =
      resolve_discrete_trajectory(m, skeleton, skeleton.p, acfg);
  out.max_step_residual = dtr.max_step_residual;
  out.max_event_residual = dtr.max_event_residual;

  const LossLoads ll = loss_loads(m, dtr, targets, blend, acfg);
  out.loss = ll.value;

  const int n_segs = dtr.n_segments();
  VecX q_p = ll.ell_p;

  // Sweep the final segment; its end time is the fixed horizon, so the q_te
  // accumulator has no equation to feed and is dropped.
  SegmentWorkspace ws =
      build_segment_workspace(m, dtr.p, sel, dtr.segments[n_segs - 1]);
  SweepResult sw = sweep_segment(ws, ll.node[n_segs - 1], ll.q_ts[n_segs - 1],
                                 ll.q_te[n_segs - 1], n_opt);
  q_p += sw.q_p;
  out.stationarity_residual =
      std::max(out.stationarity_residual, sw.stationarity);
  VecX a_plus = sw.a0;
  double q_tau_plus = sw.q_ts;

  for (int k = n_segs - 2; k >= 0; --k) {
    const EventBlock& ev = dtr.events[k];
    const EventSystem es =
        build_event_system(m, dtr.p, sel, ev.tau, ev.x_minus, ev.z_minus,
                           ev.x_plus, ev.z_plus, ev.event_index);
    const EventMultiplier em =
        solve_event_multiplier(es.A, a_plus, acfg.rank_rtol);

    // Two sweeps of the pre-event segment: true loads carrying the
    // minimum-norm multiplier, and the kernel direction alone.  Everything
    // downstream is affine in the kernel coefficient.
    ws = build_segment_workspace(m, dtr.p, sel, dtr.segments[k]);
    MatX loads0 = ll.node[k];
    loads0.col(loads0.cols() - 1) += es.B.transpose() * em.mu0;
    const SweepResult s0 =
        sweep_segment(ws, loads0, ll.q_ts[k], ll.q_te[k], n_opt);
    MatX loadsv = MatX::Zero(n_w, dtr.segments[k].n_nodes());
    loadsv.col(loadsv.cols() - 1) = es.B.transpose() * em.v;
    const SweepResult sv = sweep_segment(ws, loadsv, 0.0, 0.0, n_opt);

    const double q0 = q_tau_plus + es.e_tau.dot(em.mu0) + s0.q_te;
    const double qv = es.e_tau.dot(em.v) + sv.q_te;
    const auto [c, den] = resolve_event_coefficient(q0, qv, acfg.c_reg);
    const VecX mu = em.mu0 + c * em.v;

    q_p += es.C.transpose() * mu + s0.q_p + c * sv.q_p;

    // Stationarity checks: the multiplier system against the post-segment
    // load it was solved for, the event-time equation, and the transposed
    // step solves of both sweeps combined.
    out.stationarity_residual = std::max(
        {out.stationarity_residual,
         (es.A.transpose() * mu + a_plus).lpNorm<Eigen::Infinity>(),
         std::abs(q0 + c * qv),
         s0.stationarity + std::abs(c) * sv.stationarity});

    a_plus = s0.a0 + c * sv.a0;
    q_tau_plus = s0.q_ts + c * sv.q_ts;
    out.event_diag.push_back(
        {ev.tau, c, den, es.residual.lpNorm<Eigen::Infinity>()});
  }
  std::reverse(out.event_diag.begin(), out.event_diag.end());

  // Initial algebraic closure: g(t0, x0, z0, p) = 0 determines z0, so the
  // leftover z load is absorbed by g_z^T nu = -a_z; x0 and t0 are data and
  // their leftover loads are dropped.
  if (n_z > 0) {
    const NodeJac& n0 = ws.node[0];
    Eigen::FullPivLU<MatX> lu(n0.g_z.transpose());
    if (!lu.isInvertible()) {
      throw SingularJacobian("adjoint closure: singular g_z at t0");
    }
    const VecX a_z = a_plus.tail(n_z);
    const VecX nu = lu.solve(-a_z);
    out.stationarity_residual =
        std::max(out.stationarity_residual,
                 (n0.g_z.transpose() * nu + a_z).lpNorm<Eigen::Infinity>());
    q_p += n0.g_p.transpose() * nu;
  }

  out.grad = q_p;
  out.grad_valid = true;
  return out;
}

// Simulates at p and differentiates the induced discrete problem.
template <HybridModel M>
AdjointGradient gradient_adjoint(const M& m, const VecX& p, double t1,
                                 const TargetSet& targets,
                                 const BlendConfig& blend = {},
                                 const SimConfig& cfg = {},
                                 const AdjointConfig& acfg = {}) {
  const EventSplitTrajectory traj = simulate(m, p, t1, cfg);
  return adjoint_on_trajectory(m, traj, targets, blend, acfg);
}

}  // namespace hybridae
