#pragma once

// Forward-sensitivity gradients through the segmented simulation.
//
// The state is augmented with the parameter sensitivity S = dx/dp_opt and
// integrated alongside x:
//
//   dS_j/dt = f_x S_j + f_z Z_j + f_p e_j,   Z_j = -g_z^{-1}(g_x S_j + g_p e_j),
//
// with step control restricted to the x components so the augmented run
// accepts exactly the same steps as the plain one (the x path is reproduced
// bit for bit; this is what makes the stored trajectory reusable for loss
// evaluation).  At an event the crossing time moves with the parameters,
//
//   dtau_j = -(phi_x S_j + phi_z Z_j + phi_p e_j) / (dphi/dt at tau-),
//
// and the sensitivity is restarted with the saltation update
//
//   S_j^+ = dPsi[dt = dtau_j, dx = S_j + f^- dtau_j, dz = Z_j + zdot^- dtau_j,
//               dp = e_j] - f^+ dtau_j,
//
// which is the fixed-time sensitivity limit from the right.  Sensitivity
// nodes are stored on the same grid as the trajectory so predictions and
// their derivatives interpolate consistently.

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "hybridae/algebraic.hpp"
#include "hybridae/gradient.hpp"
#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/target.hpp"
#include "hybridae/trajectory.hpp"

namespace hybridae {

// Sensitivity values along a segment's node grid; columns follow the nodes,
// rows are vec(S) with S of shape n_x x n_opt.
struct SensitivitySegment {
  MatX s;     // (n_x * n_opt) x n_nodes
  MatX sdot;  // (n_x * n_opt) x n_nodes
};

struct SensitivityEvent {
  RowX dtau;          // 1 x n_opt derivative of the event time
  MatX s_plus;        // n_x x n_opt fixed-time sensitivity just after the event
  bool valid = true;  // false when the crossing was grazing
};

struct ForwardRun {
  EventSplitTrajectory traj;
  std::vector<SensitivitySegment> seg_sens;  // parallel to traj.segments
  std::vector<SensitivityEvent> ev_sens;     // parallel to traj.events
  int n_opt = 0;
};

// f, IFT parameter tangents of z, and dS/dt at one state.
struct SensitivitySlopes {
  VecX f;
  MatX z_sens;  // n_z x n_opt
  MatX sdot;    // n_x x n_opt
};

template <HybridModel M>
SensitivitySlopes sensitivity_slopes(const M& m, double t, const VecX& x,
                                     const VecX& z, const VecX& p,
                                     const MatX& s_state, const MatX& sel) {
  const Dims d = m.dims();
  const int k = static_cast<int>(sel.cols());
  TangentSeeds seeds = TangentSeeds::zero(d.n_x, d.n_z, d.n_p, k);
  seeds.dx = s_state;
  seeds.dp = sel;
  seeds.dz = algebraic_tangent(m, t, x, z, p, seeds);
  TangentBundle fb = f_tangent(m, t, x, z, p, seeds);
  return {std::move(fb.value), std::move(seeds.dz), std::move(fb.tangent)};
}

// Augmented RHS over y = [x; vec(S)].  The algebraic chain and the f values
// are computed exactly as in ReducedRhs (dual arithmetic reproduces plain
// evaluation bit for bit), so the x components of the augmented system match
// the plain simulation.
template <HybridModel M>
class SensitivityRhs {
 public:
  SensitivityRhs(const M& m, const VecX& p, const MatX& sel,
                 AlgebraicConfig cfg, VecX z_warm)
      : m_(m), p_(p), sel_(sel), cfg_(cfg), z_(std::move(z_warm)) {}

  void operator()(double t, const VecX& y, VecX& dy) {
    const Dims d = m_.dims();
    const int k = static_cast<int>(sel_.cols());
    const VecX x = y.head(d.n_x);
    z_ = solve_algebraic(m_, t, x, p_, z_, cfg_);
    const MatX s_state =
        Eigen::Map<const MatX>(y.data() + d.n_x, d.n_x, k);
    const SensitivitySlopes sl =
        sensitivity_slopes(m_, t, x, z_, p_, s_state, sel_);
    dy.resize(y.size());
    dy.head(d.n_x) = sl.f;
    Eigen::Map<MatX>(dy.data() + d.n_x, d.n_x, k) = sl.sdot;
  }

  const VecX& z() const { return z_; }

 private:
  const M& m_;
  const VecX& p_;
  const MatX& sel_;
  AlgebraicConfig cfg_;
  VecX z_;
};

// Event-time derivative and saltation restart at a processed event.  A
// grazing crossing has no defined derivative: dtau is zeroed, the jump is
// taken at frozen tau, and the block is marked invalid so downstream
// gradients are flagged.
template <HybridModel M>
SensitivityEvent event_sensitivity(const M& m, const VecX& p, const MatX& sel,
                                   const EventApplication<M>& ev,
                                   const MatX& s_minus) {
  const Dims d = m.dims();
  const int k = static_cast<int>(sel.cols());
  const EventBlock& b = ev.block;

  TangentSeeds seeds = TangentSeeds::zero(d.n_x, d.n_z, d.n_p, k);
  seeds.dx = s_minus;
  seeds.dp = sel;
  const MatX z_sens =
      algebraic_tangent(m, b.tau, b.x_minus, b.z_minus, p, seeds);
  seeds.dz = z_sens;
  const RowX dphi =
      guard_tangent(m, b.event_index, b.tau, b.x_minus, b.z_minus, p, seeds)
          .tangent.row(0);

  SensitivityEvent out;
  out.valid = !ev.grazing;
  out.dtau = out.valid ? RowX(-dphi / b.guard_slope) : RowX(RowX::Zero(k));

  TangentSeeds rs = TangentSeeds::zero(d.n_x, d.n_z, d.n_p, k);
  rs.dt = out.dtau.transpose();
  rs.dx = s_minus + ev.f_minus * out.dtau;
  rs.dz = z_sens + ev.zdot_minus * out.dtau;
  rs.dp = sel;
  const MatX dpsi =
      reset_tangent(m, b.event_index, b.tau, b.x_minus, b.z_minus, p, rs)
          .tangent;
  const VecX f_plus = eval_f(m, b.tau, b.x_plus, b.z_plus, p);
  out.s_plus = dpsi - f_plus * out.dtau;
  return out;
}

// Simulation with forward sensitivities.  Mirrors simulate() step for step;
// the embedded trajectory is bit-identical to the plain one.
template <HybridModel M>
ForwardRun forward_simulate(const M& m, const VecX& p, double t1,
                            const SimConfig& cfg = {}) {
  const Dims dims = m.dims();
  dims.validate();
  if (p.size() != dims.n_p) {
    throw InvalidArgument("forward_simulate: parameter vector length mismatch");
  }
  if (!(t1 > 0.0)) {
    throw InvalidArgument("forward_simulate: horizon must be positive");
  }
  const ParameterLayout layout = m.layout();
  layout.validate();
  const MatX sel = opt_seed_matrix(layout);
  const int k = layout.n_opt();

  ForwardRun run;
  run.n_opt = k;
  EventSplitTrajectory& traj = run.traj;
  traj.k_max = cfg.k_max;
  traj.t0 = 0.0;
  traj.t_final = t1;
  traj.p = p;

  double t = 0.0;
  VecX x = m.x0();
  VecX z = solve_algebraic(m, 0.0, x, p, m.z0_guess(), cfg.algebraic);
  MatX s_state = MatX::Zero(dims.n_x, k);
  VecX y0(dims.n_x + dims.n_x * k);

  while (true) {
    if (traj.n_segments() == cfg.k_max) {
      traj.saturated = true;
      traj.t_final = t;
      return run;
    }
    const std::vector<char> mask = active_guard_mask(m, t, x, z, p, cfg.eps_phi);
    SensitivityRhs<M> rhs(m, p, sel, cfg.algebraic, z);
    GuardProbe<M> guard(m, p, mask, cfg.algebraic, z, cfg.c_big);
    y0.head(dims.n_x) = x;
    Eigen::Map<MatX>(y0.data() + dims.n_x, dims.n_x, k) = s_state;
    const SegmentRun seg_run =
        run_segment(rhs, guard, t, y0, t1, cfg, /*err_dim=*/dims.n_x);

    std::vector<VecX> s_cols, sdot_cols;
    auto hook = [&](int, double tn, const VecX& yn, const VecX& zn) {
      const VecX xn = yn.head(dims.n_x);
      const MatX sn = Eigen::Map<const MatX>(yn.data() + dims.n_x, dims.n_x, k);
      const SensitivitySlopes sl =
          sensitivity_slopes(m, tn, xn, zn, p, sn, sel);
      s_cols.push_back(detail::vec(sn));
      sdot_cols.push_back(detail::vec(sl.sdot));
    };
    traj.segments.push_back(assemble_segment(m, p, seg_run, t, z, cfg, hook));

    SensitivitySegment ss;
    const int n_nodes = static_cast<int>(s_cols.size());
    ss.s.resize(dims.n_x * k, n_nodes);
    ss.sdot.resize(dims.n_x * k, n_nodes);
    for (int j = 0; j < n_nodes; ++j) {
      ss.s.col(j) = s_cols[j];
      ss.sdot.col(j) = sdot_cols[j];
    }
    run.seg_sens.push_back(std::move(ss));

    if (!seg_run.hit_event) {
      traj.t_final = t1;
      return run;
    }
    const double tau = seg_run.t_stop;
    EventApplication<M> ev = process_event(
        m, p, tau, seg_run.y_stop.head(dims.n_x), mask, z, cfg);
    if (ev.grazing) {
      traj.grazing.push_back({traj.n_events(), ev.block.guard_slope});
    }
    const MatX s_minus =
        Eigen::Map<const MatX>(seg_run.y_stop.data() + dims.n_x, dims.n_x, k);
    run.ev_sens.push_back(event_sensitivity(m, p, sel, ev, s_minus));
    traj.events.push_back(ev.block);
    t = tau;
    x = traj.events.back().x_plus;
    z = traj.events.back().z_plus;
    s_state = run.ev_sens.back().s_plus;

    if (t1 - t <= 1e-13 * std::max(1.0, std::abs(t1))) {
      // Crossing at the horizon itself: close with a minimal final segment.
      SegmentBlock tail;
      tail.t_start = t;
      tail.t_end = t1;
      tail.eta = VecX::LinSpaced(2, 0.0, 1.0);
      tail.x.resize(dims.n_x, 2);
      tail.x.col(0) = x;
      tail.x.col(1) = x;
      tail.z.resize(dims.n_z, 2);
      tail.z.col(0) = z;
      tail.z.col(1) = z;
      tail.xdot.resize(dims.n_x, 2);
      const VecX fx = eval_f(m, t, x, z, p);
      tail.xdot.col(0) = fx;
      tail.xdot.col(1) = fx;
      traj.segments.push_back(std::move(tail));

      const SensitivitySlopes sl =
          sensitivity_slopes(m, t, x, z, p, s_state, sel);
      SensitivitySegment tail_ss;
      tail_ss.s.resize(dims.n_x * k, 2);
      tail_ss.s.col(0) = detail::vec(s_state);
      tail_ss.s.col(1) = tail_ss.s.col(0);
      tail_ss.sdot.resize(dims.n_x * k, 2);
      tail_ss.sdot.col(0) = detail::vec(sl.sdot);
      tail_ss.sdot.col(1) = tail_ss.sdot.col(0);
      run.seg_sens.push_back(std::move(tail_ss));
      traj.t_final = t1;
      return run;
    }
  }
}

namespace detail {

// d/dp of the clipped per-segment candidate state at target time t.  Inside
// the span this is the interpolated sensitivity; at a clipped (moving)
// boundary the chain through the boundary time is added.
inline MatX candidate_sensitivity(const SegmentBlock& seg,
                                  const SensitivitySegment& ss, double t,
                                  const RowX& da, const RowX& db, int n_x,
                                  int n_opt) {
  if (t < seg.t_start) {
    return unvec(ss.s.col(0), n_x, n_opt) + seg.xdot.col(0) * da;
  }
  if (t > seg.t_end) {
    const int last = static_cast<int>(ss.s.cols()) - 1;
    return unvec(ss.s.col(last), n_x, n_opt) +
           seg.xdot.col(seg.xdot.cols() - 1) * db;
  }
  return unvec(hermite_interp(seg, ss.s, ss.sdot, t), n_x, n_opt);
}

}  // namespace detail

// Loss and gradient by forward sensitivities.  The loss value matches
// loss(m, simulate(m, p, t1), targets, blend) computed on the plain
// trajectory; the gradient differentiates the same prediction pipeline,
// including the moving segment boundaries of the soft blend.
template <HybridModel M>
GradientReport gradient_forward(const M& m, const VecX& p, double t1,
                                const TargetSet& targets,
                                const BlendConfig& blend = {},
                                const SimConfig& cfg = {}) {
  const Dims dims = m.dims();
  const ParameterLayout layout = m.layout();
  const MatX sel = opt_seed_matrix(layout);
  const int n_opt = layout.n_opt();
  const int N = targets.count();
  if (targets.data.rows() != dims.n_y || targets.data.cols() != N) {
    throw InvalidArgument("gradient_forward: data shape mismatch");
  }
  if (N < 1) {
    throw InvalidArgument("gradient_forward: no targets");
  }

  GradientReport rep;
  rep.grad = VecX::Zero(n_opt);

  const ForwardRun run = forward_simulate(m, p, t1, cfg);
  const EventSplitTrajectory& traj = run.traj;
  rep.saturated = traj.saturated;
  rep.n_events = traj.n_events();
  rep.grazing = traj.grazing;
  if (traj.saturated) {
    rep.loss = std::numeric_limits<double>::infinity();
    rep.grad_valid = false;
    return rep;
  }

  const int n_seg = traj.n_segments();
  double acc = 0.0;
  for (int i = 0; i < N; ++i) {
    const double t = targets.times(i);
    const int ks = select_hard(traj, t);
    const SegmentBlock& sel_seg = traj.segments[ks];
    const double tc = clip_time(t, sel_seg.t_start, sel_seg.t_end);

    VecX x_hat;
    MatX dx_hat;
    if (blend.mode == BlendMode::hard) {
      x_hat = interp_x(sel_seg, tc);
      dx_hat = detail::unvec(
          hermite_interp(sel_seg, run.seg_sens[ks].s, run.seg_sens[ks].sdot,
                         tc),
          dims.n_x, n_opt);
    } else {
      // Window weights and their dependence on the moving event times.
      VecX w_raw(n_seg);
      MatX dw_raw(n_seg, n_opt);
      for (int kk = 0; kk < n_seg; ++kk) {
        const SegmentBlock& seg = traj.segments[kk];
        const double su = sigmoid(blend.beta * (t - seg.t_start));
        const double sv = sigmoid(blend.beta * (seg.t_end - t));
        w_raw(kk) = su * sv;
        RowX da = RowX::Zero(n_opt);
        RowX db = RowX::Zero(n_opt);
        if (traj.has_left_event(kk)) da = run.ev_sens[kk - 1].dtau;
        if (traj.has_right_event(kk)) db = run.ev_sens[kk].dtau;
        dw_raw.row(kk) = su * (1.0 - su) * sv * blend.beta * (-da) +
                         su * sv * (1.0 - sv) * blend.beta * db;
      }
      const double den = w_raw.sum() + blend.eps_omega;
      const RowX dden = dw_raw.colwise().sum();

      x_hat = VecX::Zero(dims.n_x);
      dx_hat = MatX::Zero(dims.n_x, n_opt);
      for (int kk = 0; kk < n_seg; ++kk) {
        const SegmentBlock& seg = traj.segments[kk];
        const double tck = clip_time(t, seg.t_start, seg.t_end);
        const VecX xk = interp_x(seg, tck);
        const double wbar = w_raw(kk) / den;
        const RowX dwbar =
            dw_raw.row(kk) / den - (w_raw(kk) / (den * den)) * dden;
        RowX da = RowX::Zero(n_opt);
        RowX db = RowX::Zero(n_opt);
        if (traj.has_left_event(kk)) da = run.ev_sens[kk - 1].dtau;
        if (traj.has_right_event(kk)) db = run.ev_sens[kk].dtau;
        const MatX dxk = detail::candidate_sensitivity(
            seg, run.seg_sens[kk], t, da, db, dims.n_x, n_opt);
        x_hat += wbar * xk;
        dx_hat += xk * dwbar + wbar * dxk;
      }
    }

    const VecX z_warm =
        dims.n_z > 0 ? VecX(sel_seg.z.col(bracket_node(sel_seg, tc))) : VecX();
    const VecX z_hat = solve_algebraic(m, t, x_hat, p, z_warm, cfg.algebraic);
    TangentSeeds zs = TangentSeeds::zero(dims.n_x, dims.n_z, dims.n_p, n_opt);
    zs.dx = dx_hat;
    zs.dp = sel;
    zs.dz = algebraic_tangent(m, t, x_hat, z_hat, p, zs);
    const TangentBundle hb = h_tangent(m, t, x_hat, z_hat, p, zs);

    const VecX r = hb.value - targets.data.col(i);
    acc += r.squaredNorm();
    rep.grad += (2.0 / N) * (hb.tangent.transpose() * r);
  }
  rep.loss = acc / N;
  rep.grad_valid = rep.grazing.empty();
  return rep;
}

}  // namespace hybridae
