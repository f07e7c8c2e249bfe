#pragma once

// Evaluation of trajectory outputs at requested target times and the fitting
// loss.
//
// Target times are clipped into each segment's span and the state read off
// the stored nodes by cubic Hermite interpolation.  Two selection modes map
// per-segment candidates to one prediction: hard selection takes the latest
// segment whose closed span contains the time (so at an event time the
// post-event segment wins, matching right-continuity), soft selection blends
// candidates with normalized logistic window weights so the prediction is
// differentiable through moving segment boundaries.

#include <cmath>
#include <limits>
#include <vector>

#include "hybridae/algebraic.hpp"
#include "hybridae/model.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/trajectory.hpp"

namespace hybridae {

struct TargetSet {
  VecX times;  // N_obs, inside (t0, T]
  MatX data;   // n_y x N_obs observations (empty for prediction-only use)

  int count() const { return static_cast<int>(times.size()); }
};

enum class BlendMode { hard, soft };

struct BlendConfig {
  BlendMode mode = BlendMode::hard;
  double beta = 150.0;       // logistic sharpness of the soft windows
  double eps_omega = 1e-12;  // floor in the weight normalization
};

inline double clip_time(double t, double lo, double hi) {
  return std::min(std::max(t, lo), hi);
}

// Per-segment candidate states at the (clipped) target times.
// Result[k] is n_x x N_obs for real segment k.
inline std::vector<MatX> segment_states_at_targets(
    const EventSplitTrajectory& traj, const VecX& times) {
  std::vector<MatX> out(traj.n_segments());
  for (int k = 0; k < traj.n_segments(); ++k) {
    const SegmentBlock& seg = traj.segments[k];
    out[k].resize(seg.x.rows(), times.size());
    for (int i = 0; i < times.size(); ++i) {
      const double tc = clip_time(times(i), seg.t_start, seg.t_end);
      out[k].col(i) = interp_x(seg, tc);
    }
  }
  return out;
}

// Latest real segment whose closed span contains t.
inline int select_hard(const EventSplitTrajectory& traj, double t) {
  int best = -1;
  for (int k = 0; k < traj.n_segments(); ++k) {
    const SegmentBlock& seg = traj.segments[k];
    if (t >= seg.t_start && t <= seg.t_end) best = k;
  }
  if (best < 0) {
    throw InvalidArgument("select_hard: target time outside trajectory span");
  }
  return best;
}

// Unnormalized soft window weight of segment k at time t.
inline double soft_window(double t, double a, double b, double beta) {
  return sigmoid(beta * (t - a)) * sigmoid(beta * (b - t));
}

// Normalized blending weights over the real segments at time t.
inline VecX blend_soft(const EventSplitTrajectory& traj, double t,
                       const BlendConfig& blend) {
  VecX w(traj.n_segments());
  for (int k = 0; k < traj.n_segments(); ++k) {
    const SegmentBlock& seg = traj.segments[k];
    w(k) = soft_window(t, seg.t_start, seg.t_end, blend.beta);
  }
  return w / (w.sum() + blend.eps_omega);
}

// Algebraic reconstruction and output at a target: z solved from the blended
// state (warm-started from a stored node), y from the output map.
template <HybridModel M>
std::pair<VecX, VecX> reconstruct_output(const M& m, double t, const VecX& x_hat,
                                         const VecX& p, const VecX& z_warm,
                                         const AlgebraicConfig& acfg) {
  VecX z_hat = solve_algebraic(m, t, x_hat, p, z_warm, acfg);
  VecX y_hat = eval_h(m, t, x_hat, z_hat, p);
  return {std::move(z_hat), std::move(y_hat)};
}

// Predicted outputs at all target times (n_y x N_obs).
template <HybridModel M>
MatX evaluate_predictions(const M& m, const EventSplitTrajectory& traj,
                          const VecX& times, const BlendConfig& blend,
                          const AlgebraicConfig& acfg = {}) {
  const Dims dims = m.dims();
  MatX yhat(dims.n_y, times.size());
  for (int i = 0; i < times.size(); ++i) {
    const double t = times(i);
    const int ks = select_hard(traj, t);
    const SegmentBlock& sel = traj.segments[ks];
    const double tc = clip_time(t, sel.t_start, sel.t_end);

    VecX x_hat;
    if (blend.mode == BlendMode::hard) {
      x_hat = interp_x(sel, tc);
    } else {
      const VecX w = blend_soft(traj, t, blend);
      x_hat = VecX::Zero(dims.n_x);
      for (int k = 0; k < traj.n_segments(); ++k) {
        const SegmentBlock& seg = traj.segments[k];
        const double tck = clip_time(t, seg.t_start, seg.t_end);
        x_hat += w(k) * interp_x(seg, tck);
      }
    }
    const VecX z_warm =
        dims.n_z > 0 ? VecX(sel.z.col(bracket_node(sel, tc))) : VecX();
    auto [z_hat, y_hat] = reconstruct_output(m, t, x_hat, traj.p, z_warm, acfg);
    yhat.col(i) = y_hat;
  }
  return yhat;
}

// Mean squared output mismatch over the targets; +inf for saturated
// trajectories so infeasible parameter regions repel the optimizer.
template <HybridModel M>
double loss(const M& m, const EventSplitTrajectory& traj,
            const TargetSet& targets, const BlendConfig& blend,
            const AlgebraicConfig& acfg = {}) {
  if (traj.saturated) return std::numeric_limits<double>::infinity();
  if (targets.data.rows() != m.dims().n_y ||
      targets.data.cols() != targets.count()) {
    throw InvalidArgument("loss: data shape mismatch");
  }
  const MatX yhat = evaluate_predictions(m, traj, targets.times, blend, acfg);
  return (yhat - targets.data).squaredNorm() / targets.count();
}

}  // namespace hybridae
