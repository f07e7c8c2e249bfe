#pragma once

// Event-split trajectory storage: an alternating sequence of integration
// segments and event records with a fixed capacity.  Node times inside a
// segment are kept as normalized coordinates eta in [0,1] so that segment
// boundaries can move (when event times are re-solved) without touching the
// grid.

#include <algorithm>
#include <vector>

#include "hybridae/errors.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

struct SegmentBlock {
  double t_start = 0.0, t_end = 0.0;
  VecX eta;   // strictly increasing, eta(0) = 0, eta(last) = 1
  MatX x;     // n_x x n_nodes
  MatX z;     // n_z x n_nodes
  MatX xdot;  // n_x x n_nodes

  int n_nodes() const { return static_cast<int>(eta.size()); }
  double length() const { return t_end - t_start; }
  double node_time(int k) const { return t_start + eta(k) * length(); }
};

struct EventBlock {
  double tau = 0.0;
  int event_index = -1;
  VecX x_minus, z_minus, x_plus, z_plus;
  double guard_slope = 0.0;  // d(phi)/dt along the flow just before tau
};

struct GrazingWarning {
  int event_pos = -1;  // position in the event list
  double slope = 0.0;
};

enum class BlockKind : int { padding = 0, segment = 1, event = 2 };

struct EventSplitTrajectory {
  int k_max = 64;
  bool saturated = false;
  double t0 = 0.0, t_final = 0.0;
  VecX p;  // full parameter vector the trajectory was produced with
  std::vector<SegmentBlock> segments;
  std::vector<EventBlock> events;
  std::vector<GrazingWarning> grazing;

  int n_segments() const { return static_cast<int>(segments.size()); }
  int n_events() const { return static_cast<int>(events.size()); }

  // Alternating kind codes over the fixed block capacity (2*k_max + 1),
  // padded with zeros past the produced blocks.
  std::vector<int> block_kinds() const {
    std::vector<int> kinds(2 * k_max + 1, static_cast<int>(BlockKind::padding));
    int pos = 0;
    for (int s = 0; s < n_segments(); ++s) {
      kinds[pos++] = static_cast<int>(BlockKind::segment);
      if (s < n_events()) kinds[pos++] = static_cast<int>(BlockKind::event);
    }
    return kinds;
  }

  // Boundary times of segment k: events where available, else the overall
  // span endpoints.  has_left/right_event report whether the boundary is an
  // event time (and therefore parameter-dependent).
  double left_boundary(int k) const { return k == 0 ? t0 : events[k - 1].tau; }
  double right_boundary(int k) const {
    return k < n_events() ? events[k].tau : segments[k].t_end;
  }
  bool has_left_event(int k) const { return k > 0; }
  bool has_right_event(int k) const { return k < n_events(); }
};

// ---- node interpolation ----------------------------------------------------

// Index j with t_node(j) <= t <= t_node(j+1); t must lie inside the segment
// span (callers clip first).  Deterministic: the first bracketing pair.
inline int bracket_node(const SegmentBlock& seg, double t) {
  const int n = seg.n_nodes();
  const double len = seg.length();
  const double eta_t = len > 0.0 ? (t - seg.t_start) / len : 0.0;
  // last index with eta(j) <= eta_t, capped so j+1 is valid
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (seg.eta(mid) <= eta_t)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

// Cubic Hermite interpolation of a (values, slopes) node family stored on the
// segment grid.  values: d x n_nodes, slopes: d x n_nodes (time derivatives).
inline VecX hermite_interp(const SegmentBlock& seg, const MatX& values,
                           const MatX& slopes, double t) {
  const int j = bracket_node(seg, t);
  const double tj = seg.node_time(j), tj1 = seg.node_time(j + 1);
  const double dt = tj1 - tj;
  if (dt <= 0.0) return values.col(j);
  const double th = (t - tj) / dt;
  const double th2 = th * th, th3 = th2 * th;
  const double h00 = 2 * th3 - 3 * th2 + 1;
  const double h10 = th3 - 2 * th2 + th;
  const double h01 = -2 * th3 + 3 * th2;
  const double h11 = th3 - th2;
  return h00 * values.col(j) + (h10 * dt) * slopes.col(j) +
         h01 * values.col(j + 1) + (h11 * dt) * slopes.col(j + 1);
}

// Piecewise-linear interpolation of a node family on the segment grid.
inline VecX linear_interp(const SegmentBlock& seg, const MatX& values,
                          double t) {
  if (values.cols() == 0) return VecX(values.rows());
  const int j = bracket_node(seg, t);
  const double tj = seg.node_time(j), tj1 = seg.node_time(j + 1);
  const double dt = tj1 - tj;
  const double th = dt > 0.0 ? (t - tj) / dt : 0.0;
  return (1.0 - th) * values.col(j) + th * values.col(j + 1);
}

// State interpolations on a segment.
inline VecX interp_x(const SegmentBlock& seg, double t) {
  return hermite_interp(seg, seg.x, seg.xdot, t);
}
inline VecX interp_z_linear(const SegmentBlock& seg, double t) {
  return linear_interp(seg, seg.z, t);
}

// Merged strictly-increasing eta grid: a uniform floor of n_min points plus
// the given extra coordinates (accepted step endpoints), deduplicated.
inline VecX merge_eta_grid(int n_min, const std::vector<double>& extra) {
  std::vector<double> etas;
  etas.reserve(n_min + extra.size());
  for (int i = 0; i < n_min; ++i)
    etas.push_back(static_cast<double>(i) / (n_min - 1));
  for (double e : extra) {
    if (e > 0.0 && e < 1.0) etas.push_back(e);
  }
  std::sort(etas.begin(), etas.end());
  std::vector<double> kept;
  kept.reserve(etas.size());
  for (double e : etas) {
    if (kept.empty() || e - kept.back() > 1e-12) kept.push_back(e);
  }
  if (kept.back() != 1.0) kept.back() = 1.0;
  return Eigen::Map<const VecX>(kept.data(), static_cast<Eigen::Index>(kept.size()));
}

}  // namespace hybridae
