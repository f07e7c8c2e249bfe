#pragma once

// Segmented simulation of hybrid semi-explicit DAEs.
//
// The trajectory is integrated segment by segment.  At each segment start all
// guards are evaluated; guards not strictly positive (already fired or still
// touching zero after a reset) are masked out for the whole segment so they
// cannot retrigger immediately.  The remaining guards form a composite
// Phi = min_e phi_e (masked entries replaced by a large constant), monitored
// along accepted steps; a sign change is bracketed and refined on the dense
// output, the firing clause is selected by argmin, the reset is applied and
// the algebraic state reinitialized.  A fixed segment capacity bounds the
// scan; exceeding it marks the trajectory saturated.

#include <cmath>
#include <optional>
#include <vector>

#include "hybridae/algebraic.hpp"
#include "hybridae/dopri5.hpp"
#include "hybridae/model.hpp"
#include "hybridae/trajectory.hpp"

namespace hybridae {

struct SimConfig {
  double rtol = 1e-8;
  double atol = 1e-8;
  double h_init = 1e-3;
  double h_min = 1e-12;
  double h_max = 0.0;      // 0 = auto: segment span / 16
  int k_max = 64;          // segment capacity
  double eps_phi = 1e-9;   // arming threshold for guards at segment starts
  double c_big = 1e6;      // composite value for masked guards
  double tol_event = 1e-10;  // |Phi(tau)| target for event location
  int bisect_iters = 60;
  int secant_iters = 5;
  double tol_transv = 1e-8;  // required |dphi/dt| at crossings
  int n_nodes_min = 33;      // stored-node floor per segment
  int guard_scan = 8;        // guard probes per accepted step
  AlgebraicConfig algebraic;
};

// ---- reduced ODE ------------------------------------------------------------

// F(t, x) = f(t, x, zeta(t, x, p), p) with the algebraic state solved at every
// evaluation, warm-started from the previous one.
template <HybridModel M>
class ReducedRhs {
 public:
  ReducedRhs(const M& m, const VecX& p, AlgebraicConfig cfg, VecX z_warm)
      : m_(m), p_(p), cfg_(cfg), z_(std::move(z_warm)) {}

  void operator()(double t, const VecX& x, VecX& dx) {
    z_ = solve_algebraic(m_, t, x, p_, z_, cfg_);
    dx = eval_f(m_, t, x, z_, p_);
  }

  const VecX& z() const { return z_; }

 private:
  const M& m_;
  const VecX& p_;
  AlgebraicConfig cfg_;
  VecX z_;
};

// ---- guard machinery --------------------------------------------------------

// Armed-guard mask at a segment start: true where phi_e > eps_phi.
template <HybridModel M>
std::vector<char> active_guard_mask(const M& m, double t, const VecX& x,
                                    const VecX& z, const VecX& p,
                                    double eps_phi) {
  const int n_e = m.dims().n_e;
  std::vector<char> mask(n_e, 0);
  for (int e = 0; e < n_e; ++e) {
    mask[e] = eval_guard(m, e, t, x, z, p) > eps_phi ? 1 : 0;
  }
  return mask;
}

// Composite guard Phi = min over armed guards (masked entries -> c_big).
template <HybridModel M>
double composite_guard(const M& m, double t, const VecX& x, const VecX& z,
                       const VecX& p, const std::vector<char>& mask,
                       double c_big) {
  double phi = c_big;
  for (int e = 0; e < m.dims().n_e; ++e) {
    if (!mask[e]) continue;
    phi = std::min(phi, eval_guard(m, e, t, x, z, p));
  }
  return phi;
}

// Composite-guard evaluator along a trajectory whose leading n_x state
// components are x; keeps its own warm algebraic state.
template <HybridModel M>
class GuardProbe {
 public:
  GuardProbe(const M& m, const VecX& p, const std::vector<char>& mask,
             AlgebraicConfig acfg, VecX z_warm, double c_big)
      : m_(m), p_(p), mask_(mask), acfg_(acfg), z_(std::move(z_warm)),
        c_big_(c_big) {}

  double operator()(double t, const VecX& y) {
    const VecX x = y.head(m_.dims().n_x);
    z_ = solve_algebraic(m_, t, x, p_, z_, acfg_);
    return composite_guard(m_, t, x, z_, p_, mask_, c_big_);
  }

 private:
  const M& m_;
  const VecX& p_;
  const std::vector<char>& mask_;
  AlgebraicConfig acfg_;
  VecX z_;
  double c_big_;
};

// ---- event location ---------------------------------------------------------

struct EventLocation {
  double tau = 0.0;
  double phi = 0.0;  // composite value at tau
};

// Root of a sign change phi(t_lo) > 0 >= phi(t_hi): bisection to shrink the
// bracket, then a few safeguarded secant refinements.  Returns the probed
// point with the smallest |phi|.
template <class Fn>
EventLocation locate_event(Fn&& phi_fn, double t_lo, double t_hi,
                           double phi_lo, double phi_hi,
                           const SimConfig& cfg) {
  if (!(phi_lo > 0.0) || phi_hi > 0.0) {
    throw BracketError("locate_event: no sign change in bracket");
  }
  double best_t = t_hi, best_phi = phi_hi;
  auto consider = [&](double t, double phi) {
    if (std::abs(phi) < std::abs(best_phi)) {
      best_t = t;
      best_phi = phi;
    }
  };
  consider(t_lo, phi_lo);

  for (int i = 0; i < cfg.bisect_iters; ++i) {
    const double span = t_hi - t_lo;
    if (span <= 1e-15 * std::max(1.0, std::abs(t_hi))) break;
    const double mid = 0.5 * (t_lo + t_hi);
    const double pm = phi_fn(mid);
    consider(mid, pm);
    if (pm > 0.0) {
      t_lo = mid;
      phi_lo = pm;
    } else {
      t_hi = mid;
      phi_hi = pm;
    }
    if (std::abs(pm) <= cfg.tol_event) break;
  }
  for (int i = 0; i < cfg.secant_iters; ++i) {
    if (std::abs(best_phi) <= cfg.tol_event) break;
    const double denom = phi_hi - phi_lo;
    double cand = denom != 0.0 ? t_lo - phi_lo * (t_hi - t_lo) / denom
                               : 0.5 * (t_lo + t_hi);
    if (!(cand > t_lo) || !(cand < t_hi)) cand = 0.5 * (t_lo + t_hi);
    const double pc = phi_fn(cand);
    consider(cand, pc);
    if (pc > 0.0) {
      t_lo = cand;
      phi_lo = pc;
    } else {
      t_hi = cand;
      phi_hi = pc;
    }
  }
  return {best_t, best_phi};
}

// ---- event selection and reset ----------------------------------------------

// Index of the armed guard attaining the minimum at (tau, x, z); ties resolve
// to the lowest index.
template <HybridModel M>
int select_event_index(const M& m, double tau, const VecX& x_minus,
                       const VecX& z_minus, const VecX& p,
                       const std::vector<char>& mask) {
  int e_star = -1;
  double best = 0.0;
  for (int e = 0; e < m.dims().n_e; ++e) {
    if (!mask[e]) continue;
    const double phi = eval_guard(m, e, tau, x_minus, z_minus, p);
    if (e_star < 0 || phi < best) {
      e_star = e;
      best = phi;
    }
  }
  if (e_star < 0) {
    throw InvalidArgument("select_event_index: no armed guard");
  }
  return e_star;
}

// Applies the reset map of clause e and reinitializes the algebraic state.
template <HybridModel M>
std::pair<VecX, VecX> apply_reset(const M& m, int e, double tau,
                                  const VecX& x_minus, const VecX& z_minus,
                                  const VecX& p, const AlgebraicConfig& acfg) {
  VecX x_plus = eval_reset(m, e, tau, x_minus, z_minus, p);
  if (!x_plus.allFinite()) {
    throw ReinitFailure("apply_reset: non-finite reset state");
  }
  try {
    VecX z_plus = solve_algebraic(m, tau, x_plus, p, z_minus, acfg);
    return {std::move(x_plus), std::move(z_plus)};
  } catch (const Error& err) {
    throw ReinitFailure(std::string("apply_reset: ") + err.what());
  }
}

// ---- segment integration ------------------------------------------------------

struct SegmentRun {
  std::vector<DenseStep> steps;  // dense records covering [t_start, t_stop]
  bool hit_event = false;
  double t_stop = 0.0;  // tau if hit_event, else t_end
  VecX y_stop;          // dense state at t_stop
};

// Integrates y' = rhs(t,y) from (t0, y0) until t_end or the first composite
// guard crossing.  The guard is probed on a fixed uniform sub-grid of each
// accepted step so crossings shorter than a step are still seen at that
// granularity.
template <class Rhs, class GuardFn>
SegmentRun run_segment(Rhs& rhs, GuardFn&& guard, double t0, const VecX& y0,
                       double t_end, const SimConfig& cfg, int err_dim = -1) {
  SegmentRun run;
  StepControl ctrl;
  ctrl.rtol = cfg.rtol;
  ctrl.atol = cfg.atol;
  ctrl.h_min = cfg.h_min;
  ctrl.h_max = cfg.h_max > 0.0 ? cfg.h_max : (t_end - t0) / 16.0;
  ctrl.err_dim = err_dim;

  Dopri5Stepper<Rhs&> stepper(rhs, static_cast<int>(y0.size()), ctrl);
  stepper.init(t0, y0, std::min(cfg.h_init, ctrl.h_max));

  double phi_prev = guard(t0, y0);
  if (!(phi_prev > 0.0)) {
    throw NumericalFailure("run_segment: composite guard not positive at start");
  }

  VecX probe;
  while (stepper.t() < t_end) {
    DenseStep ds = stepper.step(t_end);
    run.steps.push_back(ds);
    const DenseStep& d = run.steps.back();

    double t_prev = d.t0;
    for (int j = 1; j <= cfg.guard_scan; ++j) {
      const double tj = j == cfg.guard_scan
                            ? d.t_end()
                            : d.t0 + d.h * (static_cast<double>(j) / cfg.guard_scan);
      d.eval_into(tj, probe);
      const double phi_j = guard(tj, probe);
      if (phi_prev > 0.0 && phi_j <= 0.0) {
        auto fn = [&](double t) {
          d.eval_into(t, probe);
          return guard(t, probe);
        };
        const EventLocation loc =
            locate_event(fn, t_prev, tj, phi_prev, phi_j, cfg);
        run.hit_event = true;
        run.t_stop = loc.tau;
        run.y_stop = d.eval(loc.tau);
        return run;
      }
      phi_prev = phi_j;
      t_prev = tj;
    }
  }
  run.hit_event = false;
  run.t_stop = t_end;
  run.y_stop = stepper.y();
  return run;
}

// Builds the stored node grid of a segment: uniform eta floor merged with the
// accepted step endpoints, states read off the dense output, algebraic nodes
// re-solved along the grid, slopes from the model RHS.  `extra_nodes`, when
// given, receives (node index, t, full dense state y) for augmented runs.
template <HybridModel M, class NodeHook>
SegmentBlock assemble_segment(const M& m, const VecX& p, const SegmentRun& run,
                              double t_start, const VecX& z_start,
                              const SimConfig& cfg, NodeHook&& hook) {
  const Dims dims = m.dims();
  SegmentBlock seg;
  seg.t_start = t_start;
  seg.t_end = run.t_stop;
  const double len = seg.t_end - t_start;

  std::vector<double> extra;
  for (const DenseStep& d : run.steps) {
    if (len <= 0.0) break;
    const double eta = (d.t_end() - t_start) / len;
    if (eta < 1.0) extra.push_back(eta);
  }
  seg.eta = merge_eta_grid(cfg.n_nodes_min, extra);

  const int n = seg.n_nodes();
  seg.x.resize(dims.n_x, n);
  seg.z.resize(dims.n_z, n);
  seg.xdot.resize(dims.n_x, n);

  VecX z = z_start;
  VecX y;
  std::size_t step_idx = 0;
  for (int k = 0; k < n; ++k) {
    const double t = seg.t_start + seg.eta(k) * len;
    while (step_idx + 1 < run.steps.size() &&
           run.steps[step_idx].t_end() < t) {
      ++step_idx;
    }
    if (!run.steps.empty()) {
      run.steps[step_idx].eval_into(t, y);
    } else {
      y = run.y_stop;  // zero-length segment
    }
    const VecX x = y.head(dims.n_x);
    z = solve_algebraic(m, t, x, p, z, cfg.algebraic);
    seg.x.col(k) = x;
    seg.z.col(k) = z;
    seg.xdot.col(k) = eval_f(m, t, x, z, p);
    hook(k, t, y, z);
  }
  return seg;
}

// ---- event processing ---------------------------------------------------------

template <HybridModel M>
struct EventApplication {
  EventBlock block;
  VecX f_minus;     // flow at (tau, w-)
  VecX zdot_minus;  // dz/dt along the flow at (tau, w-)
  bool grazing = false;
};

// Resolves the firing clause at a located crossing, checks transversality,
// applies the reset, and reinitializes the algebraic state.
template <HybridModel M>
EventApplication<M> process_event(const M& m, const VecX& p, double tau,
                                  const VecX& x_minus,
                                  const std::vector<char>& mask, VecX z_warm,
                                  const SimConfig& cfg) {
  const Dims dims = m.dims();
  EventApplication<M> ev;
  const VecX z_minus = solve_algebraic(m, tau, x_minus, p, z_warm, cfg.algebraic);
  const int e_star = select_event_index(m, tau, x_minus, z_minus, p, mask);

  ev.f_minus = eval_f(m, tau, x_minus, z_minus, p);
  TangentSeeds flow = TangentSeeds::zero(dims.n_x, dims.n_z, dims.n_p, 1);
  flow.dt(0) = 1.0;
  flow.dx.col(0) = ev.f_minus;
  ev.zdot_minus = algebraic_tangent(m, tau, x_minus, z_minus, p, flow).col(0);

  TangentSeeds gseeds = flow;
  gseeds.dz = MatX::Zero(dims.n_z, 1);
  gseeds.dz.col(0) = ev.zdot_minus;
  const double slope =
      guard_tangent(m, e_star, tau, x_minus, z_minus, p, gseeds).tangent(0, 0);
  ev.grazing = !(slope <= -cfg.tol_transv);

  auto [x_plus, z_plus] = apply_reset(m, e_star, tau, x_minus, z_minus, p,
                                      cfg.algebraic);
  ev.block.tau = tau;
  ev.block.event_index = e_star;
  ev.block.x_minus = x_minus;
  ev.block.z_minus = z_minus;
  ev.block.x_plus = std::move(x_plus);
  ev.block.z_plus = std::move(z_plus);
  ev.block.guard_slope = slope;
  return ev;
}

// ---- top-level simulation -------------------------------------------------------

// Simulates on [0, t1].  Produces the event-split trajectory; if more than
// k_max segments would be needed the trajectory is marked saturated and
// downstream losses treat it as infeasible.
template <HybridModel M>
EventSplitTrajectory simulate(const M& m, const VecX& p, double t1,
                              const SimConfig& cfg = {}) {
  const Dims dims = m.dims();
  dims.validate();
  if (p.size() != dims.n_p) {
    throw InvalidArgument("simulate: parameter vector length mismatch");
  }
  if (!(t1 > 0.0)) {
    throw InvalidArgument("simulate: horizon must be positive");
  }

  EventSplitTrajectory traj;
  traj.k_max = cfg.k_max;
  traj.t0 = 0.0;
  traj.t_final = t1;
  traj.p = p;

  double t = 0.0;
  VecX x = m.x0();
  VecX z = solve_algebraic(m, 0.0, x, p, m.z0_guess(), cfg.algebraic);

  while (true) {
    if (traj.n_segments() == cfg.k_max) {
      traj.saturated = true;
      traj.t_final = t;
      return traj;
    }
    const std::vector<char> mask = active_guard_mask(m, t, x, z, p, cfg.eps_phi);
    ReducedRhs<M> rhs(m, p, cfg.algebraic, z);
    GuardProbe<M> guard(m, p, mask, cfg.algebraic, z, cfg.c_big);
    const SegmentRun run = run_segment(rhs, guard, t, x, t1, cfg);
    traj.segments.push_back(assemble_segment(
        m, p, run, t, z, cfg, [](int, double, const VecX&, const VecX&) {}));

    if (!run.hit_event) {
      traj.t_final = t1;
      return traj;
    }
    const double tau = run.t_stop;
    EventApplication<M> ev =
        process_event(m, p, tau, run.y_stop.head(dims.n_x), mask, z, cfg);
    if (ev.grazing) {
      traj.grazing.push_back({traj.n_events(), ev.block.guard_slope});
    }
    traj.events.push_back(ev.block);
    t = tau;
    x = traj.events.back().x_plus;
    z = traj.events.back().z_plus;

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
      traj.t_final = t1;
      return traj;
    }
  }
}

}  // namespace hybridae
