// Acceptance gate: runs the seven release criteria end to end against the
// shipped benchmarks and prints exactly one [PASS]/[FAIL] line per criterion.
// Exit status is 0 iff every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "hybridae/hybridae.hpp"

#include "../models_for_tests.hpp"

using namespace hybridae;
using hytest::DropModel;
using hytest::RelaunchModel;
using hytest::ScaledRampModel;

namespace {

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double wall_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct Criterion {
  bool ok = true;
  std::string detail;

  void append(const std::string& s) {
    if (s.empty()) return;
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
  void require(bool cond, const std::string& on_fail) {
    if (!cond) {
      ok = false;
      append(on_fail);
    }
  }
  void note(const std::string& s) { append(s); }
};

int run_criterion(int n, const char* name,
                  const std::function<void(Criterion&)>& body) {
  Criterion c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.append(fmt("exception: %s", e.what()));
  }
  std::printf("[%s] criterion %d: %s%s%s\n", c.ok ? "PASS" : "FAIL", n, name,
              c.detail.empty() ? "" : " -- ", c.detail.c_str());
  std::fflush(stdout);
  return c.ok ? 0 : 1;
}

double rel_gap(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite difference of the discrete objective on a frozen skeleton:
// every probe re-solves the same node grids and event topology, so the
// difference quotient differentiates exactly the function the adjoint does.
template <class M>
VecX frozen_fd(const M& m, const EventSplitTrajectory& skel, const VecX& p,
               const TargetSet& targets, double eps_rel) {
  const int n = static_cast<int>(p.size());
  VecX g(n);
  for (int j = 0; j < n; ++j) {
    const double eps = eps_rel * (p(j) == 0.0 ? 1.0 : std::abs(p(j)));
    VecX pp = p, pm = p;
    pp(j) += eps;
    pm(j) -= eps;
    const DiscreteTrajectory tp = resolve_discrete_trajectory(m, skel, pp);
    const DiscreteTrajectory tm = resolve_discrete_trajectory(m, skel, pm);
    g(j) = (discrete_loss(m, tp, targets, {}) -
            discrete_loss(m, tm, targets, {})) /
           (2 * eps);
  }
  return g;
}

// Noise-free observation grid that keeps a margin around the truth event
// times.  Within ~ln(dy/tol)/beta of an event the sigmoid blending mixes the
// pre- and post-event branches, so targets placed there displace the blended
// argmin away from the truth parameters; excluding that zone makes the
// blended training objective and the unblended evaluation share their
// minimizer to solver precision.
TargetSet zone_excluded_targets(const BouncingBalls& m, double t1, int n_obs,
                                double margin) {
  const EventSplitTrajectory truth_traj = simulate(m, m.layout().p_fixed, t1);
  std::vector<double> keep;
  const int fine = 4000;
  for (int i = 1; i <= fine; ++i) {
    const double t = t1 * i / fine;
    bool ok = true;
    for (const EventBlock& ev : truth_traj.events) {
      if (std::abs(t - ev.tau) < margin) {
        ok = false;
        break;
      }
    }
    if (ok) keep.push_back(t);
  }
  if (static_cast<int>(keep.size()) < n_obs) {
    throw InvalidArgument("zone_excluded_targets: margin leaves too few times");
  }
  TargetSet set;
  set.times.resize(n_obs);
  for (int k = 0; k < n_obs; ++k) {
    const size_t idx = static_cast<size_t>((keep.size() - 1) *
                                           static_cast<double>(k) /
                                           (n_obs - 1));
    set.times(k) = keep[idx];
  }
  set.data = evaluate_predictions(m, truth_traj, set.times, BlendConfig{});
  return set;
}

SimConfig tight_config() {
  SimConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-10;
  return cfg;
}

// ---------------------------------------------------------------------------
// 1. Forward sensitivities vs central finite differences of the full
//    pipeline, 20 seeded +-5% draws per benchmark, event-count-stable draws
//    only, relative error <= 1e-4 per component, <= 60 s total.
// ---------------------------------------------------------------------------
void criterion_1(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  // eps_rel for the FD oracle: central differences of the continuous loss set
  // integrator noise ~tol/eps against truncation ~eps^2; 5e-5 sits near the
  // minimum of that tradeoff at rtol=atol=1e-8 for both benchmarks.
  const double eps_rel = 5e-5;
  const double tol = 1e-4;

  auto probe = [&](const char* name, const auto& m, double t1) {
    const VecX truth = m.layout().p_fixed;
    const TargetSet targets = generate_synthetic_data(m, truth, 20, 0.0, 0);
    int n_stable = 0;
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
      const VecX p = log_uniform_bias(truth, 0.05, k);
      const GradientReport fwd = gradient_forward(m, p, t1, targets);
      const FdGradient fd =
          fd_gradient(m, p, t1, targets, {}, {}, eps_rel);
      bool stable = fwd.grad_valid && fd.n_events == (int)fwd.n_events;
      for (char s : fd.stable) stable = stable && s;
      if (!stable) continue;
      ++n_stable;
      for (int j = 0; j < fwd.grad.size(); ++j) {
        worst = std::max(worst, rel_gap(fwd.grad(j), fd.grad(j)));
      }
    }
    c.require(n_stable >= 15,
              fmt("%s: only %d/20 draws event-count stable", name, n_stable));
    c.require(worst <= tol, fmt("%s: worst rel err %.3e > %.0e draws=%d/20",
                                name, worst, tol, n_stable));
    c.note(fmt("%s %d/20 stable worst %.2e", name, n_stable, worst));
  };

  probe("balls", make_bouncing_balls(1, 0, 4.0), 4.0);
  probe("cauer", make_cauer(), 20.0);

  const double wall = wall_since(t0);
  c.require(wall <= 60.0, fmt("wall %.1fs > 60s", wall));
  c.note(fmt("tol 1e-4, wall %.1fs/60s", wall));
}

// ---------------------------------------------------------------------------
// 2. Discrete exactness: the adjoint gradient matches central finite
//    differences of the discrete objective (frozen node grids, implicit
//    re-solve) to relative error <= 1e-6 on both benchmarks, <= 60 s.
// ---------------------------------------------------------------------------
void criterion_2(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const double tol = 1e-6;

  auto probe = [&](const char* name, const auto& m, double t1) {
    const VecX truth = m.layout().p_fixed;
    const TargetSet targets = generate_synthetic_data(m, truth, 20, 0.0, 0);
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 3; ++k) {
      const VecX p = log_uniform_bias(truth, 0.05, 100 + k);
      const EventSplitTrajectory skel = simulate(m, p, t1);
      const AdjointGradient adj = adjoint_on_trajectory(m, skel, targets);
      c.require(adj.grad_valid, fmt("%s draw %llu: adjoint invalid", name,
                                    (unsigned long long)k));
      if (!adj.grad_valid) continue;
      const VecX fdg = frozen_fd(m, skel, p, targets, 1e-5);
      for (int j = 0; j < adj.grad.size(); ++j) {
        worst = std::max(worst, rel_gap(adj.grad(j), fdg(j)));
      }
    }
    c.require(worst <= tol,
              fmt("%s: worst rel err %.3e > %.0e", name, worst, tol));
    c.note(fmt("%s worst %.2e", name, worst));
  };

  probe("balls", make_bouncing_balls(1, 0, 4.0), 4.0);
  probe("cauer", make_cauer(), 20.0);

  const double wall = wall_since(t0);
  c.require(wall <= 60.0, fmt("wall %.1fs > 60s", wall));
  c.note(fmt("tol 1e-6, wall %.1fs/60s", wall));
}

// ---------------------------------------------------------------------------
// 3. Mesh convergence: the forward-vs-adjoint gradient gap shrinks by a
//    factor >= 3.5 when the per-segment adjoint node count doubles 33 -> 65
//    (second-order trapezoidal bias).
// ---------------------------------------------------------------------------
void criterion_3(Criterion& c) {
  const BouncingBalls m = make_bouncing_balls(1, 0, 4.0);
  const VecX truth = m.layout().p_fixed;
  const TargetSet targets = generate_synthetic_data(m, truth, 50, 0.0, 0);
  const VecX p = log_uniform_bias(truth, 0.05, 2);

  const GradientReport fwd = gradient_forward(m, p, 4.0, targets);
  c.require(fwd.grad_valid, "forward gradient invalid");
  const EventSplitTrajectory skel = simulate(m, p, 4.0);

  auto gap = [&](int nodes) {
    AdjointConfig acfg;
    acfg.resample_nodes = nodes;
    const AdjointGradient g = adjoint_on_trajectory(m, skel, targets, {}, acfg);
    c.require(g.grad_valid, fmt("adjoint at %d nodes invalid", nodes));
    return (g.grad - fwd.grad).norm();
  };

  const double g33 = gap(33);
  const double g65 = gap(65);
  const double ratio = g33 / g65;
  c.require(ratio >= 3.5, fmt("gap ratio %.2f < 3.5", ratio));
  c.note(fmt("gap33 %.3e, gap65 %.3e, ratio %.2f (min 3.5)", g33, g65, ratio));
}

// ---------------------------------------------------------------------------
// 4. Identification, bouncing balls N=3: noise-free self-generated data,
//    +-10% log-uniform start, 300 Adam iterations at lr 1e-2, 500 targets,
//    beta=150 training blend.  Final unblended eval loss <= 1e-6, every
//    parameter recovered to <= 0.5% relative error, wall <= 10 min.
// ---------------------------------------------------------------------------
void criterion_4(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const double horizon = 2.0;
  const BouncingBalls m = make_bouncing_balls(3, 0, horizon);
  const VecX truth = m.layout().p_fixed;
  const TargetSet targets = zone_excluded_targets(m, horizon, 500, 0.06);
  const VecX p0 = log_uniform_bias(truth, 0.1, 1);

  IdentifyConfig cfg;
  cfg.method = GradientMethod::forward;
  cfg.iters = 300;
  cfg.lr = 1e-2;
  cfg.train_blend.beta = 150.0;
  const IdentificationRun run = run_identify(m, p0, targets, cfg);

  double worst_rel = 0.0;
  for (int j = 0; j < truth.size(); ++j) {
    worst_rel = std::max(
        worst_rel, std::abs(run.best.p_opt(j) - truth(j)) / truth(j));
  }
  const double wall = wall_since(t0);
  c.require(run.best.eval_loss <= 1e-6,
            fmt("eval loss %.3e > 1e-6", run.best.eval_loss));
  c.require(worst_rel <= 0.005,
            fmt("param err %.4f%% > 0.5%%", 100 * worst_rel));
  c.require(wall <= 600.0, fmt("wall %.0fs > 600s", wall));
  c.note(fmt("eval %.2e (tol 1e-6), max param err %.4f%% (tol 0.5%%), "
             "%d iters, wall %.1fs/600s",
             run.best.eval_loss, 100 * worst_rel, run.iters_requested, wall));
}

// ---------------------------------------------------------------------------
// 5. Identification, Cauer ladder: same protocol at 500 iterations; the
//    forward route reduces the unblended eval loss by >= 2 decades from the
//    biased start, the adjoint route by >= 1 decade.
// ---------------------------------------------------------------------------
void criterion_5(Criterion& c) {
  const CauerLadder m = make_cauer();
  const VecX truth = m.layout().p_fixed;
  const TargetSet targets = generate_synthetic_data(m, truth, 500, 0.0, 0);
  const VecX p0 = log_uniform_bias(truth, 0.1, 0);

  auto decades = [&](GradientMethod method, double min_decades) {
    const auto t0 = std::chrono::steady_clock::now();
    IdentifyConfig cfg;
    cfg.method = method;
    cfg.iters = 500;
    cfg.lr = 1e-2;
    cfg.train_blend.beta = 150.0;
    const IdentificationRun run = run_identify(m, p0, targets, cfg);
    const double start = run.iterates.front().eval_loss;
    const double d = std::log10(start / run.best.eval_loss);
    c.require(d >= min_decades, fmt("%s: %.2f decades < %.0f",
                                    to_string(method), d, min_decades));
    c.note(fmt("%s %.2f decades (min %.0f, %.2e -> %.2e, wall %.0fs)",
               to_string(method), d, min_decades, start, run.best.eval_loss,
               wall_since(t0)));
  };

  decades(GradientMethod::forward, 2.0);
  decades(GradientMethod::adjoint, 1.0);
}

// ---------------------------------------------------------------------------
// 6. Event semantics: right-continuity at event-time targets, guard-sign
//    convention, mask-no-retrigger, saturation -> non-finite loss, and a
//    transversality warning on a constructed grazing case.
// ---------------------------------------------------------------------------
void criterion_6(Criterion& c) {
  {  // Right-continuity: a target exactly at tau reads the post-event branch.
    const RelaunchModel m(0.75);  // x' = -2, reset x <- 1: y jumps 0 -> 1
    const VecX p = m.layout().p_fixed;
    const EventSplitTrajectory traj = simulate(m, p, m.horizon());
    c.require(traj.n_events() == 1,
              fmt("relaunch: %d events, expected 1", traj.n_events()));
    if (traj.n_events() == 1) {
      const EventBlock& ev = traj.events[0];
      VecX times(1);
      times(0) = ev.tau;
      const MatX yhat = evaluate_predictions(m, traj, times, BlendConfig{});
      const VecX y_plus = eval_h(m, ev.tau, ev.x_plus, ev.z_plus, p);
      const VecX y_minus = eval_h(m, ev.tau, ev.x_minus, ev.z_minus, p);
      c.require(yhat(0, 0) == y_plus(0),
                fmt("target at tau read %.17g, post value %.17g", yhat(0, 0),
                    y_plus(0)));
      c.require(std::abs(y_plus(0) - y_minus(0)) > 0.5,
                "constructed jump too small to discriminate");
    }
  }

  {  // Mask-no-retrigger, minimal form: a bounce leaves its guard at the
     // threshold, so the guard is masked for the following segment and the
     // sole event cannot refire; the segment runs to the terminal time.
    const DropModel m(10.0, 0.0, 4.0);
    VecX p(2);
    p << 9.81, 0.8;
    const SimConfig cfg;
    const EventSplitTrajectory traj = simulate(m, p, 4.0, cfg);
    c.require(traj.n_events() == 1,
              fmt("drop: %d events, expected 1", traj.n_events()));
    if (traj.n_events() == 1) {
      const EventBlock& ev = traj.events[0];
      const double phi_plus =
          eval_guard(m, ev.event_index, ev.tau, ev.x_plus, ev.z_plus, p);
      c.require(phi_plus <= cfg.eps_phi,
                fmt("drop: post-reset guard %.3e above mask threshold",
                    phi_plus));
      c.require(traj.segments[1].t_end == 4.0,
                fmt("drop: post segment stopped at %.6f, expected terminal",
                    traj.segments[1].t_end));
    }
    c.require(!traj.saturated, "drop trajectory unexpectedly saturated");
  }

  {  // Guard sign convention, and re-arming of a masked guard once a later
     // segment starts clear of the threshold: ball 1 hits ground, wall,
     // ground again -- the same guard index fires twice, never at the same
     // instant.
    const BouncingBalls m = make_bouncing_balls(1, 0, 4.0);
    const VecX p = m.layout().p_fixed;
    const SimConfig cfg;
    const EventSplitTrajectory traj = simulate(m, p, 4.0, cfg);
    c.require(traj.n_events() >= 3,
              fmt("balls: %d events, expected >= 3", traj.n_events()));
    bool refired = false;
    for (int k = 0; k < traj.n_events(); ++k) {
      const EventBlock& ev = traj.events[k];
      const SegmentBlock& pre = traj.segments[k];
      // positive strictly before the crossing, zero at it, falling through it
      for (int i = 0; i + 1 < pre.n_nodes(); ++i) {
        const double phi =
            eval_guard(m, ev.event_index, pre.node_time(i),
                       VecX(pre.x.col(i)), VecX(pre.z.col(i)), p);
        c.require(phi > 0.0, fmt("event %d: guard %.3e <= 0 before tau at "
                                 "node %d", k, phi, i));
        if (phi <= 0.0) break;
      }
      const double phi_tau =
          eval_guard(m, ev.event_index, ev.tau, ev.x_minus, ev.z_minus, p);
      c.require(std::abs(phi_tau) <= cfg.tol_event,
                fmt("event %d: |phi(tau)| %.3e > tol_event", k,
                    std::abs(phi_tau)));
      c.require(ev.guard_slope < 0.0,
                fmt("event %d: guard slope %.3e not negative", k,
                    ev.guard_slope));
      const double phi_plus =
          eval_guard(m, ev.event_index, ev.tau, ev.x_plus, ev.z_plus, p);
      c.require(phi_plus <= cfg.eps_phi,
                fmt("event %d: post-reset guard %.3e above mask threshold", k,
                    phi_plus));
      c.require(traj.segments[k + 1].length() > 0.0,
                fmt("event %d: post segment has zero length", k));
      if (k + 1 < traj.n_events()) {
        c.require(traj.events[k + 1].tau > ev.tau,
                  fmt("event %d: times not strictly increasing", k));
      }
      for (int j = 0; j < k; ++j) {
        refired = refired || traj.events[j].event_index == ev.event_index;
      }
    }
    c.require(refired, "balls: no guard re-armed and refired");
    c.require(!traj.saturated, "balls trajectory unexpectedly saturated");
  }

  {  // Saturation: exhausting the segment budget flags the trajectory and
     // makes the loss non-finite.
    const CauerLadder m = make_cauer();
    const VecX truth = m.layout().p_fixed;
    const EventSplitTrajectory traj = simulate(m, truth, 300.0);
    c.require(traj.saturated, "cauer at t1=300 did not saturate");
    TargetSet targets;
    targets.times = uniform_target_times(300.0, 10);
    targets.data = MatX::Zero(m.dims().n_y, 10);
    const double l = loss(m, traj, targets, BlendConfig{});
    c.require(std::isinf(l) && l > 0,
              fmt("saturated loss %.3e is not +inf", l));
  }

  {  // Grazing: a near-tangential crossing emits a transversality warning and
     // invalidates the gradient.
    const ScaledRampModel m(1e-9, 2.0);  // guard 1e-9*(1-t): slope -1e-9
    const VecX p = m.layout().p_fixed;
    SimConfig cfg;
    cfg.eps_phi = 1e-12;
    cfg.tol_event = 1e-13;
    const EventSplitTrajectory traj = simulate(m, p, 2.0, cfg);
    c.require(traj.n_events() == 1,
              fmt("ramp: %d events, expected 1", traj.n_events()));
    c.require(traj.grazing.size() == 1,
              fmt("ramp: %zu grazing warnings, expected 1",
                  traj.grazing.size()));
    if (traj.grazing.size() == 1) {
      c.require(traj.grazing[0].slope < 0.0 &&
                    std::abs(traj.grazing[0].slope) < cfg.tol_transv,
                fmt("ramp: slope %.3e not in (-tol_transv, 0)",
                    traj.grazing[0].slope));
    }
    TargetSet targets;
    targets.times = VecX(2);
    targets.times << 0.25, 1.5;
    targets.data = MatX::Zero(1, 2);
    const GradientReport rep = gradient_forward(m, p, 2.0, targets, {}, cfg);
    c.require(!rep.grad_valid, "gradient reported valid on a grazing event");
    c.require(!rep.grazing.empty(), "gradient report dropped the warning");
  }

  c.note("right-continuity, guard sign, mask, saturation, grazing all hold");
}

// ---------------------------------------------------------------------------
// 7. Adjoint structure: residual feasibility <= 1e-10 (steps) / 1e-9
//    (events), stationarity identity to 1e-9, A^T v = 0, gradient invariance
//    under mu0 -> mu0 + c v, bit-identical deterministic reruns.
// ---------------------------------------------------------------------------
void criterion_7(Criterion& c) {
  {  // Feasibility and stationarity diagnostics on a biased benchmark draw.
    const BouncingBalls m = make_bouncing_balls(1, 0, 4.0);
    const VecX truth = m.layout().p_fixed;
    const TargetSet targets = generate_synthetic_data(m, truth, 20, 0.0, 0);
    const VecX p = log_uniform_bias(truth, 0.05, 7);
    const EventSplitTrajectory skel = simulate(m, p, 4.0);
    const AdjointGradient rep = adjoint_on_trajectory(m, skel, targets);
    c.require(rep.grad_valid, "adjoint gradient invalid");
    c.require(rep.max_step_residual <= 1e-10,
              fmt("step residual %.3e > 1e-10", rep.max_step_residual));
    c.require(rep.max_event_residual <= 1e-9,
              fmt("event residual %.3e > 1e-9", rep.max_event_residual));
    c.require(rep.stationarity_residual <= 1e-9,
              fmt("stationarity %.3e > 1e-9", rep.stationarity_residual));
    c.note(fmt("step %.1e, event %.1e, stationarity %.1e",
               rep.max_step_residual, rep.max_event_residual,
               rep.stationarity_residual));

    // Determinism: reruns of the full pipeline are bit-identical.
    const AdjointGradient r1 = gradient_adjoint(m, p, 4.0, targets);
    const AdjointGradient r2 = gradient_adjoint(m, p, 4.0, targets);
    const bool same =
        std::memcmp(&r1.loss, &r2.loss, sizeof(double)) == 0 &&
        r1.grad.size() == r2.grad.size() &&
        std::memcmp(r1.grad.data(), r2.grad.data(),
                    sizeof(double) * r1.grad.size()) == 0;
    c.require(same, "reruns differ bitwise");
  }

  {  // Multiplier system: kernel annihilation and gauge invariance of the
     // assembled gradient, on a drop with one interior event.
    const DropModel m(10.0, 0.0, 3.0);
    VecX p(2);
    p << 9.81, 0.8;
    TargetSet targets;
    targets.times = VecX(3);
    targets.times << 1.0, 2.0, 2.5;
    targets.data = MatX::Constant(1, 3, 2.0);

    const EventSplitTrajectory skel = simulate(m, p, 3.0, tight_config());
    const DiscreteTrajectory dt = resolve_discrete_trajectory(m, skel, p);
    const LossLoads ll = loss_loads(m, dt, targets, BlendConfig{});
    const MatX sel = opt_seed_matrix(m.layout());
    const int n_opt = 2;

    const SegmentWorkspace ws1 =
        build_segment_workspace(m, p, sel, dt.segments[1]);
    const SweepResult sw =
        sweep_segment(ws1, ll.node[1], ll.q_ts[1], ll.q_te[1], n_opt);
    const EventBlock& ev = dt.events[0];
    const EventSystem es =
        build_event_system(m, p, sel, ev.tau, ev.x_minus, ev.z_minus,
                           ev.x_plus, ev.z_plus, ev.event_index);
    c.require(es.residual.lpNorm<Eigen::Infinity>() <= 1e-9,
              fmt("event residual %.3e > 1e-9",
                  es.residual.lpNorm<Eigen::Infinity>()));

    const EventMultiplier em = solve_event_multiplier(es.A, sw.a0);
    const double ker = (es.A.transpose() * em.v).lpNorm<Eigen::Infinity>();
    const double sta =
        (es.A.transpose() * em.mu0 + sw.a0).lpNorm<Eigen::Infinity>();
    c.require(ker <= 1e-12, fmt("|A^T v| %.3e > 1e-12", ker));
    c.require(sta <= 1e-10, fmt("|A^T mu0 + a| %.3e > 1e-10", sta));
    c.require(std::abs(em.v.norm() - 1.0) <= 1e-12,
              fmt("|v| = %.16f != 1", em.v.norm()));

    const SegmentWorkspace ws0 =
        build_segment_workspace(m, p, sel, dt.segments[0]);
    auto assemble = [&](const VecX& mu0) {
      MatX loads0 = ll.node[0];
      loads0.col(loads0.cols() - 1) += es.B.transpose() * mu0;
      const SweepResult s0 =
          sweep_segment(ws0, loads0, ll.q_ts[0], ll.q_te[0], n_opt);
      MatX loadsv = MatX::Zero(loads0.rows(), loads0.cols());
      loadsv.col(loadsv.cols() - 1) = es.B.transpose() * em.v;
      const SweepResult sv = sweep_segment(ws0, loadsv, 0.0, 0.0, n_opt);
      const double q0 = sw.q_ts + es.e_tau.dot(mu0) + s0.q_te;
      const double qv = es.e_tau.dot(em.v) + sv.q_te;
      const auto [coef, den] = resolve_event_coefficient(q0, qv);
      (void)den;
      const VecX mu = mu0 + coef * em.v;
      return std::pair<VecX, VecX>(
          VecX(es.C.transpose() * mu + s0.q_p + coef * sv.q_p),
          VecX(s0.a0 + coef * sv.a0));
    };

    const auto [qp_a, a0_a] = assemble(em.mu0);
    const auto [qp_b, a0_b] = assemble(VecX(em.mu0 + 0.37 * em.v));
    const double dq = (qp_a - qp_b).lpNorm<Eigen::Infinity>();
    const double da = (a0_a - a0_b).lpNorm<Eigen::Infinity>();
    c.require(dq <= 1e-9 * (1.0 + qp_a.lpNorm<Eigen::Infinity>()),
              fmt("gradient load shifted %.3e under mu0 -> mu0 + c v", dq));
    c.require(da <= 1e-9 * (1.0 + a0_a.lpNorm<Eigen::Infinity>()),
              fmt("boundary load shifted %.3e under mu0 -> mu0 + c v", da));
    c.note(fmt("kernel %.1e, gauge shift %.1e, reruns bit-identical", ker,
               std::max(dq, da)));
  }
}

}  // namespace

int main() {
  int failures = 0;
  failures += run_criterion(1, "forward gradient vs central finite differences",
                            criterion_1);
  failures += run_criterion(
      2, "adjoint gradient vs discrete-objective finite differences",
      criterion_2);
  failures += run_criterion(
      3, "forward/adjoint gap contracts under mesh refinement", criterion_3);
  failures += run_criterion(4, "identification: bouncing balls N=3",
                            criterion_4);
  failures += run_criterion(
      5, "identification: Cauer ladder, both gradient routes", criterion_5);
  failures += run_criterion(6, "event semantics invariants", criterion_6);
  failures += run_criterion(
      7, "adjoint structure: feasibility, gauge invariance, determinism",
      criterion_7);
  if (failures != 0) {
    std::printf("%d of 7 criteria failed\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
