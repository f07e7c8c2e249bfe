#pragma once

// Gradient-based parameter identification: Adam on either gradient route,
// blended (soft) training loss with unblended (hard) evaluation loss, a
// positivity projection, seeded multiplicative parameter bias, and a
// cross-method comparison harness that puts the forward route, the discrete
// adjoint and the finite-difference oracle side by side.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hybridae/adjoint.hpp"
#include "hybridae/errors.hpp"
#include "hybridae/forward_sensitivity.hpp"
#include "hybridae/gradient.hpp"
#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/rng.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/target.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

enum class GradientMethod { forward, adjoint };
enum class StopReason { budget, nonfinite, grad_tol };

inline const char* to_string(GradientMethod m) {
  return m == GradientMethod::forward ? "fwd" : "adjoint";
}

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::budget:
      return "budget";
    case StopReason::nonfinite:
      return "nonfinite";
    default:
      return "grad_tol";
  }
}

inline GradientMethod method_from_string(const std::string& s) {
  if (s == "fwd" || s == "forward") return GradientMethod::forward;
  if (s == "adjoint") return GradientMethod::adjoint;
  throw InvalidArgument("unknown gradient method '" + s +
                        "' (expected fwd or adjoint)");
}

// ---- Adam ----------------------------------------------------------------------

struct AdamState {
  VecX m, v;  // first/second moments, zero-initialized
  int step_count = 0;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState make_adam(int n_opt, double lr = 1e-2) {
  AdamState st;
  st.m = VecX::Zero(n_opt);
  st.v = VecX::Zero(n_opt);
  st.lr = lr;
  return st;
}

// One bias-corrected Adam update; returns the parameter increment.
inline VecX adam_step(AdamState& st, const VecX& grad) {
  if (!grad.allFinite()) {
    throw InvalidArgument("adam_step: non-finite gradient");
  }
  if (st.m.size() != grad.size() || st.v.size() != grad.size()) {
    throw InvalidArgument("adam_step: state/gradient size mismatch");
  }
  st.step_count += 1;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(st.beta1, st.step_count);
  const double bc2 = 1.0 - std::pow(st.beta2, st.step_count);
  const VecX m_hat = st.m / bc1;
  const VecX v_hat = st.v / bc2;
  return (-st.lr * m_hat.array() / (v_hat.array().sqrt() + st.eps)).matrix();
}

// Seeded multiplicative bias: p_i = p*_i exp(u_i) with u_i uniform in
// [-half_width, half_width].  Deterministic in the seed.
inline VecX log_uniform_bias(const VecX& p_true, double half_width,
                             std::uint64_t seed) {
  if ((p_true.array() <= 0.0).any()) {
    throw InvalidArgument("log_uniform_bias: truth must be positive");
  }
  if (half_width < 0.0) {
    throw InvalidArgument("log_uniform_bias: negative half width");
  }
  SplitMix64 rng(seed);
  VecX out(p_true.size());
  for (int i = 0; i < p_true.size(); ++i) {
    out(i) = p_true(i) * std::exp(rng.uniform(-half_width, half_width));
  }
  return out;
}

// ---- identification runs --------------------------------------------------------

struct IdentifyConfig {
  GradientMethod method = GradientMethod::forward;
  int iters = 500;
  double lr = 1e-2;
  double grad_tol = 0.0;  // 0: budget-driven, matching fixed-iteration protocols
  double t1 = 0.0;        // <= 0: use the model horizon
  BlendConfig train_blend = [] {
    BlendConfig b;
    b.mode = BlendMode::soft;
    return b;
  }();                     // blended objective the optimizer descends
  SimConfig sim{};
  AdjointConfig adjoint{};
  double floor_rel = 1e-8;  // positivity floor relative to the initial point
};

struct IterateLog {
  VecX p_opt;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

struct BestSnapshot {
  VecX p_opt;
  double eval_loss = std::numeric_limits<double>::infinity();
  int iter = -1;
};

struct IdentificationRun {
  std::vector<IterateLog> iterates;  // one row per evaluated point
  BestSnapshot best;                 // argmin of the unblended eval loss
  StopReason stop_reason = StopReason::budget;
  // config echo
  GradientMethod method = GradientMethod::forward;
  int iters_requested = 0;
  double lr = 0.0;
  double grad_tol = 0.0;
  double t1 = 0.0;
  double train_beta = 0.0;
};

// Runs Adam on the selected gradient route.  Each row logs the point before
// the step: blended training loss, unblended evaluation loss on the same
// parameters, and the max-norm of the training gradient.  Stops on budget
// (after iters steps, so iters+1 rows), on a non-finite loss/gradient, or on
// grad_tol when positive.  A trajectory whose event skeleton cannot be
// re-solved counts as a non-finite iterate, not a crash.
template <HybridModel M>
IdentificationRun run_identify(const M& m, const VecX& p_init,
                               const TargetSet& targets,
                               const IdentifyConfig& cfg = {}) {
  const ParameterLayout layout = m.layout();
  layout.validate();
  const int n_opt = layout.n_opt();
  if (p_init.size() != layout.n_p) {
    throw InvalidArgument("run_identify: initial parameter size mismatch");
  }
  if (cfg.iters < 0) {
    throw InvalidArgument("run_identify: negative iteration budget");
  }
  const double t1 = cfg.t1 > 0.0 ? cfg.t1 : m.horizon();
  const BlendConfig eval_blend{};  // hard selection: the unblended objective

  IdentificationRun run;
  run.method = cfg.method;
  run.iters_requested = cfg.iters;
  run.lr = cfg.lr;
  run.grad_tol = cfg.grad_tol;
  run.t1 = t1;
  run.train_beta = cfg.train_blend.beta;
  run.iterates.reserve(cfg.iters + 1);

  VecX p_opt = extract_opt_params(layout, p_init);
  const VecX floor = cfg.floor_rel * p_opt.cwiseAbs();
  VecX p_full = p_init;
  AdamState adam = make_adam(n_opt, cfg.lr);

  for (int it = 0;; ++it) {
    const auto tick = std::chrono::steady_clock::now();
    for (int j = 0; j < n_opt; ++j) p_full(layout.opt_idx[j]) = p_opt(j);

    double train = std::numeric_limits<double>::quiet_NaN();
    double eval = std::numeric_limits<double>::quiet_NaN();
    VecX grad = VecX::Zero(n_opt);
    bool grad_ok = false;
    bool saturated = false;
    try {
      if (cfg.method == GradientMethod::forward) {
        const GradientReport rep =
            gradient_forward(m, p_full, t1, targets, cfg.train_blend, cfg.sim);
        train = rep.loss;
        grad = rep.grad;
        grad_ok = rep.grad_valid;
        saturated = rep.saturated;
        if (!saturated) {
          eval = loss(m, simulate(m, p_full, t1, cfg.sim), targets, eval_blend,
                      cfg.sim.algebraic);
        }
      } else {
        const EventSplitTrajectory traj = simulate(m, p_full, t1, cfg.sim);
        const AdjointGradient rep = adjoint_on_trajectory(
            m, traj, targets, cfg.train_blend, cfg.adjoint);
        train = rep.loss;
        grad = rep.grad;
        grad_ok = rep.grad_valid;
        saturated = rep.saturated;
        if (!saturated) {
          eval = loss(m, traj, targets, eval_blend, cfg.sim.algebraic);
        }
      }
    } catch (const StaleTrajectory&) {
      grad_ok = false;
    }

    IterateLog row;
    row.p_opt = p_opt;
    row.train_loss = train;
    row.eval_loss = eval;
    row.grad_norm = grad_ok ? grad.lpNorm<Eigen::Infinity>()
                            : std::numeric_limits<double>::quiet_NaN();
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - tick)
                      .count();
    run.iterates.push_back(row);

    if (it == 0 && saturated) {
      throw SetupError("run_identify: the initial point saturates the event "
                       "budget; choose a different start or horizon");
    }
    if (std::isfinite(eval) && eval < run.best.eval_loss) {
      run.best.p_opt = p_opt;
      run.best.eval_loss = eval;
      run.best.iter = it;
    }
    if (it == cfg.iters) {
      run.stop_reason = StopReason::budget;
      break;
    }
    if (!grad_ok || !std::isfinite(train) || !grad.allFinite()) {
      run.stop_reason = StopReason::nonfinite;
      break;
    }
    if (cfg.grad_tol > 0.0 && row.grad_norm < cfg.grad_tol) {
      run.stop_reason = StopReason::grad_tol;
      break;
    }
    p_opt += adam_step(adam, grad);
    p_opt = p_opt.cwiseMax(floor);
  }
  return run;
}

// ---- method comparison -----------------------------------------------------------

// One row per optimized parameter: both analytic routes, the central
// finite-difference oracle, pairwise gaps scaled by max(1, magnitudes), and
// the oracle's event-count stability flag.  Invalid entries are quiet NaN so
// a saturated point yields a table of markers rather than a crash.
struct MethodComparison {
  struct Row {
    double fwd = std::numeric_limits<double>::quiet_NaN();
    double adjoint = std::numeric_limits<double>::quiet_NaN();
    double fd = std::numeric_limits<double>::quiet_NaN();
    double rel_fwd_adjoint = std::numeric_limits<double>::quiet_NaN();
    double rel_fwd_fd = std::numeric_limits<double>::quiet_NaN();
    double rel_adjoint_fd = std::numeric_limits<double>::quiet_NaN();
    int fd_stable = 0;
  };
  double loss = std::numeric_limits<double>::quiet_NaN();
  bool saturated = false;
  int n_events = 0;
  std::vector<Row> rows;
};

namespace detail {

inline double rel_gap(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace detail

template <HybridModel M>
MethodComparison compare_methods(const M& m, const VecX& p, double t1,
                                 const TargetSet& targets,
                                 const BlendConfig& blend = {},
                                 const SimConfig& cfg = {},
                                 const AdjointConfig& acfg = {},
                                 double eps_rel = 1e-6) {
  const ParameterLayout layout = m.layout();
  const int n_opt = layout.n_opt();

  const GradientReport fwd = gradient_forward(m, p, t1, targets, blend, cfg);
  AdjointGradient adj;
  bool adj_ok = false;
  try {
    adj = gradient_adjoint(m, p, t1, targets, blend, cfg, acfg);
    adj_ok = adj.grad_valid;
  } catch (const StaleTrajectory&) {
    adj_ok = false;
  }
  const FdGradient fd = fd_gradient(m, p, t1, targets, blend, cfg, eps_rel);

  MethodComparison table;
  table.loss = fwd.loss;
  table.saturated = fwd.saturated;
  table.n_events = fwd.n_events;
  table.rows.resize(n_opt);
  for (int j = 0; j < n_opt; ++j) {
    MethodComparison::Row& row = table.rows[j];
    if (fwd.grad_valid) row.fwd = fwd.grad(j);
    if (adj_ok) row.adjoint = adj.grad(j);
    row.fd_stable = fd.stable[j];
    if (fd.stable[j] && std::isfinite(fd.grad(j))) row.fd = fd.grad(j);
    row.rel_fwd_adjoint = detail::rel_gap(row.fwd, row.adjoint);
    row.rel_fwd_fd = detail::rel_gap(row.fwd, row.fd);
    row.rel_adjoint_fd = detail::rel_gap(row.adjoint, row.fd);
  }
  return table;
}

}  // namespace hybridae
