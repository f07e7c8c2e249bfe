// daeid: simulate hybrid DAE benchmarks, check gradients, and identify
// parameters from the command line.
//
// Subcommands: simulate | gradcheck | identify | compare.  All file outputs
// are written atomically (temp then rename).  Exit codes: 0 success, 1 usage
// error, 2 numerical failure (the message names the failing sub-operation).

#include <cstdint>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hybridae/hybridae.hpp"

namespace {

using namespace hybridae;

struct Options {
  std::string model = "balls";
  int n_balls = 1;
  std::uint64_t seed = 0;
  double t1 = 0.0;  // 0: run to the model horizon
  double rtol = 1e-8;
  double atol = 1e-8;
  int nodes = 33;
  int targets = 100;
  double noise = 0.0;
  double bias = 0.0;
  double beta = 150.0;
  std::string method = "fwd";
  int iters = 500;
  double lr = 1e-2;
  double grad_tol = 0.0;
  std::string out;
  std::string out_prefix;
  std::string seeds;  // "a..b" multi-start range for identify
};

SimConfig sim_config(const Options& o) {
  SimConfig cfg;
  cfg.rtol = o.rtol;
  cfg.atol = o.atol;
  cfg.n_nodes_min = o.nodes;
  return cfg;
}

// "path/name.ext" -> "path/name<suffix>"; no extension appends the suffix.
std::string sidecar(const std::string& out, const std::string& suffix) {
  const size_t slash = out.find_last_of("/\\");
  const size_t dot = out.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return out + suffix;
  }
  return out.substr(0, dot) + suffix;
}

// Observations on the uniform grid (0, t_end], simulated at the model's true
// parameters; optional i.i.d. Gaussian noise drawn from `seed`.
template <class M>
TargetSet synth_targets(const M& m, double t_end, int n_obs, double noise,
                        std::uint64_t seed, const SimConfig& cfg) {
  TargetSet set;
  set.times = uniform_target_times(t_end, n_obs);
  EventSplitTrajectory traj = simulate(m, m.layout().p_fixed, t_end, cfg);
  if (traj.saturated) {
    throw SetupError("target generation: truth trajectory saturated (segments=" +
                     std::to_string(traj.n_segments()) + ")");
  }
  BlendConfig hard;
  set.data = evaluate_predictions(m, traj, set.times, hard, cfg.algebraic);
  if (noise > 0.0) {
    SplitMix64 rng(seed);
    for (int i = 0; i < set.data.cols(); ++i) {
      for (int r = 0; r < set.data.rows(); ++r) {
        set.data(r, i) += noise * rng.normal();
      }
    }
  }
  return set;
}

template <class M>
double end_time(const Options& o, const M& m) {
  return o.t1 > 0.0 ? o.t1 : m.horizon();
}

// Evaluation/start parameters: the model truth, displaced log-uniformly when
// a bias half-width is requested.
template <class M>
VecX start_params(const M& m, double bias, std::uint64_t seed) {
  const VecX truth = m.layout().p_fixed;
  return bias > 0.0 ? log_uniform_bias(truth, bias, seed) : truth;
}

template <class F>
int with_model(const Options& o, F&& body) {
  if (o.model == "balls") {
    const double horizon = o.t1 > 0.0 ? o.t1 : 4.0;
    BouncingBalls m = make_bouncing_balls(o.n_balls, o.seed, horizon);
    return body(m);
  }
  if (o.model == "cauer") {
    CauerLadder m = make_cauer();
    return body(m);
  }
  std::cerr << "daeid: unknown model '" << o.model
            << "' (expected balls or cauer)\n";
  return 1;
}

// Maps library failures onto the documented exit codes.
template <class F>
int guarded(const std::string& op, F&& body) {
  try {
    return body();
  } catch (const InvalidArgument& e) {
    std::cerr << "daeid " << op << ": " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "daeid " << op << ": " << e.what() << "\n";
    return 2;
  }
}

// ---- simulate ---------------------------------------------------------------------

int cmd_simulate(const Options& o) {
  return with_model(o, [&](const auto& m) {
    return guarded("simulate", [&] {
      std::string traj_path, events_path;
      if (!o.out_prefix.empty()) {
        traj_path = o.out_prefix + "_trajectory.csv";
        events_path = o.out_prefix + "_events.json";
      } else {
        traj_path = o.out;
        events_path = sidecar(o.out, "_events.json");
      }
      const SimConfig cfg = sim_config(o);
      const VecX p = start_params(m, o.bias, o.seed);
      EventSplitTrajectory traj = simulate(m, p, end_time(o, m), cfg);
      if (traj.saturated) {
        std::cerr << "daeid simulate: trajectory saturated (segments="
                  << traj.n_segments() << ", reached t=" << traj.t_final
                  << ")\n";
        return 2;
      }
      write_text_atomic(traj_path, trajectory_csv(m, traj));
      write_text_atomic(events_path, events_json(traj));
      std::cout << "simulate: t_final=" << traj.t_final
                << " segments=" << traj.n_segments()
                << " events=" << traj.n_events() << "\n"
                << "wrote " << traj_path << "\n"
                << "wrote " << events_path << "\n";
      return 0;
    });
  });
}

// ---- gradcheck --------------------------------------------------------------------

int cmd_gradcheck(const Options& o) {
  return with_model(o, [&](const auto& m) {
    return guarded("gradcheck", [&] {
      const SimConfig cfg = sim_config(o);
      const double t_end = end_time(o, m);
      const TargetSet targets =
          synth_targets(m, t_end, o.targets, o.noise, o.seed, cfg);
      const VecX p = start_params(m, o.bias, o.seed);
      MethodComparison table =
          compare_methods(m, p, t_end, targets, BlendConfig{}, cfg);
      if (table.saturated) {
        std::cerr << "daeid gradcheck: trajectory saturated at the "
                     "evaluation point\n";
        return 2;
      }
      write_text_atomic(o.out, gradcheck_json(table));
      double worst_fwd_fd = 0.0, worst_fwd_adj = 0.0;
      for (const MethodComparison::Row& row : table.rows) {
        worst_fwd_fd = std::max(worst_fwd_fd, row.rel_fwd_fd);
        worst_fwd_adj = std::max(worst_fwd_adj, row.rel_fwd_adjoint);
      }
      std::cout << "gradcheck: loss=" << table.loss
                << " events=" << table.n_events
                << " max_rel(fwd,fd)=" << worst_fwd_fd
                << " max_rel(fwd,adjoint)=" << worst_fwd_adj << "\n"
                << "wrote " << o.out << "\n";
      return 0;
    });
  });
}

// ---- identify ---------------------------------------------------------------------

IdentifyConfig identify_config(const Options& o) {
  IdentifyConfig cfg;
  cfg.method = method_from_string(o.method);
  cfg.iters = o.iters;
  cfg.lr = o.lr;
  cfg.grad_tol = o.grad_tol;
  cfg.t1 = o.t1;
  cfg.train_blend.beta = o.beta;
  cfg.sim = sim_config(o);
  return cfg;
}

// One identification run; `bias_seed` draws the start point so multi-start
// fans out over starts while the model and data stay pinned to --seed.
template <class M>
IdentificationRun identify_once(const M& m, const Options& o,
                                const TargetSet& targets,
                                std::uint64_t bias_seed,
                                GradientMethod method) {
  const VecX p0 = start_params(m, o.bias, bias_seed);
  IdentifyConfig cfg = identify_config(o);
  cfg.method = method;
  return run_identify(m, p0, targets, cfg);
}

void write_run_outputs(const IdentificationRun& run, const std::string& out) {
  write_text_atomic(out, run_record_json(run));
  write_text_atomic(sidecar(out, "_loss_history.csv"), loss_history_csv(run));
}

std::string describe_run(const IdentificationRun& run) {
  std::ostringstream msg;
  msg << "method=" << to_string(run.method)
      << " stop=" << to_string(run.stop_reason)
      << " best_iter=" << run.best.iter
      << " best_eval_loss=" << run.best.eval_loss;
  return msg.str();
}

// "a..b" or a single "a".
bool parse_seed_range(const std::string& text, std::uint64_t& lo,
                      std::uint64_t& hi) {
  const size_t sep = text.find("..");
  try {
    if (sep == std::string::npos) {
      lo = hi = std::stoull(text);
      return true;
    }
    lo = std::stoull(text.substr(0, sep));
    hi = std::stoull(text.substr(sep + 2));
    return lo <= hi;
  } catch (const std::exception&) {
    return false;
  }
}

int cmd_identify(const Options& o) {
  return with_model(o, [&](const auto& m) {
    return guarded("identify", [&] {
      const SimConfig cfg = sim_config(o);
      const double t_end = end_time(o, m);
      const TargetSet targets =
          synth_targets(m, t_end, o.targets, o.noise, o.seed, cfg);
      const GradientMethod method = method_from_string(o.method);
      const std::string out =
          !o.out_prefix.empty() ? o.out_prefix + "_run.json" : o.out;

      if (o.seeds.empty()) {
        IdentificationRun run = identify_once(m, o, targets, o.seed, method);
        write_run_outputs(run, out);
        std::cout << "identify[seed=" << o.seed << "] " << describe_run(run)
                  << "\n"
                  << "wrote " << out << "\n";
        return 0;
      }

      std::uint64_t lo = 0, hi = 0;
      if (!parse_seed_range(o.seeds, lo, hi)) {
        std::cerr << "daeid identify: bad --seeds range '" << o.seeds
                  << "' (expected a..b)\n";
        return 1;
      }
      const int n_runs = static_cast<int>(hi - lo + 1);
      std::vector<std::string> lines(n_runs);
      std::vector<std::string> failures(n_runs);
      std::vector<std::thread> workers;
      workers.reserve(n_runs);
      for (int i = 0; i < n_runs; ++i) {
        workers.emplace_back([&, i] {
          const std::uint64_t seed_i = lo + static_cast<std::uint64_t>(i);
          try {
            IdentificationRun run =
                identify_once(m, o, targets, seed_i, method);
            const std::string run_out =
                sidecar(out, "_seed" + std::to_string(seed_i) + ".json");
            write_run_outputs(run, run_out);
            lines[i] = "identify[seed=" + std::to_string(seed_i) + "] " +
                       describe_run(run) + "\nwrote " + run_out;
          } catch (const Error& e) {
            failures[i] = e.what();
          }
        });
      }
      for (std::thread& w : workers) w.join();
      int rc = 0;
      for (int i = 0; i < n_runs; ++i) {
        if (!failures[i].empty()) {
          std::cerr << "daeid identify[seed=" << lo + i
                    << "]: " << failures[i] << "\n";
          rc = 2;
        } else {
          std::cout << lines[i] << "\n";
        }
      }
      return rc;
    });
  });
}

// ---- compare ----------------------------------------------------------------------

int cmd_compare(const Options& o) {
  return with_model(o, [&](const auto& m) {
    return guarded("compare", [&] {
      const SimConfig cfg = sim_config(o);
      const double t_end = end_time(o, m);
      const TargetSet targets =
          synth_targets(m, t_end, o.targets, o.noise, o.seed, cfg);
      const std::string out =
          !o.out_prefix.empty() ? o.out_prefix + "_compare.json" : o.out;

      IdentificationRun fwd =
          identify_once(m, o, targets, o.seed, GradientMethod::forward);
      IdentificationRun adj =
          identify_once(m, o, targets, o.seed, GradientMethod::adjoint);

      nlohmann::json j;
      j["forward"] = run_record(fwd);
      j["adjoint"] = run_record(adj);
      write_text_atomic(out, j.dump(2) + "\n");
      write_text_atomic(sidecar(out, "_fwd_history.csv"),
                        loss_history_csv(fwd));
      write_text_atomic(sidecar(out, "_adjoint_history.csv"),
                        loss_history_csv(adj));
      std::cout << "compare[fwd]     " << describe_run(fwd) << "\n"
                << "compare[adjoint] " << describe_run(adj) << "\n"
                << "wrote " << out << "\n";
      return 0;
    });
  });
}

void add_common_flags(CLI::App* cmd, Options& o, bool with_protocol) {
  cmd->add_option("--model", o.model, "Benchmark model (balls or cauer)")
      ->capture_default_str();
  cmd->add_option("--n-balls", o.n_balls, "Ball count for the balls model")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", o.seed,
                  "Seed for initial conditions, data noise, and bias draw")
      ->capture_default_str();
  cmd->add_option("--t1", o.t1, "End time (0 = model horizon)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--rtol", o.rtol, "Integrator relative tolerance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--atol", o.atol, "Integrator absolute tolerance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--nodes", o.nodes, "Stored-node floor per segment")
      ->check(CLI::Range(2, 100000))
      ->capture_default_str();
  if (with_protocol) {
    cmd->add_option("--targets", o.targets, "Number of synthetic observations")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--noise", o.noise,
                    "Gaussian noise std added to synthetic data")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--bias", o.bias,
                    "Log-uniform half-width displacing the true parameters")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "daeid: hybrid DAE simulation, gradient checking, and parameter "
      "identification"};
  app.require_subcommand(1);
  Options o;

  CLI::App* sim = app.add_subcommand(
      "simulate", "Integrate the model and export trajectory + event log");
  add_common_flags(sim, o, /*with_protocol=*/false);
  sim->add_option("--bias", o.bias,
                  "Log-uniform half-width displacing the true parameters")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  auto* sim_out =
      sim->add_option("--out", o.out, "Trajectory CSV path (events JSON "
                                      "sidecar is written alongside)");
  auto* sim_prefix = sim->add_option(
      "--out-prefix", o.out_prefix,
      "Write <prefix>_trajectory.csv and <prefix>_events.json");
  sim_out->excludes(sim_prefix);
  sim_prefix->excludes(sim_out);

  CLI::App* grad = app.add_subcommand(
      "gradcheck",
      "Cross-validate forward, adjoint, and finite-difference gradients");
  add_common_flags(grad, o, /*with_protocol=*/true);
  grad->add_option("--method", o.method,
                   "Accepted for protocol symmetry; the report always "
                   "contains all three routes")
      ->capture_default_str();
  grad->add_option("--out", o.out, "Report JSON path")->required();

  CLI::App* ident = app.add_subcommand(
      "identify", "Fit parameters to synthetic data by Adam descent");
  add_common_flags(ident, o, /*with_protocol=*/true);
  ident->add_option("--method", o.method, "Gradient route: fwd or adjoint")
      ->capture_default_str();
  ident->add_option("--iters", o.iters, "Adam iteration budget")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  ident->add_option("--lr", o.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ident->add_option("--grad-tol", o.grad_tol,
                    "Stop when the gradient norm falls below this (0 = off)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  ident->add_option("--beta", o.beta, "Soft-window sharpness for training")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ident->add_option("--seeds", o.seeds,
                    "Multi-start range a..b; each seed draws its own start "
                    "point on worker threads");
  auto* ident_out =
      ident->add_option("--out", o.out, "Run record JSON path (loss-history "
                                        "CSV sidecar is written alongside)");
  auto* ident_prefix = ident->add_option("--out-prefix", o.out_prefix,
                                         "Write <prefix>_run.json and "
                                         "<prefix>_run_loss_history.csv");
  ident_out->excludes(ident_prefix);
  ident_prefix->excludes(ident_out);

  CLI::App* cmp = app.add_subcommand(
      "compare", "Run both gradient routes on the same identification task");
  add_common_flags(cmp, o, /*with_protocol=*/true);
  cmp->add_option("--iters", o.iters, "Adam iteration budget")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmp->add_option("--lr", o.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmp->add_option("--grad-tol", o.grad_tol,
                  "Stop when the gradient norm falls below this (0 = off)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmp->add_option("--beta", o.beta, "Soft-window sharpness for training")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  auto* cmp_out = cmp->add_option(
      "--out", o.out, "Comparison JSON path (history CSV sidecars are "
                      "written alongside)");
  auto* cmp_prefix = cmp->add_option("--out-prefix", o.out_prefix,
                                     "Write <prefix>_compare.json and "
                                     "history sidecars");
  cmp_out->excludes(cmp_prefix);
  cmp_prefix->excludes(cmp_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (CLI::App* cmd : {sim, ident, cmp}) {
    if (cmd->parsed() && o.out.empty() && o.out_prefix.empty()) {
      std::cerr << "daeid " << cmd->get_name()
                << ": one of --out or --out-prefix is required\n";
      return 1;
    }
  }

  if (sim->parsed()) return cmd_simulate(o);
  if (grad->parsed()) return cmd_gradcheck(o);
  if (ident->parsed()) return cmd_identify(o);
  return cmd_compare(o);
}
