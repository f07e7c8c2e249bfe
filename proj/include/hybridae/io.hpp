#pragma once

// File formats: trajectory/prediction/loss-history CSV, event logs and
// gradient/run-record JSON.  CSV numbers are printed with 17 significant
// digits and JSON numbers with the serializer's shortest exact form, so both
// round-trip to the same doubles.  All writes go through a temp-then-rename
// so an interrupted process never leaves a partial file at the declared path.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "hybridae/adjoint.hpp"
#include "hybridae/errors.hpp"
#include "hybridae/model.hpp"
#include "hybridae/optimize.hpp"
#include "hybridae/target.hpp"
#include "hybridae/trajectory.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Writes content to path via a sibling temp file and an atomic rename,
// creating parent directories as needed.
inline void write_text_atomic(const std::string& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw SetupError("cannot open '" + tmp.string() + "' for writing");
    }
    out << content;
    out.flush();
    if (!out) {
      throw SetupError("short write to '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw SetupError("cannot move temp file onto '" + path + "'");
  }
}

// ---- CSV ------------------------------------------------------------------------

// Dense node export with header t,x0..,z0..,y0.. ; segment boundaries put
// two rows at the event time, the pre-event values first and the post-event
// values next, because consecutive segments share the boundary instant.
template <HybridModel M>
std::string trajectory_csv(const M& m, const EventSplitTrajectory& traj) {
  const Dims dims = m.dims();
  std::ostringstream out;
  out << "t";
  for (int i = 0; i < dims.n_x; ++i) out << ",x" << i;
  for (int i = 0; i < dims.n_z; ++i) out << ",z" << i;
  for (int i = 0; i < dims.n_y; ++i) out << ",y" << i;
  out << "\n";
  for (const SegmentBlock& seg : traj.segments) {
    for (int j = 0; j < seg.n_nodes(); ++j) {
      const double t = seg.node_time(j);
      const VecX x = seg.x.col(j);
      const VecX z = seg.z.col(j);
      const VecX y = eval_h(m, t, x, z, traj.p);
      out << format_double(t);
      for (int i = 0; i < dims.n_x; ++i) out << ',' << format_double(x(i));
      for (int i = 0; i < dims.n_z; ++i) out << ',' << format_double(z(i));
      for (int i = 0; i < dims.n_y; ++i) out << ',' << format_double(y(i));
      out << "\n";
    }
  }
  return out.str();
}

// Header t,yhat0..,ydata0.. ; one row per target.
inline std::string predictions_csv(const VecX& times, const MatX& yhat,
                                   const MatX& ydata) {
  if (yhat.cols() != times.size() || ydata.cols() != times.size() ||
      yhat.rows() != ydata.rows()) {
    throw InvalidArgument("predictions_csv: shape mismatch");
  }
  std::ostringstream out;
  out << "t";
  for (int i = 0; i < yhat.rows(); ++i) out << ",yhat" << i;
  for (int i = 0; i < ydata.rows(); ++i) out << ",ydata" << i;
  out << "\n";
  for (int k = 0; k < times.size(); ++k) {
    out << format_double(times(k));
    for (int i = 0; i < yhat.rows(); ++i) {
      out << ',' << format_double(yhat(i, k));
    }
    for (int i = 0; i < ydata.rows(); ++i) {
      out << ',' << format_double(ydata(i, k));
    }
    out << "\n";
  }
  return out.str();
}

// Header iter,train_loss,eval_loss,grad_norm,wall_ms ; one row per iterate.
inline std::string loss_history_csv(const IdentificationRun& run) {
  std::ostringstream out;
  out << "iter,train_loss,eval_loss,grad_norm,wall_ms\n";
  for (size_t i = 0; i < run.iterates.size(); ++i) {
    const IterateLog& row = run.iterates[i];
    out << i << ',' << format_double(row.train_loss) << ','
        << format_double(row.eval_loss) << ',' << format_double(row.grad_norm)
        << ',' << format_double(row.wall_ms) << "\n";
  }
  return out.str();
}

// Minimal CSV reader for numeric tables with one header line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;  // column-major

  int n_rows() const {
    return columns.empty() ? 0 : static_cast<int>(columns[0].size());
  }
  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    throw InvalidArgument("csv column '" + name + "' not found");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw SetupError("cannot open '" + path + "' for reading");
  }
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) {
    throw InvalidArgument("csv file '" + path + "' is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  table.columns.resize(table.header.size());
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ls(line);
    size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      if (col >= table.columns.size()) {
        throw InvalidArgument("csv row " + std::to_string(row) +
                              " has extra cells");
      }
      table.columns[col].push_back(std::strtod(cell.c_str(), nullptr));
      ++col;
    }
    if (col != table.columns.size()) {
      throw InvalidArgument("csv row " + std::to_string(row) +
                            " has missing cells");
    }
    ++row;
  }
  return table;
}

// ---- JSON -----------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec_to_json(const VecX& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace detail

// Event log: [{tau, event_index, x_minus, x_plus}].
inline std::string events_json(const EventSplitTrajectory& traj) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EventBlock& ev : traj.events) {
    arr.push_back({{"tau", ev.tau},
                   {"event_index", ev.event_index},
                   {"x_minus", detail::vec_to_json(ev.x_minus)},
                   {"x_plus", detail::vec_to_json(ev.x_plus)}});
  }
  return arr.dump(2) + "\n";
}

// Adjoint gradient report: {loss, grad, per_event, feasibility_max}.
inline std::string adjoint_report_json(const AdjointGradient& rep) {
  nlohmann::json j;
  j["loss"] = rep.loss;
  j["grad"] = detail::vec_to_json(rep.grad);
  j["grad_valid"] = rep.grad_valid;
  nlohmann::json events = nlohmann::json::array();
  for (const AdjointEventDiag& ed : rep.event_diag) {
    events.push_back({{"tau", ed.tau},
                      {"c", ed.c},
                      {"denominator", ed.denominator},
                      {"feasibility", ed.residual}});
  }
  j["per_event"] = events;
  j["feasibility_max"] =
      std::max(rep.max_step_residual, rep.max_event_residual);
  j["stationarity_residual"] = rep.stationarity_residual;
  return j.dump(2) + "\n";
}

// Three-route gradient check: {loss, grad_forward, grad_adjoint, grad_fd,
// fd_stable, rel_*}.
inline std::string gradcheck_json(const MethodComparison& table) {
  nlohmann::json j;
  j["loss"] = table.loss;
  j["saturated"] = table.saturated;
  j["n_events"] = table.n_events;
  nlohmann::json fwd = nlohmann::json::array();
  nlohmann::json adj = nlohmann::json::array();
  nlohmann::json fd = nlohmann::json::array();
  nlohmann::json stable = nlohmann::json::array();
  nlohmann::json rel_fa = nlohmann::json::array();
  nlohmann::json rel_ffd = nlohmann::json::array();
  nlohmann::json rel_afd = nlohmann::json::array();
  for (const MethodComparison::Row& row : table.rows) {
    fwd.push_back(row.fwd);
    adj.push_back(row.adjoint);
    fd.push_back(row.fd);
    stable.push_back(row.fd_stable);
    rel_fa.push_back(row.rel_fwd_adjoint);
    rel_ffd.push_back(row.rel_fwd_fd);
    rel_afd.push_back(row.rel_adjoint_fd);
  }
  j["grad_forward"] = fwd;
  j["grad_adjoint"] = adj;
  j["grad_fd"] = fd;
  j["fd_stable"] = stable;
  j["rel_forward_adjoint"] = rel_fa;
  j["rel_forward_fd"] = rel_ffd;
  j["rel_adjoint_fd"] = rel_afd;
  return j.dump(2) + "\n";
}

// Run record object: {config, iterates, best, stop_reason}.
inline nlohmann::json run_record(const IdentificationRun& run) {
  nlohmann::json j;
  j["config"] = {{"method", to_string(run.method)},
                 {"iters", run.iters_requested},
                 {"lr", run.lr},
                 {"grad_tol", run.grad_tol},
                 {"t1", run.t1},
                 {"beta", run.train_beta}};
  nlohmann::json iterates = nlohmann::json::array();
  for (size_t i = 0; i < run.iterates.size(); ++i) {
    const IterateLog& row = run.iterates[i];
    iterates.push_back({{"iter", i},
                        {"p_opt", detail::vec_to_json(row.p_opt)},
                        {"train_loss", row.train_loss},
                        {"eval_loss", row.eval_loss},
                        {"grad_norm", row.grad_norm},
                        {"wall_ms", row.wall_ms}});
  }
  j["iterates"] = iterates;
  j["best"] = {{"p_opt", detail::vec_to_json(run.best.p_opt)},
               {"eval_loss", run.best.eval_loss},
               {"iter", run.best.iter}};
  j["stop_reason"] = to_string(run.stop_reason);
  return j;
}

inline std::string run_record_json(const IdentificationRun& run) {
  return run_record(run).dump(2) + "\n";
}

}  // namespace hybridae
