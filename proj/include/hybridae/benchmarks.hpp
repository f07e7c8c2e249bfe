#pragma once

// Benchmark factories and synthetic data generation.

#include <utility>

#include "hybridae/models/balls.hpp"
#include "hybridae/models/cauer.hpp"
#include "hybridae/rng.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/target.hpp"

namespace hybridae {

inline CauerLadder make_cauer() { return CauerLadder{}; }

inline BouncingBalls make_bouncing_balls(int n_balls, std::uint64_t seed,
                                         double horizon = 4.0) {
  return BouncingBalls(n_balls, seed, horizon);
}

// Uniform observation grid t_i = i * T / n, i = 1..n (end-inclusive, start
// excluded so every target has history to interpolate).
inline VecX uniform_target_times(double t_end, int n_obs) {
  if (n_obs < 1) throw InvalidArgument("uniform_target_times: n_obs < 1");
  VecX t(n_obs);
  for (int i = 0; i < n_obs; ++i) t(i) = (i + 1) * t_end / n_obs;
  return t;
}

// Simulate at the supplied (truth) parameters and sample the outputs with the
// hard selection rule; optional i.i.d. Gaussian noise of the given standard
// deviation, seeded for reproducibility.
template <HybridModel M>
TargetSet generate_synthetic_data(const M& m, const VecX& p_truth, int n_obs,
                                  double noise_std = 0.0,
                                  std::uint64_t noise_seed = 0,
                                  const SimConfig& cfg = {}) {
  TargetSet set;
  set.times = uniform_target_times(m.horizon(), n_obs);
  EventSplitTrajectory traj = simulate(m, p_truth, m.horizon(), cfg);
  if (traj.saturated) {
    throw SetupError("generate_synthetic_data: truth trajectory saturated");
  }
  BlendConfig hard;  // defaults to hard selection
  set.data = evaluate_predictions(m, traj, set.times, hard, cfg.algebraic);
  if (noise_std > 0.0) {
    SplitMix64 rng(noise_seed);
    for (int i = 0; i < set.data.cols(); ++i) {
      for (int r = 0; r < set.data.rows(); ++r) {
        set.data(r, i) += noise_std * rng.normal();
      }
    }
  }
  return set;
}

}  // namespace hybridae
