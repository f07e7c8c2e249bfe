#pragma once

// N planar balls under gravity in a box, with restitution impacts against the
// box boundary and elastic pairwise collisions.
//
// The box spans [-10, 10] horizontally and [0, 20] vertically (half-width
// 10); all balls share radius 0.5.  Per ball the state is (qx, qy, vx, vy).
// Event clauses, in order: for each ball the right wall, left wall, ceiling,
// and ground clearances, then one clause per unordered pair (i<j,
// lexicographic) for contact.  Boundary impacts reflect the normal velocity
// with restitution e_b (walls, ceiling) or e_g (ground); pair contacts
// exchange the normal velocity components of the two equal-mass balls
// (elastic).  Parameters p = (g_c, e_g, e_b); outputs are the full state.

#include <span>
#include <string>
#include <vector>

#include "hybridae/errors.hpp"
#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/rng.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

class BouncingBalls {
 public:
  static constexpr double kHalfWidth = 10.0;
  static constexpr double kHeight = 20.0;
  static constexpr double kRadius = 0.5;

  BouncingBalls(int n_balls, std::uint64_t seed, double horizon = 4.0)
      : n_(n_balls), horizon_(horizon) {
    if (n_ < 1) throw SetupError("BouncingBalls: need at least one ball");
    p_truth_.resize(3);
    p_truth_ << 9.81, 0.85, 0.95;
    seed_initial_state(seed);
    build_reset_targets();
  }

  // Explicit initial state (for controlled experiments); length must be 4N.
  void set_initial_state(const VecX& x0) {
    if (x0.size() != 4 * n_) {
      throw SetupError("BouncingBalls: initial state length mismatch");
    }
    x0_ = x0;
  }

  int n_balls() const { return n_; }
  Dims dims() const {
    return {4 * n_, 0, 3, 4 * n_, 4 * n_ + n_ * (n_ - 1) / 2};
  }
  ParameterLayout layout() const { return ParameterLayout::all_free(p_truth_); }
  double horizon() const { return horizon_; }
  VecX x0() const { return x0_; }
  VecX z0_guess() const { return VecX(); }
  const VecX& truth_params() const { return p_truth_; }
  const std::vector<int>& reset_targets(int e) const {
    return reset_targets_[e];
  }

  template <class S>
  void f(const S& /*t*/, std::span<const S> x, std::span<const S> /*z*/,
         std::span<const S> p, std::span<S> out) const {
    for (int i = 0; i < n_; ++i) {
      out[4 * i + 0] = x[4 * i + 2];
      out[4 * i + 1] = x[4 * i + 3];
      out[4 * i + 2] = S(0.0);
      out[4 * i + 3] = -p[0];
    }
  }

  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}

  template <class S>
  void h(const S& /*t*/, std::span<const S> x, std::span<const S> /*z*/,
         std::span<const S> /*p*/, std::span<S> out) const {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
  }

  template <class S>
  S guard(int e, const S& /*t*/, std::span<const S> x, std::span<const S> /*z*/,
          std::span<const S> /*p*/) const {
    if (e < 4 * n_) {
      const int i = e / 4;
      const int side = e % 4;
      switch (side) {
        case 0: return (kHalfWidth - kRadius) - x[4 * i + 0];   // right wall
        case 1: return x[4 * i + 0] + (kHalfWidth - kRadius);   // left wall
        case 2: return (kHeight - kRadius) - x[4 * i + 1];      // ceiling
        default: return x[4 * i + 1] - kRadius;                 // ground
      }
    }
    using std::sqrt;
    const auto [i, j] = pair_of(e - 4 * n_);
    const S dx = x[4 * i + 0] - x[4 * j + 0];
    const S dy = x[4 * i + 1] - x[4 * j + 1];
    return sqrt(dx * dx + dy * dy) - 2.0 * kRadius;
  }

  template <class S>
  void reset(int e, const S& /*t*/, std::span<const S> x,
             std::span<const S> /*z*/, std::span<const S> p,
             std::span<S> out) const {
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k];
    if (e < 4 * n_) {
      const int i = e / 4;
      const int side = e % 4;
      if (side == 0 || side == 1) {
        out[4 * i + 2] = -p[2] * x[4 * i + 2];  // walls: e_b
      } else if (side == 2) {
        out[4 * i + 3] = -p[2] * x[4 * i + 3];  // ceiling: e_b
      } else {
        out[4 * i + 3] = -p[1] * x[4 * i + 3];  // ground: e_g
      }
      return;
    }
    // Elastic equal-mass exchange of the normal velocity components.
    using std::sqrt;
    const auto [i, j] = pair_of(e - 4 * n_);
    const S dx = x[4 * j + 0] - x[4 * i + 0];
    const S dy = x[4 * j + 1] - x[4 * i + 1];
    const S dist = sqrt(dx * dx + dy * dy);
    const S nx = dx / dist, ny = dy / dist;
    const S rel = (x[4 * j + 2] - x[4 * i + 2]) * nx +
                  (x[4 * j + 3] - x[4 * i + 3]) * ny;
    out[4 * i + 2] = x[4 * i + 2] + rel * nx;
    out[4 * i + 3] = x[4 * i + 3] + rel * ny;
    out[4 * j + 2] = x[4 * j + 2] - rel * nx;
    out[4 * j + 3] = x[4 * j + 3] - rel * ny;
  }

 private:
  std::pair<int, int> pair_of(int idx) const {
    for (int i = 0; i < n_; ++i) {
      const int row = n_ - 1 - i;
      if (idx < row) return {i, i + 1 + idx};
      idx -= row;
    }
    throw InvalidArgument("BouncingBalls: pair index out of range");
  }

  void seed_initial_state(std::uint64_t seed) {
    SplitMix64 rng(seed * 0x9e3779b97f4a7c15ULL + 0x5851f42d4c957f2dULL);
    x0_ = VecX::Zero(4 * n_);
    const double margin = 2.0 * kRadius + 1.5;
    for (int i = 0; i < n_; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 512 && !placed; ++attempt) {
        const double qx = rng.uniform(-kHalfWidth + 2.0, kHalfWidth - 2.0);
        const double qy = rng.uniform(4.0, kHeight - 4.0);
        placed = true;
        for (int j = 0; j < i; ++j) {
          const double ddx = qx - x0_(4 * j + 0);
          const double ddy = qy - x0_(4 * j + 1);
          if (ddx * ddx + ddy * ddy < margin * margin) {
            placed = false;
            break;
          }
        }
        if (placed) {
          x0_(4 * i + 0) = qx;
          x0_(4 * i + 1) = qy;
        }
      }
      if (!placed) {
        throw SetupError("BouncingBalls: could not place non-overlapping balls");
      }
      x0_(4 * i + 2) = rng.uniform(-4.0, 4.0);
      x0_(4 * i + 3) = rng.uniform(-2.0, 2.0);
    }
  }

  void build_reset_targets() {
    const int n_e = 4 * n_ + n_ * (n_ - 1) / 2;
    reset_targets_.resize(n_e);
    for (int e = 0; e < 4 * n_; ++e) {
      const int i = e / 4;
      const int side = e % 4;
      reset_targets_[e] = {side <= 1 ? 4 * i + 2 : 4 * i + 3};
    }
    for (int e = 4 * n_; e < n_e; ++e) {
      const auto [i, j] = pair_of(e - 4 * n_);
      reset_targets_[e] = {4 * i + 2, 4 * i + 3, 4 * j + 2, 4 * j + 3};
    }
  }

  int n_;
  double horizon_;
  VecX p_truth_;
  VecX x0_;
  std::vector<std::vector<int>> reset_targets_;
};

}  // namespace hybridae
