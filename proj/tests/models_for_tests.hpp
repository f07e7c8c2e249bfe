#pragma once

// Small analytic models with closed-form trajectories, shared across the unit
// tests as oracles.

#include <cmath>
#include <span>
#include <vector>

#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/types.hpp"

namespace hytest {

using hybridae::Dims;
using hybridae::ParameterLayout;
using hybridae::VecX;

// Vertical free fall with a restitution bounce:
//   x = (q, v), q' = v, v' = -g, guard q (ground), reset v <- -e v.
// From rest at height q0 the first impact is at tau = sqrt(2 q0 / g) with
// v(tau-) = -g tau.  Parameters p = (g, e).
class DropModel {
 public:
  explicit DropModel(double q0 = 10.0, double v0 = 0.0, double horizon = 3.0)
      : q0_(q0), v0_(v0), horizon_(horizon) {}

  Dims dims() const { return {2, 0, 2, 1, 1}; }
  ParameterLayout layout() const {
    VecX p(2);
    p << 9.81, 0.8;
    return ParameterLayout::all_free(p);
  }
  double horizon() const { return horizon_; }
  VecX x0() const {
    VecX x(2);
    x << q0_, v0_;
    return x;
  }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S> p, std::span<S> out) const {
    out[0] = x[1];
    out[1] = -p[0];
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S&, std::span<const S> x, std::span<const S>,
          std::span<const S>) const {
    return x[0];
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S> p, std::span<S> out) const {
    out[0] = x[0];
    out[1] = -p[1] * x[1];
  }

 private:
  double q0_, v0_, horizon_;
  std::vector<int> targets_{1};
};

// DropModel with the restitution held fixed in the layout; only gravity is
// exposed to the optimizer.  Exercises partial parameter layouts end to end.
class DropModelG : public DropModel {
 public:
  using DropModel::DropModel;

  ParameterLayout layout() const {
    ParameterLayout l;
    l.n_p = 2;
    l.opt_idx = {0};
    l.p_fixed = VecX(2);
    l.p_fixed << 9.81, 0.8;
    return l;
  }
};

// Pure time guard: x' = 0 with x0 = 1, guard cos(t) (crossing at pi/2),
// identity reset.  p = (unused scale).
class TimeGuardModel {
 public:
  explicit TimeGuardModel(double horizon = 2.0) : horizon_(horizon) {}

  Dims dims() const { return {1, 0, 1, 1, 1}; }
  ParameterLayout layout() const {
    return ParameterLayout::all_free(VecX::Ones(1));
  }
  double horizon() const { return horizon_; }
  VecX x0() const { return VecX::Ones(1); }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S> out) const {
    out[0] = S(0.0);
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S& t, std::span<const S>, std::span<const S>,
          std::span<const S>) const {
    using std::cos;
    return cos(t);
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }

 private:
  double horizon_;
  std::vector<int> targets_{0};
};

// Ball in a unit corridor without gravity: x = (q, v), q' = p0 v, v' = 0,
// guard 0: q (floor at 0), guard 1: 1 - q (ceiling), both resets v <- -v.
// Events alternate between the two walls.
class CorridorModel {
 public:
  explicit CorridorModel(double horizon = 3.2) : horizon_(horizon) {}

  Dims dims() const { return {2, 0, 1, 2, 2}; }
  ParameterLayout layout() const {
    return ParameterLayout::all_free(VecX::Ones(1));
  }
  double horizon() const { return horizon_; }
  VecX x0() const {
    VecX x(2);
    x << 0.5, 1.0;
    return x;
  }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S> p, std::span<S> out) const {
    out[0] = p[0] * x[1];
    out[1] = S(0.0);
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
    out[1] = x[1];
  }
  template <class S>
  S guard(int e, const S&, std::span<const S> x, std::span<const S>,
          std::span<const S>) const {
    return e == 0 ? x[0] : 1.0 - x[0];
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
    out[1] = -x[1];
  }

 private:
  double horizon_;
  std::vector<int> targets_{1};
};

// Sawtooth relaxation: x' = p0, guard 1 - x, reset x <- 0.  Fires every
// 1/p0 time units forever; used to exercise segment-capacity saturation.
class SawtoothModel {
 public:
  explicit SawtoothModel(double horizon = 100.0) : horizon_(horizon) {}

  Dims dims() const { return {1, 0, 1, 1, 1}; }
  ParameterLayout layout() const {
    return ParameterLayout::all_free(VecX::Ones(1));
  }
  double horizon() const { return horizon_; }
  VecX x0() const { return VecX::Zero(1); }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S>, std::span<const S>,
         std::span<const S> p, std::span<S> out) const {
    out[0] = p[0];
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S&, std::span<const S> x, std::span<const S>,
          std::span<const S>) const {
    return 1.0 - x[0];
  }
  template <class S>
  void reset(int, const S&, std::span<const S>, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = S(0.0);
  }

 private:
  double horizon_;
  std::vector<int> targets_{0};
};

// Guard with a parameter-scaled slope, phi = p0 (root - t): crossing at
// t = root with d(phi)/dt = -p0.  With p0 below the transversality tolerance
// the crossing is still locatable but must be flagged as grazing.
class ScaledRampModel {
 public:
  explicit ScaledRampModel(double p0, double horizon = 2.0, double root = 1.0)
      : p0_(p0), horizon_(horizon), root_(root) {}

  Dims dims() const { return {1, 0, 1, 1, 1}; }
  ParameterLayout layout() const {
    VecX p(1);
    p << p0_;
    return ParameterLayout::all_free(p);
  }
  double horizon() const { return horizon_; }
  VecX x0() const { return VecX::Ones(1); }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S> out) const {
    out[0] = S(0.0);
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S& t, std::span<const S>, std::span<const S>,
          std::span<const S> p) const {
    return p[0] * (root_ - t);
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }

 private:
  double p0_, horizon_, root_;
  std::vector<int> targets_{0};
};

// Scalar DAE with a cubic algebraic equation and no events:
//   x' = p1 (z - x),  0 = z^3 + z - x - p0,  y = z.
// At x = 2, p0 = 0 the consistent root is z = 1 with g_z = 4, so
// dz/dx = dz/dp0 = 1/4.
class CubicDaeModel {
 public:
  Dims dims() const { return {1, 1, 2, 1, 0}; }
  ParameterLayout layout() const {
    VecX p(2);
    p << 0.0, 1.0;
    return ParameterLayout::all_free(p);
  }
  double horizon() const { return 1.0; }
  VecX x0() const { return 2.0 * VecX::Ones(1); }
  // chord iterations converge locally; the guess sits near the t = 0 root
  VecX z0_guess() const { return 0.8 * VecX::Ones(1); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S> x, std::span<const S> z,
         std::span<const S> p, std::span<S> out) const {
    out[0] = p[1] * (z[0] - x[0]);
  }
  template <class S>
  void g(const S&, std::span<const S> x, std::span<const S> z,
         std::span<const S> p, std::span<S> out) const {
    out[0] = z[0] * z[0] * z[0] + z[0] - x[0] - p[0];
  }
  template <class S>
  void h(const S&, std::span<const S>, std::span<const S> z,
         std::span<const S>, std::span<S> out) const {
    out[0] = z[0];
  }
  template <class S>
  S guard(int, const S&, std::span<const S>, std::span<const S>,
          std::span<const S>) const {
    return S(1.0);
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }

 private:
  std::vector<int> targets_{};
};

// Algebraic equation with identically singular g_z (z absent from g).
class SingularDaeModel {
 public:
  Dims dims() const { return {1, 1, 1, 1, 0}; }
  ParameterLayout layout() const {
    return ParameterLayout::all_free(VecX::Ones(1));
  }
  double horizon() const { return 1.0; }
  VecX x0() const { return VecX::Ones(1); }
  VecX z0_guess() const { return VecX::Zero(1); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S> out) const {
    out[0] = S(0.0);
  }
  template <class S>
  void g(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];  // no z dependence: g_z = 0
  }
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S&, std::span<const S>, std::span<const S>,
          std::span<const S>) const {
    return S(1.0);
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }

 private:
  std::vector<int> targets_{};
};

// Scalar exponential growth x' = p0 x, x(0) = 1, no events.  The parameter
// sensitivity is S(t) = dx/dp0 = t exp(p0 t).
class ExpGrowthModel {
 public:
  explicit ExpGrowthModel(double horizon = 1.0) : horizon_(horizon) {}

  Dims dims() const { return {1, 0, 1, 1, 0}; }
  ParameterLayout layout() const {
    VecX p(1);
    p << 0.7;
    return ParameterLayout::all_free(p);
  }
  double horizon() const { return horizon_; }
  VecX x0() const { return VecX::Ones(1); }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S> p, std::span<S> out) const {
    out[0] = p[0] * x[0];
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S&, std::span<const S>, std::span<const S>,
          std::span<const S>) const {
    return S(1.0);
  }
  template <class S>
  void reset(int, const S&, std::span<const S> x, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }

 private:
  double horizon_;
  std::vector<int> targets_{};
};

// Linear decay with a relaunch: x' = -p0, x(0) = 1, guard x, reset x <- 1.
// Events at tau_k = k / p0; every segment replays the same ramp.  The
// closed-form loss against any targets is differentiable in p0 between event
// count changes, giving an end-to-end analytic check for gradient code.
class RelaunchModel {
 public:
  explicit RelaunchModel(double horizon = 0.75) : horizon_(horizon) {}

  Dims dims() const { return {1, 0, 1, 1, 1}; }
  ParameterLayout layout() const {
    VecX p(1);
    p << 2.0;
    return ParameterLayout::all_free(p);
  }
  double horizon() const { return horizon_; }
  VecX x0() const { return VecX::Ones(1); }
  VecX z0_guess() const { return VecX(); }
  const std::vector<int>& reset_targets(int) const { return targets_; }

  template <class S>
  void f(const S&, std::span<const S>, std::span<const S>,
         std::span<const S> p, std::span<S> out) const {
    out[0] = -p[0];
  }
  template <class S>
  void g(const S&, std::span<const S>, std::span<const S>, std::span<const S>,
         std::span<S>) const {}
  template <class S>
  void h(const S&, std::span<const S> x, std::span<const S>,
         std::span<const S>, std::span<S> out) const {
    out[0] = x[0];
  }
  template <class S>
  S guard(int, const S&, std::span<const S> x, std::span<const S>,
          std::span<const S>) const {
    return x[0];
  }
  template <class S>
  void reset(int, const S&, std::span<const S>, std::span<const S>,
             std::span<const S>, std::span<S> out) const {
    out[0] = S(1.0);
  }

 private:
  double horizon_;
  std::vector<int> targets_{0};
};

}  // namespace hytest
