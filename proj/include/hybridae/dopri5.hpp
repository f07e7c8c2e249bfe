#pragma once

// Dormand-Prince 5(4) explicit Runge-Kutta stepper with error control and a
// 4th-order continuous extension used for event localization and node
// resampling.  FSAL: the last stage derivative is reused as the first stage
// of the next step.

#include <algorithm>
#include <cmath>

#include "hybridae/errors.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

// One accepted step together with its dense-output coefficients.
// Evaluation at t in [t0, t0+h] uses the nested Horner form of the classic
// DOPRI5 continuous extension.
struct DenseStep {
  double t0 = 0.0, h = 0.0;
  VecX c1, c2, c3, c4, c5;

  double t_end() const { return t0 + h; }

  void eval_into(double t, VecX& out) const {
    const double th = (t - t0) / h;
    const double th1 = 1.0 - th;
    out = c1 + th * (c2 + th1 * (c3 + th * (c4 + th1 * c5)));
  }
  VecX eval(double t) const {
    VecX out;
    eval_into(t, out);
    return out;
  }
};

struct StepControl {
  double rtol = 1e-8;
  double atol = 1e-8;
  double h_min = 1e-12;
  double h_max = 0.0;   // 0 = unbounded
  double safety = 0.9;
  double fac_min = 0.2;
  double fac_max = 5.0;
  int err_dim = -1;     // components entering the error norm (-1 = all)
};

// Adaptive stepper over y' = rhs(t, y).  rhs signature:
//   void rhs(double t, const VecX& y, VecX& dy)
template <class Rhs>
class Dopri5Stepper {
 public:
  Dopri5Stepper(Rhs rhs, int n, StepControl ctrl)
      : rhs_(std::forward<Rhs>(rhs)), n_(n), ctrl_(ctrl) {
    for (VecX* v : {&k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &ynew_, &yerr_})
      v->resize(n);
  }

  void init(double t0, const VecX& y0, double h0) {
    t_ = t0;
    y_ = y0;
    h_ = h0;
    k1_.resize(n_);
    rhs_(t_, y_, k1_);
  }

  double t() const { return t_; }
  const VecX& y() const { return y_; }
  const VecX& ydot() const { return k1_; }

  // Advances by one accepted step without passing t_end; returns the dense
  // record of the step taken.  Requires t() < t_end.
  DenseStep step(double t_end) {
    while (true) {
      double h = h_;
      if (ctrl_.h_max > 0.0) h = std::min(h, ctrl_.h_max);
      h = std::max(h, ctrl_.h_min);
      bool last = false;
      if (t_ + h >= t_end) {
        h = t_end - t_;
        last = true;
      }

      const bool ok = try_stages(h);
      double err = ok ? error_norm(h) : 2.0;  // non-finite counts as rejection

      if (err <= 1.0) {
        DenseStep ds = make_dense(h);
        y_.swap(ynew_);
        k1_.swap(k7_);
        t_ = last ? t_end : t_ + h;
        const double fac = err > 0.0
                               ? std::clamp(ctrl_.safety * std::pow(err, -0.2),
                                            ctrl_.fac_min, ctrl_.fac_max)
                               : ctrl_.fac_max;
        h_ = h * fac;
        return ds;
      }

      const double fac =
          std::isfinite(err)
              ? std::clamp(ctrl_.safety * std::pow(err, -0.2), ctrl_.fac_min, 1.0)
              : ctrl_.fac_min;
      h_ = h * fac;
      if (h_ < ctrl_.h_min) {
        throw StiffnessFailure("dopri5: step size below h_min");
      }
    }
  }

 private:
  bool try_stages(double h) {
    // Butcher tableau of DOPRI5.
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                            a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113,
                            b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5,
                            c5 = 8.0 / 9;

    ytmp_ = y_ + h * (a21 * k1_);
    rhs_(t_ + c2 * h, ytmp_, k2_);
    ytmp_ = y_ + h * (a31 * k1_ + a32 * k2_);
    rhs_(t_ + c3 * h, ytmp_, k3_);
    ytmp_ = y_ + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
    rhs_(t_ + c4 * h, ytmp_, k4_);
    ytmp_ = y_ + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
    rhs_(t_ + c5 * h, ytmp_, k5_);
    ytmp_ = y_ + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
    rhs_(t_ + h, ytmp_, k6_);
    ynew_ = y_ + h * (b1 * k1_ + b3 * k3_ + b4 * k4_ + b5 * k5_ + b6 * k6_);
    rhs_(t_ + h, ynew_, k7_);
    return ynew_.allFinite() && k7_.allFinite();
  }

  double error_norm(double h) const {
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                            e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;
    const int m = ctrl_.err_dim > 0 ? std::min(ctrl_.err_dim, n_) : n_;
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      const double e = h * (e1 * k1_(i) + e3 * k3_(i) + e4 * k4_(i) +
                            e5 * k5_(i) + e6 * k6_(i) + e7 * k7_(i));
      const double sc =
          ctrl_.atol + ctrl_.rtol * std::max(std::abs(y_(i)), std::abs(ynew_(i)));
      acc += (e / sc) * (e / sc);
    }
    const double norm = std::sqrt(acc / m);
    return std::isfinite(norm) ? norm : 2.0;
  }

  DenseStep make_dense(double h) const {
    static constexpr double d1 = -12715105075.0 / 11282082432.0;
    static constexpr double d3 = 87487479700.0 / 32700410799.0;
    static constexpr double d4 = -10690763975.0 / 1880347072.0;
    static constexpr double d5 = 701980252875.0 / 199316789632.0;
    static constexpr double d6 = -1453857185.0 / 822651844.0;
    static constexpr double d7 = 69997945.0 / 29380423.0;

    DenseStep ds;
    ds.t0 = t_;
    ds.h = h;
    ds.c1 = y_;
    ds.c2 = ynew_ - y_;
    ds.c3 = h * k1_ - ds.c2;
    ds.c4 = ds.c2 - h * k7_ - ds.c3;
    ds.c5 = h * (d1 * k1_ + d3 * k3_ + d4 * k4_ + d5 * k5_ + d6 * k6_ + d7 * k7_);
    return ds;
  }

  Rhs rhs_;
  int n_;
  StepControl ctrl_;
  double t_ = 0.0, h_ = 0.0;
  VecX y_, k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, ynew_, yerr_;
};

}  // namespace hybridae
