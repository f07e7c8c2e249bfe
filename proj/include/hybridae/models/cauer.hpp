#pragma once

// Seventh-order doubly-terminated LC ladder filter with an algebraic resistor
// network and a threshold/reset nonlinearity.
//
// Five shunt capacitors (node voltages v1..v5), two series inductors
// (currents iL1: n1->n2, iL2: n3->n4), series resistors n2->n3 and n4->n5, a
// bridge resistor n1->n3, unit source and load terminations, driven by a unit
// step at t=0 from a zero initial state.  The five branch currents through
// the resistive elements are the algebraic unknowns.  When v3 rises through
// 0.5 V the third capacitor is discharged to 0 V; the DC level of v3 sits
// above the threshold, so the reset re-fires throughout the horizon.
//
// States x = (v1..v5, iL1, iL2), algebraic z = (i_src, i_23, i_45, i_load,
// i_bridge), parameters p = (C1..C5, L1, L2), outputs y = (v5, v3).

#include <span>
#include <vector>

#include "hybridae/model.hpp"
#include "hybridae/params.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

class CauerLadder {
 public:
  CauerLadder() {
    p_truth_.resize(7);
    p_truth_ << 1.0, 0.8, 1.2, 0.9, 1.1, 0.7, 1.3;
    reset_targets_ = {2};
  }

  Dims dims() const { return {7, 5, 7, 2, 1}; }
  ParameterLayout layout() const { return ParameterLayout::all_free(p_truth_); }
  double horizon() const { return 20.0; }
  VecX x0() const { return VecX::Zero(7); }
  VecX z0_guess() const { return VecX::Zero(5); }
  const VecX& truth_params() const { return p_truth_; }
  const std::vector<int>& reset_targets(int) const { return reset_targets_; }

  template <class S>
  void f(const S& /*t*/, std::span<const S> x, std::span<const S> z,
         std::span<const S> p, std::span<S> out) const {
    out[0] = (z[0] - x[5] - z[4]) / p[0];
    out[1] = (x[5] - z[1]) / p[1];
    out[2] = (z[1] + z[4] - x[6]) / p[2];
    out[3] = (x[6] - z[2]) / p[3];
    out[4] = (z[2] - z[3]) / p[4];
    out[5] = (x[0] - x[1]) / p[5];
    out[6] = (x[2] - x[3]) / p[6];
  }

  // Branch laws, unit resistances, unit step drive.
  template <class S>
  void g(const S& /*t*/, std::span<const S> x, std::span<const S> z,
         std::span<const S> /*p*/, std::span<S> out) const {
    out[0] = z[0] - (1.0 - x[0]);
    out[1] = z[1] - (x[1] - x[2]);
    out[2] = z[2] - (x[3] - x[4]);
    out[3] = z[3] - x[4];
    out[4] = z[4] - (x[0] - x[2]);
  }

  template <class S>
  void h(const S& /*t*/, std::span<const S> x, std::span<const S> /*z*/,
         std::span<const S> /*p*/, std::span<S> out) const {
    out[0] = x[4];
    out[1] = x[2];
  }

  template <class S>
  S guard(int /*e*/, const S& /*t*/, std::span<const S> x,
          std::span<const S> /*z*/, std::span<const S> /*p*/) const {
    return 0.5 - x[2];
  }

  template <class S>
  void reset(int /*e*/, const S& /*t*/, std::span<const S> x,
             std::span<const S> /*z*/, std::span<const S> /*p*/,
             std::span<S> out) const {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
    out[2] = S(0.0);
  }

 private:
  VecX p_truth_;
  std::vector<int> reset_targets_;
};

}  // namespace hybridae
