#pragma once

// Problem dimensions and the split between optimized and fixed parameters.

#include <algorithm>
#include <set>
#include <vector>

#include "hybridae/errors.hpp"
#include "hybridae/types.hpp"

namespace hybridae {

struct Dims {
  int n_x = 0;  // differential states
  int n_z = 0;  // algebraic variables
  int n_p = 0;  // parameters (full vector)
  int n_y = 0;  // outputs
  int n_e = 0;  // event clauses

  int n_w() const { return n_x + n_z; }

  void validate() const {
    if (n_x < 1 || n_z < 0 || n_p < 0 || n_y < 1 || n_e < 0) {
      throw InvalidArgument("Dims: n_x,n_y must be >=1 and n_z,n_p,n_e >=0");
    }
  }
};

// Which entries of the full parameter vector are exposed to the optimizer.
// Fixed entries keep their values from `p_fixed`.
struct ParameterLayout {
  int n_p = 0;
  std::vector<int> opt_idx;  // strictly increasing positions of free entries
  VecX p_fixed;              // full-length template, fixed entries read here

  int n_opt() const { return static_cast<int>(opt_idx.size()); }

  void validate() const {
    if (p_fixed.size() != n_p) {
      throw InvalidArgument("ParameterLayout: p_fixed length != n_p");
    }
    std::set<int> seen;
    for (int i : opt_idx) {
      if (i < 0 || i >= n_p) {
        throw InvalidArgument("ParameterLayout: opt index out of range");
      }
      if (!seen.insert(i).second) {
        throw InvalidArgument("ParameterLayout: duplicate opt index");
      }
    }
  }

  static ParameterLayout all_free(const VecX& p) {
    ParameterLayout l;
    l.n_p = static_cast<int>(p.size());
    l.opt_idx.resize(p.size());
    for (int i = 0; i < l.n_p; ++i) l.opt_idx[i] = i;
    l.p_fixed = p;
    return l;
  }
};

// Scatters the optimizer vector into the full parameter vector.
inline VecX assemble_full_params(const ParameterLayout& layout,
                                 const VecX& p_opt) {
  layout.validate();
  if (p_opt.size() != layout.n_opt()) {
    throw InvalidArgument("assemble_full_params: p_opt length mismatch");
  }
  VecX p = layout.p_fixed;
  for (int j = 0; j < layout.n_opt(); ++j) p(layout.opt_idx[j]) = p_opt(j);
  return p;
}

// Gathers the optimized entries out of a full parameter vector.
inline VecX extract_opt_params(const ParameterLayout& layout, const VecX& p) {
  if (p.size() != layout.n_p) {
    throw InvalidArgument("extract_opt_params: p length mismatch");
  }
  VecX out(layout.n_opt());
  for (int j = 0; j < layout.n_opt(); ++j) out(j) = p(layout.opt_idx[j]);
  return out;
}

// n_p x n_opt selection matrix: column j seeds full-parameter direction
// e_{opt_idx[j]}.  Used to push optimizer-space tangents through model maps.
inline MatX opt_seed_matrix(const ParameterLayout& layout) {
  MatX s = MatX::Zero(layout.n_p, layout.n_opt());
  for (int j = 0; j < layout.n_opt(); ++j) s(layout.opt_idx[j], j) = 1.0;
  return s;
}

// Restriction of a full-parameter gradient row to the optimized entries.
inline VecX restrict_to_opt(const ParameterLayout& layout,
                            const VecX& grad_full) {
  return extract_opt_params(layout, grad_full);
}

}  // namespace hybridae
