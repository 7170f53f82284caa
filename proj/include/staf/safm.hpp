#pragma once

#include <utility>
#include <vector>

#include "staf/ops.hpp"

namespace staf {

// Three-way attention integrator shared across both levels: each candidate
// feature is reduced to d_r, the three reductions are concatenated and scored
// by a three-layer head (tanh after the first two), and the softmax scores
// weight the original features.
struct SafmWeights {
  LinearLayer fc_reduce;  // S -> d_r
  LinearLayer h1;         // 3*d_r -> hidden
  LinearLayer h2;         // hidden -> hidden2
  LinearLayer h3;         // hidden2 -> 3

  void validate() const;
  std::int64_t width() const { return fc_reduce.in_dim(); }
};

struct SafmVars {
  LinearVars fc_reduce, h1, h2, h3;
};

SafmVars as_constant(const SafmWeights& w);

// Integrated feature plus its attention triple.
std::pair<Var, Var> attention_integrate(const Var& f1, const Var& f2, const Var& f3,
                                        const SafmVars& w);

// Two levels over exactly 9 features: groups (0,1,2) (3,4,5) (6,7,8), then
// the three group features. alphas holds the four attention triples in that
// order (three level-1 groups, then level 2).
std::pair<Var, std::vector<Tensor>> safm_forward(const std::vector<Var>& features,
                                                 const SafmVars& w);

}  // namespace staf
