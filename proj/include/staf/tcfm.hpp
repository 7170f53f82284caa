#pragma once

#include <utility>

#include "staf/ops.hpp"

namespace staf {

// Temporal fusion over a T×S window: a learned correlation matrix (from Q/K
// projections), a parameter-free similarity matrix (Gram of the input rows),
// a per-entry two-channel mix fusing both into the guidance matrix, and a
// residual bottleneck refinement.
struct TcfmWeights {
  LinearLayer q, k, v;  // S -> S_b
  LinearLayer fuse;     // {1,2} weight + {1} bias, applied per matrix entry
  LinearLayer u;        // S_b -> S

  void validate() const;
  std::int64_t width() const { return q.in_dim(); }
  std::int64_t bottleneck() const { return q.out_dim(); }
};

struct TcfmVars {
  LinearVars q, k, v, fuse, u;
};

TcfmVars as_constant(const TcfmWeights& w);

std::int64_t tcfm_bottleneck(std::int64_t s);  // floor(s/2)

// (M_con, M_sim): softmax over each frame's row of attention logits.
std::pair<Var, Var> correlation_matrices(const Var& z, const TcfmVars& w);

// M_g = softmax_rows of the per-entry mix w0*M_con + w1*M_sim + b.
Var fuse_guidance(const Var& m_con, const Var& m_sim, const LinearVars& fuse);

// Z + U(M_g · V(Z)). Optionally records the three correlation matrices.
struct TcfmTrace {
  Tensor m_con, m_sim, m_g;
};
Var tcfm_forward(const Var& z, const TcfmVars& w, TcfmTrace* trace = nullptr);

}  // namespace staf
