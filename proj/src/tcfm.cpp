#include "staf/tcfm.hpp"

namespace staf {

void TcfmWeights::validate() const {
  const auto s = q.in_dim();
  const auto sb = q.out_dim();
  require(k.in_dim() == s && k.out_dim() == sb && v.in_dim() == s && v.out_dim() == sb,
          "q/k/v must share dimensions");
  require(u.in_dim() == sb && u.out_dim() == s, "u must invert the bottleneck");
  require(fuse.weight.dim(0) == 1 && fuse.weight.dim(1) == 2, "fuse must mix two channels");
}

TcfmVars as_constant(const TcfmWeights& w) {
  return TcfmVars{as_constant(w.q), as_constant(w.k), as_constant(w.v), as_constant(w.fuse),
                  as_constant(w.u)};
}

std::int64_t tcfm_bottleneck(std::int64_t s) { return s / 2; }

std::pair<Var, Var> correlation_matrices(const Var& z, const TcfmVars& w) {
  require(z.value.rank() == 2, "correlation_matrices: z must be {T,S}");
  require(z.value.dim(1) == w.q.weight.value.dim(1),
          "correlation_matrices: width mismatch with weights");
  Var zq = ops::linear(w.q, z);  // {T,Sb}
  Var zk = ops::linear(w.k, z);
  Var m_con = ops::softmax_rows(ops::matmul(zq, ops::transpose(zk)));
  Var m_sim = ops::softmax_rows(ops::matmul(z, ops::transpose(z)));
  return {m_con, m_sim};
}

namespace {

// logits[i,j] = w0*a[i,j] + w1*b[i,j] + bias, with w = {1,2}, bias = {1}.
Var entry_mix(const Var& a, const Var& b, const Var& w, const Var& bias) {
  require(a.value.same_dims(b.value), "entry_mix: shape mismatch");
  require(w.value.size() == 2 && bias.value.size() == 1, "entry_mix: weight must be 2 + 1 values");
  const double w0 = w.value.at(0), w1 = w.value.at(1), bv = bias.value.at(0);
  const auto n = a.value.size();
  std::vector<double> d(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = w0 * a.value.at(i) + w1 * b.value.at(i) + bv;
  Tensor av = a.value, bt = b.value;
  return make_op(Tensor(a.value.dims(), std::move(d)), {&a, &b, &w, &bias},
                 [av, bt, w0, w1](const Tensor& g) {
                   const auto n = g.size();
                   std::vector<double> da(static_cast<std::size_t>(n)), db(static_cast<std::size_t>(n));
                   double dw0 = 0.0, dw1 = 0.0, dbias = 0.0;
                   for (std::int64_t i = 0; i < n; ++i) {
                     const double gi = g.at(i);
                     da[static_cast<std::size_t>(i)] = w0 * gi;
                     db[static_cast<std::size_t>(i)] = w1 * gi;
                     dw0 += gi * av.at(i);
                     dw1 += gi * bt.at(i);
                     dbias += gi;
                   }
                   return std::vector<Tensor>{Tensor(g.dims(), std::move(da)),
                                              Tensor(g.dims(), std::move(db)),
                                              Tensor({1, 2}, {dw0, dw1}), Tensor({1}, {dbias})};
                 });
}

}  // namespace

Var fuse_guidance(const Var& m_con, const Var& m_sim, const LinearVars& fuse) {
  require(m_con.value.rank() == 2 && m_con.value.dim(0) == m_con.value.dim(1),
          "fuse_guidance: matrices must be square");
  require(m_con.value.same_dims(m_sim.value), "fuse_guidance: shape mismatch");
  return ops::softmax_rows(entry_mix(m_con, m_sim, fuse.weight, fuse.bias));
}

Var tcfm_forward(const Var& z, const TcfmVars& w, TcfmTrace* trace) {
  auto [m_con, m_sim] = correlation_matrices(z, w);
  Var m_g = fuse_guidance(m_con, m_sim, w.fuse);
  if (trace) {
    trace->m_con = m_con.value;
    trace->m_sim = m_sim.value;
    trace->m_g = m_g.value;
  }
  Var zv = ops::linear(w.v, z);         // {T,Sb}
  Var mixed = ops::matmul(m_g, zv);     // {T,Sb}
  Var lifted = ops::linear(w.u, mixed); // {T,S}
  return ops::add(z, lifted);
}

}  // namespace staf
