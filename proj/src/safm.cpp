#include "staf/safm.hpp"

namespace staf {

void SafmWeights::validate() const {
  require(h1.in_dim() == 3 * fc_reduce.out_dim(),
          "head input width must be three reduced features");
  require(h2.in_dim() == h1.out_dim() && h3.in_dim() == h2.out_dim(),
          "head layers must chain");
  require(h3.out_dim() == 3, "head must score three candidates");
}

SafmVars as_constant(const SafmWeights& w) {
  return SafmVars{as_constant(w.fc_reduce), as_constant(w.h1), as_constant(w.h2),
                  as_constant(w.h3)};
}

std::pair<Var, Var> attention_integrate(const Var& f1, const Var& f2, const Var& f3,
                                        const SafmVars& w) {
  const auto s = w.fc_reduce.weight.value.dim(1);
  require(f1.value.rank() == 1 && f1.value.size() == s && f2.value.size() == s &&
              f3.value.size() == s,
          "attention_integrate: features must be vectors of the reduce width");
  Var r1 = ops::linear(w.fc_reduce, f1);
  Var r2 = ops::linear(w.fc_reduce, f2);
  Var r3 = ops::linear(w.fc_reduce, f3);
  Var cat = ops::concat({r1, r2, r3});
  Var hidden = ops::tanh(ops::linear(w.h1, cat));
  Var hidden2 = ops::tanh(ops::linear(w.h2, hidden));
  Var logits = ops::linear(w.h3, hidden2);  // {3}
  Var alpha = ops::reshape(ops::softmax_rows(ops::reshape(logits, {1, 3})), {3});
  Var stacked = ops::stack_rows({f1, f2, f3});  // {3,S}
  Var mixed = ops::matmul(ops::reshape(alpha, {1, 3}), stacked);
  return {ops::reshape(mixed, {s}), alpha};
}

std::pair<Var, std::vector<Tensor>> safm_forward(const std::vector<Var>& features,
                                                 const SafmVars& w) {
  require(features.size() == 9, "safm_forward: exactly 9 features required");
  std::vector<Tensor> alphas;
  std::vector<Var> groups;
  for (int g = 0; g < 3; ++g) {
    auto [feat, alpha] = attention_integrate(features[static_cast<std::size_t>(3 * g)],
                                             features[static_cast<std::size_t>(3 * g + 1)],
                                             features[static_cast<std::size_t>(3 * g + 2)], w);
    groups.push_back(feat);
    alphas.push_back(alpha.value);
  }
  auto [refined, alpha] = attention_integrate(groups[0], groups[1], groups[2], w);
  alphas.push_back(alpha.value);
  return {refined, std::move(alphas)};
}

}  // namespace staf
