#include "staf/autodiff.hpp"

#include <stdexcept>

namespace staf {

namespace {
thread_local Tape* g_tape = nullptr;

Tensor add_into(const Tensor& a, const Tensor& b) {
  require(a.same_dims(b), "cotangent shape mismatch during accumulation");
  std::vector<double> out(a.data(), a.data() + a.size());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return Tensor(a.dims(), std::move(out));
}
}  // namespace

std::int32_t Tape::watch(const Tensor& value) {
  nodes_.push_back(Node{value, {}, nullptr});
  return static_cast<std::int32_t>(nodes_.size() - 1);
}

std::int32_t Tape::record(const Tensor& value, std::vector<std::int32_t> parents, VjpFn vjp) {
  for (auto p : parents)
    if (p < 0 || static_cast<std::size_t>(p) >= nodes_.size())
      throw std::logic_error("tape parent out of range");
  nodes_.push_back(Node{value, std::move(parents), std::move(vjp)});
  return static_cast<std::int32_t>(nodes_.size() - 1);
}

std::vector<Tensor> Tape::gradients(std::int32_t root, const Tensor& seed) const {
  if (root < 0 || static_cast<std::size_t>(root) >= nodes_.size())
    throw std::logic_error("gradient root is not on this tape");
  require(seed.same_dims(nodes_[static_cast<std::size_t>(root)].value),
          "gradient seed shape must match the root value");
  std::vector<Tensor> grad(nodes_.size());
  std::vector<bool> has(nodes_.size(), false);
  grad[static_cast<std::size_t>(root)] = seed;
  has[static_cast<std::size_t>(root)] = true;
  for (std::int32_t i = root; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    const Node& node = nodes_[idx];
    if (!has[idx] || node.parents.empty()) continue;
    std::vector<Tensor> parent_cotangents = node.vjp(grad[idx]);
    if (parent_cotangents.size() != node.parents.size())
      throw std::logic_error("vjp returned wrong parent count");
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const auto p = static_cast<std::size_t>(node.parents[k]);
      require(parent_cotangents[k].same_dims(nodes_[p].value),
              "vjp cotangent shape mismatch");
      if (has[p]) {
        grad[p] = add_into(grad[p], parent_cotangents[k]);
      } else {
        grad[p] = std::move(parent_cotangents[k]);
        has[p] = true;
      }
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!has[i]) grad[i] = Tensor::zeros(nodes_[i].value.dims());
  return grad;
}

Tape* active_tape() { return g_tape; }

TapeScope::TapeScope(Tape& tape) {
  if (g_tape) throw std::logic_error("nested tape scopes are not supported");
  g_tape = &tape;
}

TapeScope::~TapeScope() { g_tape = nullptr; }

Var watch(const Tensor& value) {
  if (!g_tape) throw std::logic_error("watch() requires an active tape");
  return Var(value, g_tape->watch(value));
}

Var constant(Tensor value) { return Var(std::move(value), -1); }

Var make_op(Tensor out, const std::vector<const Var*>& parents, Tape::VjpFn vjp) {
  Tape* tape = g_tape;
  if (!tape) return Var(std::move(out), -1);
  bool any_tracked = false;
  for (const Var* p : parents) any_tracked = any_tracked || p->tracked();
  if (!any_tracked) return Var(std::move(out), -1);
  // Untracked parents become watched leaves so the VJP closure can stay
  // positional; their cotangents are simply never requested.
  std::vector<std::int32_t> ids(parents.size());
  for (std::size_t i = 0; i < parents.size(); ++i)
    ids[i] = parents[i]->tracked() ? parents[i]->node : tape->watch(parents[i]->value);
  std::int32_t node = tape->record(out, std::move(ids), std::move(vjp));
  return Var(std::move(out), node);
}

}  // namespace staf
