#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "staf/tensor.hpp"

namespace staf {

// Reverse-mode tape. Ops record one node per output tensor; each node holds
// its parents and a VJP closure mapping the output cotangent to parent
// cotangents. With no active tape, ops run value-only (inference mode).
class Tape {
 public:
  using VjpFn = std::function<std::vector<Tensor>(const Tensor& cotangent)>;

  std::int32_t watch(const Tensor& value);
  std::int32_t record(const Tensor& value, std::vector<std::int32_t> parents, VjpFn vjp);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value_of(std::int32_t node) const { return nodes_[static_cast<std::size_t>(node)].value; }

  // Cotangents of every node, seeded with d(root)/d(root) = seed. Reverse
  // topological order is the recording order reversed; accumulation order is
  // therefore deterministic.
  std::vector<Tensor> gradients(std::int32_t root, const Tensor& seed) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::int32_t> parents;
    VjpFn vjp;  // empty for leaves
  };
  std::vector<Node> nodes_;
};

Tape* active_tape();

// RAII activation of a tape on this thread. Nesting is disallowed.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

// A tensor plus its tape node (-1 when untracked).
struct Var {
  Tensor value;
  std::int32_t node = -1;

  Var() = default;
  Var(Tensor v, std::int32_t n) : value(std::move(v)), node(n) {}

  bool tracked() const { return node >= 0; }
};

// Leaf registered on the active tape (gradient target). Requires a tape.
Var watch(const Tensor& value);

// Wraps a value without tracking; gradients do not flow into it.
Var constant(Tensor value);

// Records `out = f(parents...)` on the active tape if any parent is tracked.
Var make_op(Tensor out, const std::vector<const Var*>& parents, Tape::VjpFn vjp);

}  // namespace staf
