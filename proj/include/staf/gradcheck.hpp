#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "staf/autodiff.hpp"
#include "staf/prng.hpp"

namespace staf {

// One gradient check target: seeded inputs plus a runner building the output
// from them. Inputs are watched, the output is contracted with a random
// cotangent, and the tape's input gradients are compared against central
// finite differences with step 1e-6*(1+|x|) per coordinate.
struct CheckCase {
  std::string name;
  // Returns the input tensors for one trial.
  std::function<std::vector<Tensor>(Prng&)> make_inputs;
  // Maps watched inputs to the op output.
  std::function<Var(const std::vector<Var>&)> run;
  // Coordinates probed per input tensor; 0 means all of them.
  std::int64_t probe_cap = 0;
};

struct CheckResult {
  std::string name;
  double max_rel = 0.0;
  int trials = 0;
  bool passed = false;
};

// Worst relative error of one case across `trials` seeded trials.
CheckResult vjp_check(const CheckCase& c, std::uint64_t seed, int trials = 25,
                      double tol = 1e-4);

// Every differentiable op and composite, including the end-to-end
// loss-to-weights chain at desk scale.
std::vector<CheckCase> gradient_suite();

// Forward-only routines (the metrics) that have no registered backward; they
// are reported as unverifiable rather than passed.
std::vector<std::string> unverifiable_ops();

std::vector<CheckResult> run_gradient_suite(std::uint64_t seed, int trials = 25);

}  // namespace staf
