#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "staf/body_model.hpp"
#include "staf/pyramid.hpp"
#include "staf/safm.hpp"
#include "staf/tcfm.hpp"

namespace staf {

// One refinement stage: MLP on [feature | current params] emitting a
// parameter update.
struct RegressorWeights {
  LinearLayer l1, l2, head;

  void validate(std::int64_t feature_len, std::int64_t dim) const;
};

struct RegressorVars {
  LinearVars l1, l2, head;
};

struct StafModel {
  PyramidConfig pc;
  std::int64_t T = 9;
  BodyTemplate tmpl;
  std::array<DeconvLayer, 3> deconv;
  std::array<LinearLayer, 3> reduce;
  TcfmWeights tcfm;
  SafmWeights safm;
  std::array<RegressorWeights, 3> reg;
  Tensor theta_mean;  // {D}, the shared regression starting point

  std::int64_t dim() const { return param_dim(tmpl.joints()); }
  std::int64_t grid_feature_len() const { return pc.grid_side * pc.grid_side * pc.Cm; }
  std::int64_t mesh_feature_len() const { return tmpl.down_verts() * pc.Cm; }
  void validate() const;
};

// Trainable tensors in a fixed order (template and theta_mean excluded).
// Must stay in sync with the ModelVars construction order.
void visit_weights(StafModel& m, const std::function<void(const std::string&, Tensor&)>& f);
void visit_weights(const StafModel& m,
                   const std::function<void(const std::string&, const Tensor&)>& f);

struct ModelVars {
  std::array<DeconvVars, 3> deconv;
  std::array<LinearVars, 3> reduce;
  TcfmVars tcfm;
  SafmVars safm;
  std::array<RegressorVars, 3> reg;
};

ModelVars as_constant(const StafModel& m);
// Registers every trainable tensor on the active tape. When `nodes` is given
// it receives the tape ids in visit_weights order.
ModelVars watch_model(const StafModel& m, std::vector<std::int32_t>* nodes = nullptr);
// Assembles the Var mirror from a list in visit_weights order (for callers
// that watch the weights themselves, like the gradient checker).
ModelVars vars_from_list(const StafModel& m, const std::vector<Var>& weights);

struct ModelInit {
  std::int64_t regressor_hidden = 1024;
  std::int64_t safm_dr = 256;
  std::int64_t safm_hidden = 256;
  double weight_scale = 1.0;  // multiplies the 1/sqrt(fan_in) ranges
  double head_scale = 0.1;    // extra damping on regressor output heads
};

ModelInit desk_model_init();

StafModel init_model(const PyramidConfig& pc, BodyTemplate tmpl, std::int64_t T,
                     std::uint64_t seed, const ModelInit& mi);

// Elementwise mean of identically shaped maps (the window smoothing applied
// to the target frame's base features).
Tensor apm(const std::vector<Tensor>& features);

Var ief_regress(const Var& feature, const Var& theta_in, const RegressorVars& w);

struct StafOutput {
  std::vector<Var> theta1;  // one per window frame
  Var theta2;
  Var theta3;
  std::vector<Tensor> safm_alphas;
  TcfmTrace tcfm_trace;
};

// Full per-window pass: smoothing, level-1 grid features + temporal fusion +
// per-frame regression, level-2 mesh features + spatial fusion + target
// regression, level-3 target-only refinement.
StafOutput staf_forward(const std::vector<Tensor>& window, const StafModel& model,
                        const ModelVars& mv, bool apm_enabled = true);

// Window of T frame indices for a target, clamped to [0, length).
std::vector<std::int64_t> window_indices(std::int64_t target, std::int64_t length,
                                         std::int64_t T);

// Final-stage params for every frame, {L,D}. threads > 1 distributes targets
// over worker threads; the result is identical to the sequential run.
Tensor run_sequence(const std::vector<Tensor>& frames, const StafModel& model,
                    bool apm_enabled = true, int threads = 1);

void save_model(const std::string& path, const StafModel& model);
StafModel load_model(const std::string& path);

}  // namespace staf
