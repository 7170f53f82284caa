#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "staf/ops.hpp"
#include "staf/tensor.hpp"

namespace staf {

// Parametric body. rest_vertices in meters; regressor/skin/downsample rows
// are convex weights (each row sums to 1). parents[0] == -1 and
// parents[k] < k, so the tree is stored in topological order.
struct BodyTemplate {
  Tensor rest_vertices;    // {N,3}
  Tensor shape_dirs;       // {N,3,10}
  Tensor joint_regressor;  // {J+1,N}
  Tensor skin_weights;     // {N,J+1}
  std::vector<int> parents;
  Tensor downsample;  // {Nd,N}

  std::int64_t verts() const { return rest_vertices.dim(0); }
  std::int64_t joints() const { return joint_regressor.dim(0); }
  std::int64_t down_verts() const { return downsample.dim(0); }

  void validate() const;
  std::uint64_t hash() const;
};

struct TemplateConfig {
  std::int64_t N = 120;
  std::int64_t J = 7;  // non-root joints; the template has J+1 total
  std::int64_t Nd = 24;
};

// Deterministic capsule-limb body: a seeded kinematic tree, vertices strewn
// along the bones, nearest-joint soft skinning, nearest-vertex joint
// regression, smooth low-amplitude shape fields, strided downsampling.
BodyTemplate make_mini_template(const TemplateConfig& cfg, std::uint64_t seed);

void save_template(const std::string& path, const BodyTemplate& tmpl);
BodyTemplate load_template(const std::string& path);

// Flattened parameter layout: [theta | beta | cam_s | cam_t], so
// 3*(J+1) + 10 + 1 + 2 entries.
struct BodyParams {
  Tensor theta;  // {3*(J+1)}
  Tensor beta;   // {10}
  double cam_s = 1.0;
  Tensor cam_t;  // {2}
};

std::int64_t param_dim(std::int64_t joints);
Tensor flatten_params(const BodyParams& p);
BodyParams unflatten_params(const Tensor& flat, std::int64_t joints);
// Zero pose and shape, unit camera scale, centered.
BodyParams mean_params(std::int64_t joints);

// Axis-angle {3} to rotation matrix {3,3}; first-order branch below 1e-8.
Tensor rodrigues(const Tensor& aa);

// Posed vertices {N,3}. Differentiable in beta and theta. The root joint
// pivots about the origin, so a root-only pose rotates the whole shaped mesh
// rigidly: lbs(beta, root_only) == rodrigues(root) * lbs(beta, rest).
Var lbs_forward(const BodyTemplate& tmpl, const Var& beta, const Var& theta);

Var regress_joints(const BodyTemplate& tmpl, const Var& vertices);
Var downsample_verts(const BodyTemplate& tmpl, const Var& vertices);

// p2d = s * (R * p)_xy + t. R defaults to identity; the pipeline keeps the
// global rotation inside theta[0:3], so it is already applied by the time
// vertices exist.
Tensor project_weak_perspective(const Tensor& points3d, double s, const Tensor& t,
                                const Tensor* R_global = nullptr);

// Everything the loss terms need, derived from one flattened parameter
// vector: posed vertices and joints in meters plus the weak-perspective
// joint projection in normalized image coordinates.
struct BodyVars {
  Var vertices;  // {N,3}
  Var joints;    // {J+1,3}
  Var joints2d;  // {J+1,2}
};

BodyVars body_forward(const BodyTemplate& tmpl, const Var& flat_params);

}  // namespace staf
