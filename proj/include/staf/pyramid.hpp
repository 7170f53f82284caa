#pragma once

#include <array>
#include <cstdint>

#include "staf/body_model.hpp"
#include "staf/ops.hpp"

namespace staf {

// Three deconvolution levels above the base map; each level doubles the
// spatial dims. channels[k] is the width of level k+1.
struct PyramidConfig {
  std::int64_t C0 = 2048;
  std::int64_t H0 = 7;
  std::int64_t W0 = 7;
  std::array<std::int64_t, 3> channels = {2048, 2048, 2048};
  std::int64_t Cm = 5;
  std::int64_t grid_side = 21;

  std::int64_t level_channels(int level) const {  // level 0 = base map
    return level == 0 ? C0 : channels[static_cast<std::size_t>(level - 1)];
  }
  std::int64_t level_h(int level) const { return H0 << level; }
  std::int64_t level_w(int level) const { return W0 << level; }
  void validate() const;
};

PyramidConfig desk_scale_config();

struct DeconvLayer {
  Tensor weight;  // {C_out, C_in, 4, 4}
  Tensor bias;    // {C_out}

  DeconvLayer() = default;
  DeconvLayer(Tensor w, Tensor b);
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }
};

struct DeconvVars {
  Var weight;
  Var bias;
};

DeconvVars as_constant(const DeconvLayer& layer);
Var deconv_apply(const DeconvVars& layer, const Var& map);

// side² points covering [-1,1]² inclusive of the corners, row-major with y
// as the outer axis; each row is (x, y). Requires side >= 2.
Tensor make_grid_points(std::int64_t side);

// Sample the map on the grid, reduce each point's channels with `reduce`,
// and concatenate in grid order: length side²·C_m.
Var grid_sample_features(const Var& map, const LinearVars& reduce, std::int64_t grid_side);

// Pose the body from flat params, project the downsampled vertices with the
// weak-perspective camera held in those params, sample the map there, reduce
// per point: length Nd·C_m. Differentiable through the projected coordinates.
Var project_sample_features(const Var& map, const BodyTemplate& tmpl, const Var& flat_params,
                            const LinearVars& reduce);

}  // namespace staf
