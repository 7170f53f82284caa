#include "staf/pyramid.hpp"

namespace staf {

void PyramidConfig::validate() const {
  require(C0 >= 1 && H0 >= 1 && W0 >= 1, "base map dims must be positive");
  for (auto c : channels) require(c >= 1, "level channels must be positive");
  require(Cm >= 1, "reduced channel width must be positive");
  require(grid_side >= 2, "grid side must be at least 2");
}

PyramidConfig desk_scale_config() {
  PyramidConfig pc;
  pc.C0 = 8;
  pc.H0 = 4;
  pc.W0 = 4;
  pc.channels = {8, 8, 8};
  pc.Cm = 5;
  pc.grid_side = 5;
  return pc;
}

DeconvLayer::DeconvLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
  require(weight.rank() == 4 && weight.dim(2) == 4 && weight.dim(3) == 4,
          "deconv weight must be {C_out,C_in,4,4}");
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "deconv bias length must equal output channels");
  require(weight.all_finite() && bias.all_finite(), "deconv weights must be finite");
}

DeconvVars as_constant(const DeconvLayer& layer) {
  return DeconvVars{constant(layer.weight), constant(layer.bias)};
}

Var deconv_apply(const DeconvVars& layer, const Var& map) {
  return ops::deconv(layer.weight, layer.bias, map);
}

Tensor make_grid_points(std::int64_t side) {
  require(side >= 2, "grid side must be at least 2");
  std::vector<double> d(static_cast<std::size_t>(side * side * 2));
  for (std::int64_t i = 0; i < side; ++i) {
    const double y = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(side - 1);
    for (std::int64_t j = 0; j < side; ++j) {
      const double x = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(side - 1);
      d[static_cast<std::size_t>((i * side + j) * 2)] = x;
      d[static_cast<std::size_t>((i * side + j) * 2 + 1)] = y;
    }
  }
  return Tensor({side * side, 2}, std::move(d));
}

Var grid_sample_features(const Var& map, const LinearVars& reduce, std::int64_t grid_side) {
  require(map.value.rank() == 3, "grid_sample_features: map must be {C,H,W}");
  require(reduce.weight.value.dim(1) == map.value.dim(0),
          "grid_sample_features: reduce input width must equal map channels");
  Var pts = constant(make_grid_points(grid_side));
  Var sampled = ops::bilinear_sample(map, pts);   // {side²,C}
  Var reduced = ops::linear(reduce, sampled);     // {side²,Cm}
  return ops::reshape(reduced, {grid_side * grid_side * reduce.weight.value.dim(0)});
}

Var project_sample_features(const Var& map, const BodyTemplate& tmpl, const Var& flat_params,
                            const LinearVars& reduce) {
  require(map.value.rank() == 3, "project_sample_features: map must be {C,H,W}");
  require(reduce.weight.value.dim(1) == map.value.dim(0),
          "project_sample_features: reduce input width must equal map channels");
  const auto joints = tmpl.joints();
  require(flat_params.value.rank() == 1 && flat_params.value.size() == param_dim(joints),
          "project_sample_features: flat params length mismatch");
  const auto nt = 3 * joints;
  Var theta = ops::slice(flat_params, 0, nt);
  Var beta = ops::slice(flat_params, nt, 10);
  Var cam_s = ops::slice(flat_params, nt + 10, 1);
  Var cam_t = ops::slice(flat_params, nt + 11, 2);

  Var verts = lbs_forward(tmpl, beta, theta);
  Var sparse = downsample_verts(tmpl, verts);            // {Nd,3}
  Var pts = ops::project_xy(sparse, cam_s, cam_t);       // {Nd,2}
  Var sampled = ops::bilinear_sample(map, pts);          // {Nd,C}
  Var reduced = ops::linear(reduce, sampled);            // {Nd,Cm}
  return ops::reshape(reduced, {tmpl.down_verts() * reduce.weight.value.dim(0)});
}

}  // namespace staf
