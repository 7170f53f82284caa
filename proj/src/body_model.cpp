#include "staf/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "staf/prng.hpp"
#include "staf/serialize.hpp"

namespace staf {

namespace {

void check_row_stochastic(const Tensor& m, const std::string& name) {
  const auto r = m.dim(0), c = m.dim(1);
  for (std::int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double v = m.at(i * c + j);
      require(v >= -1e-12, name + " has a negative weight");
      s += v;
    }
    require(std::abs(s - 1.0) <= 1e-9, name + " row " + std::to_string(i) + " sums to " +
                                           std::to_string(s) + ", expected 1");
  }
}

}  // namespace

void BodyTemplate::validate() const {
  const auto N = verts();
  const auto j = joints();
  require(rest_vertices.rank() == 2 && rest_vertices.dim(1) == 3, "rest_vertices must be {N,3}");
  require(shape_dirs.rank() == 3 && shape_dirs.dim(0) == N && shape_dirs.dim(1) == 3 &&
              shape_dirs.dim(2) == 10,
          "shape_dirs must be {N,3,10}");
  require(joint_regressor.rank() == 2 && joint_regressor.dim(1) == N,
          "joint_regressor must be {J+1,N}");
  require(skin_weights.rank() == 2 && skin_weights.dim(0) == N && skin_weights.dim(1) == j,
          "skin_weights must be {N,J+1}");
  require(downsample.rank() == 2 && downsample.dim(1) == N, "downsample must be {Nd,N}");
  require(down_verts() <= N, "downsampled vertex count exceeds N");
  require(static_cast<std::int64_t>(parents.size()) == j, "parents length must be J+1");
  require(parents[0] == -1, "joint 0 must be the root");
  for (std::int64_t k = 1; k < j; ++k)
    require(parents[static_cast<std::size_t>(k)] >= 0 && parents[static_cast<std::size_t>(k)] < k,
            "parents must be topologically ordered with parent[k] < k");
  require(rest_vertices.all_finite() && shape_dirs.all_finite() && joint_regressor.all_finite() &&
              skin_weights.all_finite() && downsample.all_finite(),
          "template tensors must be finite");
  check_row_stochastic(joint_regressor, "joint_regressor");
  check_row_stochastic(skin_weights, "skin_weights");
  check_row_stochastic(downsample, "downsample");
}

std::uint64_t BodyTemplate::hash() const {
  return content_hash({{"rest_vertices", rest_vertices},
                       {"shape_dirs", shape_dirs},
                       {"joint_regressor", joint_regressor},
                       {"skin_weights", skin_weights},
                       {"downsample", downsample}});
}

BodyTemplate make_mini_template(const TemplateConfig& cfg, std::uint64_t seed) {
  require(cfg.J >= 1, "template needs at least one non-root joint");
  require(cfg.Nd >= 1 && cfg.Nd <= cfg.N, "need 1 <= Nd <= N");
  const auto N = cfg.N;
  const auto joints = cfg.J + 1;
  Prng root(seed);

  std::vector<int> parents(static_cast<std::size_t>(joints));
  parents[0] = -1;
  {
    Prng rng = root.stream("tree");
    for (std::int64_t k = 1; k < joints; ++k)
      parents[static_cast<std::size_t>(k)] = static_cast<int>(rng.index(k));
  }

  std::vector<double> jpos(static_cast<std::size_t>(joints * 3), 0.0);
  {
    Prng rng = root.stream("bones");
    for (std::int64_t k = 1; k < joints; ++k) {
      double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
      const double n = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-12;
      const double len = rng.uniform(0.15, 0.35);
      const auto p = static_cast<std::size_t>(parents[static_cast<std::size_t>(k)]);
      jpos[static_cast<std::size_t>(k * 3 + 0)] = jpos[p * 3 + 0] + len * dx / n;
      jpos[static_cast<std::size_t>(k * 3 + 1)] = jpos[p * 3 + 1] + len * dy / n;
      jpos[static_cast<std::size_t>(k * 3 + 2)] = jpos[p * 3 + 2] + len * dz / n;
    }
  }

  std::vector<double> verts(static_cast<std::size_t>(N * 3));
  {
    Prng rng = root.stream("verts");
    for (std::int64_t i = 0; i < N; ++i) {
      const std::int64_t k = 1 + (i % cfg.J);
      const auto p = static_cast<std::size_t>(parents[static_cast<std::size_t>(k)]);
      const double t = rng.uniform();
      double ax = jpos[static_cast<std::size_t>(k * 3 + 0)] - jpos[p * 3 + 0];
      double ay = jpos[static_cast<std::size_t>(k * 3 + 1)] - jpos[p * 3 + 1];
      double az = jpos[static_cast<std::size_t>(k * 3 + 2)] - jpos[p * 3 + 2];
      double rx = rng.normal(), ry = rng.normal(), rz = rng.normal();
      // strip the bone-axis component so the offset is radial
      const double a2 = ax * ax + ay * ay + az * az + 1e-12;
      const double dot = (rx * ax + ry * ay + rz * az) / a2;
      rx -= dot * ax;
      ry -= dot * ay;
      rz -= dot * az;
      const double rn = std::sqrt(rx * rx + ry * ry + rz * rz) + 1e-12;
      const double radius = rng.uniform(0.02, 0.06);
      verts[static_cast<std::size_t>(i * 3 + 0)] =
          jpos[p * 3 + 0] + t * ax + radius * rx / rn;
      verts[static_cast<std::size_t>(i * 3 + 1)] =
          jpos[p * 3 + 1] + t * ay + radius * ry / rn;
      verts[static_cast<std::size_t>(i * 3 + 2)] =
          jpos[p * 3 + 2] + t * az + radius * rz / rn;
    }
  }

  auto dist2_to_joint = [&](std::int64_t i, std::int64_t k) {
    const double dx = verts[static_cast<std::size_t>(i * 3 + 0)] - jpos[static_cast<std::size_t>(k * 3 + 0)];
    const double dy = verts[static_cast<std::size_t>(i * 3 + 1)] - jpos[static_cast<std::size_t>(k * 3 + 1)];
    const double dz = verts[static_cast<std::size_t>(i * 3 + 2)] - jpos[static_cast<std::size_t>(k * 3 + 2)];
    return dx * dx + dy * dy + dz * dz;
  };

  // Soft assignment to the two nearest joints, weights inversely
  // proportional to distance.
  std::vector<double> skin(static_cast<std::size_t>(N * joints), 0.0);
  for (std::int64_t i = 0; i < N; ++i) {
    std::int64_t best = 0, second = 1;
    if (dist2_to_joint(i, 1) < dist2_to_joint(i, 0)) std::swap(best, second);
    for (std::int64_t k = 2; k < joints; ++k) {
      const double d = dist2_to_joint(i, k);
      if (d < dist2_to_joint(i, best)) {
        second = best;
        best = k;
      } else if (d < dist2_to_joint(i, second)) {
        second = k;
      }
    }
    const double wb = 1.0 / (std::sqrt(dist2_to_joint(i, best)) + 1e-3);
    const double ws = 1.0 / (std::sqrt(dist2_to_joint(i, second)) + 1e-3);
    skin[static_cast<std::size_t>(i * joints + best)] = wb / (wb + ws);
    skin[static_cast<std::size_t>(i * joints + second)] = ws / (wb + ws);
  }

  const std::int64_t m = std::min<std::int64_t>(6, N);
  std::vector<double> jreg(static_cast<std::size_t>(joints * N), 0.0);
  {
    std::vector<std::int64_t> order(static_cast<std::size_t>(N));
    for (std::int64_t k = 0; k < joints; ++k) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return dist2_to_joint(a, k) < dist2_to_joint(b, k);
      });
      for (std::int64_t r = 0; r < m; ++r)
        jreg[static_cast<std::size_t>(k * N + order[static_cast<std::size_t>(r)])] =
            1.0 / static_cast<double>(m);
    }
  }

  // Smooth sinusoidal displacement fields keep blendshapes low-frequency.
  std::vector<double> sdirs(static_cast<std::size_t>(N * 3 * 10));
  {
    Prng rng = root.stream("shape");
    for (int d = 0; d < 10; ++d) {
      double ux = rng.normal(), uy = rng.normal(), uz = rng.normal();
      const double un = std::sqrt(ux * ux + uy * uy + uz * uz) + 1e-12;
      ux /= un;
      uy /= un;
      uz /= un;
      const double freq = rng.uniform(1.0, 3.0);
      const double ph0 = rng.uniform(0.0, 6.283185307179586);
      const double ph1 = rng.uniform(0.0, 6.283185307179586);
      const double ph2 = rng.uniform(0.0, 6.283185307179586);
      for (std::int64_t i = 0; i < N; ++i) {
        const double proj = verts[static_cast<std::size_t>(i * 3)] * ux +
                            verts[static_cast<std::size_t>(i * 3 + 1)] * uy +
                            verts[static_cast<std::size_t>(i * 3 + 2)] * uz;
        sdirs[static_cast<std::size_t>((i * 3 + 0) * 10 + d)] = 0.02 * std::sin(freq * proj + ph0);
        sdirs[static_cast<std::size_t>((i * 3 + 1) * 10 + d)] = 0.02 * std::sin(freq * proj + ph1);
        sdirs[static_cast<std::size_t>((i * 3 + 2) * 10 + d)] = 0.02 * std::sin(freq * proj + ph2);
      }
    }
  }

  std::vector<double> down(static_cast<std::size_t>(cfg.Nd * N), 0.0);
  for (std::int64_t r = 0; r < cfg.Nd; ++r)
    down[static_cast<std::size_t>(r * N + (r * N) / cfg.Nd)] = 1.0;

  BodyTemplate tmpl;
  tmpl.rest_vertices = Tensor({N, 3}, std::move(verts));
  tmpl.shape_dirs = Tensor({N, 3, 10}, std::move(sdirs));
  tmpl.joint_regressor = Tensor({joints, N}, std::move(jreg));
  tmpl.skin_weights = Tensor({N, joints}, std::move(skin));
  tmpl.parents = std::move(parents);
  tmpl.downsample = Tensor({cfg.Nd, N}, std::move(down));
  tmpl.validate();
  return tmpl;
}

void save_template(const std::string& path, const BodyTemplate& tmpl) {
  Bundle b;
  b.manifest["kind"] = "body_template";
  b.manifest["N"] = tmpl.verts();
  b.manifest["J"] = tmpl.joints() - 1;
  b.manifest["Nd"] = tmpl.down_verts();
  b.manifest["parents"] = tmpl.parents;
  b.tensors = {{"rest_vertices", tmpl.rest_vertices},
               {"shape_dirs", tmpl.shape_dirs},
               {"joint_regressor", tmpl.joint_regressor},
               {"skin_weights", tmpl.skin_weights},
               {"downsample", tmpl.downsample}};
  save_bundle(path, b);
}

BodyTemplate load_template(const std::string& path) {
  Bundle b = load_bundle(path);
  require(b.manifest.value("kind", std::string()) == "body_template",
          "not a body template file: " + path);
  BodyTemplate tmpl;
  tmpl.rest_vertices = b.get("rest_vertices");
  tmpl.shape_dirs = b.get("shape_dirs");
  tmpl.joint_regressor = b.get("joint_regressor");
  tmpl.skin_weights = b.get("skin_weights");
  tmpl.downsample = b.get("downsample");
  tmpl.parents = b.manifest["parents"].get<std::vector<int>>();
  tmpl.validate();
  return tmpl;
}

std::int64_t param_dim(std::int64_t joints) { return 3 * joints + 13; }

Tensor flatten_params(const BodyParams& p) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(p.theta.size() + 13));
  d.insert(d.end(), p.theta.data(), p.theta.data() + p.theta.size());
  d.insert(d.end(), p.beta.data(), p.beta.data() + p.beta.size());
  d.push_back(p.cam_s);
  d.insert(d.end(), p.cam_t.data(), p.cam_t.data() + 2);
  return Tensor::vector(std::move(d));
}

BodyParams unflatten_params(const Tensor& flat, std::int64_t joints) {
  require(flat.rank() == 1 && flat.size() == param_dim(joints),
          "flat params must have length " + std::to_string(param_dim(joints)));
  const double* p = flat.data();
  const auto nt = 3 * joints;
  BodyParams out;
  out.theta = Tensor({nt}, std::vector<double>(p, p + nt));
  out.beta = Tensor({10}, std::vector<double>(p + nt, p + nt + 10));
  out.cam_s = p[nt + 10];
  out.cam_t = Tensor({2}, {p[nt + 11], p[nt + 12]});
  return out;
}

BodyParams mean_params(std::int64_t joints) {
  BodyParams p;
  p.theta = Tensor::zeros({3 * joints});
  p.beta = Tensor::zeros({10});
  p.cam_s = 1.0;
  p.cam_t = Tensor::zeros({2});
  return p;
}

Tensor rodrigues(const Tensor& aa) {
  require(aa.rank() == 1 && aa.size() == 3, "rodrigues expects an axis-angle 3-vector");
  Var r = ops::rodrigues_rows(constant(aa.reshaped({1, 3})));
  return r.value.reshaped({3, 3});
}

Var lbs_forward(const BodyTemplate& tmpl, const Var& beta, const Var& theta) {
  const auto N = tmpl.verts();
  const auto joints = tmpl.joints();
  require(beta.value.rank() == 1 && beta.value.size() == 10, "beta must have length 10");
  require(theta.value.rank() == 1 && theta.value.size() == 3 * joints,
          "theta must have length 3*(J+1) = " + std::to_string(3 * joints));

  Var sview = constant(tmpl.shape_dirs.reshaped({3 * N, 10}));
  Var offsets = ops::matmul(sview, ops::reshape(beta, {10, 1}));
  Var shaped = ops::add(constant(tmpl.rest_vertices), ops::reshape(offsets, {N, 3}));
  Var rest_j = ops::matmul(constant(tmpl.joint_regressor), shaped);

  Var rots = ops::rodrigues_rows(ops::reshape(theta, {joints, 3}));

  // Forward kinematics. Rw/tw are world rotation {3,3} and position {3,1}
  // per joint; the root pivots about the origin.
  std::vector<Var> rw(static_cast<std::size_t>(joints));
  std::vector<Var> tw(static_cast<std::size_t>(joints));
  rw[0] = ops::reshape(ops::row(rots, 0), {3, 3});
  tw[0] = ops::matmul(rw[0], ops::reshape(ops::row(rest_j, 0), {3, 1}));
  for (std::int64_t k = 1; k < joints; ++k) {
    const auto p = static_cast<std::size_t>(tmpl.parents[static_cast<std::size_t>(k)]);
    Var rk = ops::reshape(ops::row(rots, k), {3, 3});
    rw[static_cast<std::size_t>(k)] = ops::matmul(rw[p], rk);
    Var bone = ops::sub(ops::row(rest_j, k), ops::row(rest_j, static_cast<std::int64_t>(p)));
    tw[static_cast<std::size_t>(k)] =
        ops::add(ops::matmul(rw[p], ops::reshape(bone, {3, 1})), tw[p]);
  }

  std::vector<Var> rot_rows(static_cast<std::size_t>(joints));
  std::vector<Var> shift_rows(static_cast<std::size_t>(joints));
  for (std::int64_t k = 0; k < joints; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    rot_rows[ks] = ops::reshape(rw[ks], {9});
    Var anchored = ops::matmul(rw[ks], ops::reshape(ops::row(rest_j, k), {3, 1}));
    shift_rows[ks] = ops::reshape(ops::sub(tw[ks], anchored), {3});
  }
  Var rot_flat = ops::stack_rows(rot_rows);     // {J+1,9}
  Var shifts = ops::stack_rows(shift_rows);     // {J+1,3}

  Var skin = constant(tmpl.skin_weights);
  Var blended_rot = ops::matmul(skin, rot_flat);  // {N,9}
  Var blended_shift = ops::matmul(skin, shifts);  // {N,3}
  return ops::add(ops::rowwise_transform(blended_rot, shaped), blended_shift);
}

Var regress_joints(const BodyTemplate& tmpl, const Var& vertices) {
  require(vertices.value.rank() == 2 && vertices.value.dim(0) == tmpl.verts() &&
              vertices.value.dim(1) == 3,
          "vertices must be {N,3} for this template");
  return ops::matmul(constant(tmpl.joint_regressor), vertices);
}

Var downsample_verts(const BodyTemplate& tmpl, const Var& vertices) {
  require(vertices.value.rank() == 2 && vertices.value.dim(0) == tmpl.verts() &&
              vertices.value.dim(1) == 3,
          "vertices must be {N,3} for this template");
  return ops::matmul(constant(tmpl.downsample), vertices);
}

Tensor project_weak_perspective(const Tensor& points3d, double s, const Tensor& t,
                                const Tensor* R_global) {
  require(points3d.rank() == 2 && points3d.dim(1) == 3, "points must be {n,3}");
  require(t.rank() == 1 && t.dim(0) == 2, "t must have length 2");
  Tensor pts = points3d;
  if (R_global) {
    require(R_global->rank() == 2 && R_global->dim(0) == 3 && R_global->dim(1) == 3,
            "R_global must be 3x3");
    const auto n = points3d.dim(0);
    std::vector<double> rotated(static_cast<std::size_t>(n * 3));
    Eigen::Map<RowMatXd>(rotated.data(), n, 3).noalias() =
        points3d.mat() * R_global->mat().transpose();
    pts = Tensor({n, 3}, std::move(rotated));
  }
  Var out = ops::project_xy(constant(pts), constant(Tensor::scalar(s)), constant(t));
  return out.value;
}

BodyVars body_forward(const BodyTemplate& tmpl, const Var& flat_params) {
  const auto nt = 3 * tmpl.joints();
  require(flat_params.value.rank() == 1 && flat_params.value.size() == nt + 13,
          "flat params must have length " + std::to_string(nt + 13));
  Var theta = ops::slice(flat_params, 0, nt);
  Var beta = ops::slice(flat_params, nt, 10);
  Var cam_s = ops::slice(flat_params, nt + 10, 1);
  Var cam_t = ops::slice(flat_params, nt + 11, 2);
  BodyVars out;
  out.vertices = lbs_forward(tmpl, beta, theta);
  out.joints = regress_joints(tmpl, out.vertices);
  out.joints2d = ops::project_xy(out.joints, cam_s, cam_t);
  return out;
}

}  // namespace staf
