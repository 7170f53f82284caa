#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "staf/body_model.hpp"
#include "staf/prng.hpp"
#include "staf/tensor.hpp"
#include "test_util.hpp"

using namespace staf;
using test::bitwise_equal;
using test::max_abs_diff;

namespace {

// Independent rotation oracle: axis-angle through a unit quaternion.
Tensor quat_rotation(double ax, double ay, double az) {
  double th = std::sqrt(ax * ax + ay * ay + az * az);
  double w = std::cos(th / 2), x = 0, y = 0, z = 0;
  if (th > 0) {
    double s = std::sin(th / 2) / th;
    x = ax * s;
    y = ay * s;
    z = az * s;
  }
  return Tensor::matrix(3, 3,
                        {1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
                         2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
                         2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)});
}

Tensor apply_rotation(const Tensor& R, const Tensor& pts) {
  std::vector<double> out(static_cast<std::size_t>(pts.size()));
  for (std::int64_t i = 0; i < pts.dim(0); ++i)
    for (std::int64_t r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (std::int64_t c = 0; c < 3; ++c) acc += R.at(r * 3 + c) * pts.at(i * 3 + c);
      out[static_cast<std::size_t>(i * 3 + r)] = acc;
    }
  return Tensor(pts.dims(), std::move(out));
}

// One root joint at the origin, four vertices, explicit convex weights.
BodyTemplate toy_template() {
  BodyTemplate t;
  t.rest_vertices = Tensor::matrix(4, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1});
  t.shape_dirs = Tensor::zeros({4, 3, 10});
  t.joint_regressor = Tensor::matrix(1, 4, {0.25, 0.25, 0.25, 0.25});
  t.skin_weights = Tensor::matrix(4, 1, {1, 1, 1, 1});
  t.parents = {-1};
  t.downsample = Tensor::matrix(2, 4, {1, 0, 0, 0, 0.25, 0.25, 0.25, 0.25});
  t.validate();
  return t;
}

}  // namespace

TEST_CASE("rodrigues of the zero vector is the identity") {
  Tensor R = rodrigues(Tensor::vector({0, 0, 0}));
  CHECK(max_abs_diff(R, Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})) == 0.0);
}

TEST_CASE("rodrigues of a half turn about x flips y and z") {
  Tensor R = rodrigues(Tensor::vector({M_PI, 0, 0}));
  CHECK(max_abs_diff(R, Tensor::matrix(3, 3, {1, 0, 0, 0, -1, 0, 0, 0, -1})) < 1e-12);
}

TEST_CASE("rodrigues matches the quaternion oracle") {
  Prng r(107);
  for (int i = 0; i < 100; ++i) {
    double scale = r.uniform(0.0, 4.0 * M_PI);
    double ax = r.normal(), ay = r.normal(), az = r.normal();
    double n = std::sqrt(ax * ax + ay * ay + az * az);
    if (n > 0) {
      ax *= scale / n;
      ay *= scale / n;
      az *= scale / n;
    }
    Tensor R = rodrigues(Tensor::vector({ax, ay, az}));
    CHECK(max_abs_diff(R, quat_rotation(ax, ay, az)) < 1e-10);
  }
}

TEST_CASE("rodrigues yields proper rotations across magnitudes") {
  Prng r(109);
  std::vector<double> mags = {0.0, 1e-12, 1e-8, 1e-4, 0.5, M_PI, 2 * M_PI, 4 * M_PI};
  for (double m : mags) {
    double ax = r.normal(), ay = r.normal(), az = r.normal();
    double n = std::sqrt(ax * ax + ay * ay + az * az);
    Tensor R = rodrigues(Tensor::vector({ax * m / n, ay * m / n, az * m / n}));
    // Orthonormality: R^T R = I.
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += R.at(k * 3 + a) * R.at(k * 3 + b);
        CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-10);
      }
    double det = R.at(0) * (R.at(4) * R.at(8) - R.at(5) * R.at(7)) -
                 R.at(1) * (R.at(3) * R.at(8) - R.at(5) * R.at(6)) +
                 R.at(2) * (R.at(3) * R.at(7) - R.at(4) * R.at(6));
    CHECK(std::abs(det - 1.0) < 1e-10);
  }
}

TEST_CASE("batched rodrigues matches per row evaluation") {
  Prng r(113);
  Tensor aa = r.normal_tensor({5, 3});
  Var R = ops::rodrigues_rows(constant(aa));
  REQUIRE(R.value.dims() == std::vector<std::int64_t>{5, 9});
  for (std::int64_t i = 0; i < 5; ++i) {
    Tensor one = rodrigues(Tensor::vector({aa.at(i * 3), aa.at(i * 3 + 1), aa.at(i * 3 + 2)}));
    for (std::int64_t k = 0; k < 9; ++k) CHECK(R.value.at(i * 9 + k) == one.at(k));
  }
}

TEST_CASE("lbs at rest pose and zero shape reproduces the rest vertices") {
  BodyTemplate tmpl = make_mini_template({}, 5);
  Var v = lbs_forward(tmpl, constant(Tensor::zeros({10})),
                      constant(Tensor::zeros({3 * tmpl.joints()})));
  CHECK(max_abs_diff(v.value, tmpl.rest_vertices) < 1e-12);
}

TEST_CASE("a single blendshape adds its direction field at rest pose") {
  BodyTemplate tmpl = make_mini_template({}, 5);
  for (std::int64_t k : {0, 4, 9}) {
    std::vector<double> beta(10, 0.0);
    beta[static_cast<std::size_t>(k)] = 1.0;
    Var v = lbs_forward(tmpl, constant(Tensor::vector(beta)),
                        constant(Tensor::zeros({3 * tmpl.joints()})));
    for (std::int64_t i = 0; i < tmpl.verts(); ++i)
      for (std::int64_t d = 0; d < 3; ++d)
        CHECK(std::abs(v.value.at(i * 3 + d) -
                       (tmpl.rest_vertices.at(i * 3 + d) + tmpl.shape_dirs.at((i * 3 + d) * 10 + k))) <
              1e-12);
  }
}

TEST_CASE("a root only pose rotates the shaped body rigidly") {
  BodyTemplate tmpl = make_mini_template({}, 5);
  Prng r(127);
  Tensor beta = r.normal_tensor({10}, 0.5);
  Tensor aa = Tensor::vector({0.3, -1.1, 0.7});
  std::vector<double> pose(static_cast<std::size_t>(3 * tmpl.joints()), 0.0);
  pose[0] = aa.at(0);
  pose[1] = aa.at(1);
  pose[2] = aa.at(2);
  Var posed = lbs_forward(tmpl, constant(beta), constant(Tensor::vector(pose)));
  Var rest = lbs_forward(tmpl, constant(beta), constant(Tensor::zeros({3 * tmpl.joints()})));
  CHECK(max_abs_diff(posed.value, apply_rotation(rodrigues(aa), rest.value)) < 1e-10);
}

TEST_CASE("composing an extra root rotation premultiplies any posed body") {
  // The root pivots at the origin, so v(root + body pose) = R_root * v(body pose).
  BodyTemplate tmpl = make_mini_template({}, 9);
  Prng r(131);
  Tensor beta = r.normal_tensor({10}, 0.5);
  std::vector<double> pose(static_cast<std::size_t>(3 * tmpl.joints()));
  for (auto& p : pose) p = r.uniform(-0.4, 0.4);
  pose[0] = pose[1] = pose[2] = 0.0;
  Tensor aa = Tensor::vector({-0.9, 0.2, 0.5});
  std::vector<double> rooted = pose;
  rooted[0] = aa.at(0);
  rooted[1] = aa.at(1);
  rooted[2] = aa.at(2);
  Var base = lbs_forward(tmpl, constant(beta), constant(Tensor::vector(pose)));
  Var turned = lbs_forward(tmpl, constant(beta), constant(Tensor::vector(rooted)));
  CHECK(max_abs_diff(turned.value, apply_rotation(rodrigues(aa), base.value)) < 1e-9);
}

TEST_CASE("uniform regressor rows average the vertices") {
  BodyTemplate t = toy_template();
  Var j = regress_joints(t, constant(t.rest_vertices));
  CHECK(max_abs_diff(j.value, Tensor::matrix(1, 3, {0.5, 0.5, 0.5})) < 1e-12);
}

TEST_CASE("one hot downsample rows select vertices, uniform rows average") {
  BodyTemplate t = toy_template();
  Var d = downsample_verts(t, constant(t.rest_vertices));
  REQUIRE(d.value.dims() == std::vector<std::int64_t>{2, 3});
  for (std::int64_t c = 0; c < 3; ++c) {
    CHECK(d.value.at(c) == t.rest_vertices.at(c));
    CHECK(std::abs(d.value.at(3 + c) - 0.5) < 1e-12);
  }
}

TEST_CASE("regression matches an explicit double loop on the mini template") {
  BodyTemplate tmpl = make_mini_template({}, 5);
  Prng r(137);
  Tensor verts = r.normal_tensor({tmpl.verts(), 3});
  Var j = regress_joints(tmpl, constant(verts));
  for (std::int64_t a = 0; a < tmpl.joints(); ++a)
    for (std::int64_t c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < tmpl.verts(); ++n)
        acc += tmpl.joint_regressor.at(a * tmpl.verts() + n) * verts.at(n * 3 + c);
      CHECK(std::abs(j.value.at(a * 3 + c) - acc) < 1e-12);
    }
}

TEST_CASE("weak perspective projection drops depth and applies scale and shift") {
  Tensor p = project_weak_perspective(Tensor::matrix(1, 3, {0.5, -0.5, 7.0}), 2.0,
                                      Tensor::vector({1.0, 1.0}));
  CHECK(p.at(0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(p.at(1) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("projection op agrees with the tensor level helper") {
  Prng r(139);
  Tensor pts = r.normal_tensor({6, 3});
  double s = 1.7;
  Tensor t = Tensor::vector({0.2, -0.3});
  Var v = ops::project_xy(constant(pts), constant(Tensor::scalar(s)), constant(t));
  Tensor want = project_weak_perspective(pts, s, t);
  CHECK(max_abs_diff(v.value, want) < 1e-15);
}

TEST_CASE("mini template construction is deterministic and validates") {
  BodyTemplate a = make_mini_template({}, 12345);
  BodyTemplate b = make_mini_template({}, 12345);
  CHECK(a.hash() == b.hash());
  CHECK(bitwise_equal(a.rest_vertices, b.rest_vertices));
  CHECK(bitwise_equal(a.skin_weights, b.skin_weights));
  CHECK(a.hash() != make_mini_template({}, 54321).hash());
  a.validate();
  CHECK(a.verts() == 120);
  CHECK(a.joints() == 8);
  CHECK(a.down_verts() == 24);
  CHECK(a.parents[0] == -1);
  for (std::size_t k = 1; k < a.parents.size(); ++k) CHECK(a.parents[k] < static_cast<int>(k));
}

TEST_CASE("mini template scales to the full size body") {
  BodyTemplate big = make_mini_template({6890, 23, 431}, 6890);
  big.validate();
  CHECK(big.verts() == 6890);
  CHECK(big.joints() == 24);
  CHECK(big.down_verts() == 431);
  CHECK(param_dim(big.joints()) == 85);
}

TEST_CASE("template save and load round trip bit exactly") {
  auto path = std::filesystem::temp_directory_path() / "staf_test_template.bin";
  BodyTemplate a = make_mini_template({}, 777);
  save_template(path.string(), a);
  BodyTemplate b = load_template(path.string());
  CHECK(a.hash() == b.hash());
  CHECK(bitwise_equal(a.rest_vertices, b.rest_vertices));
  CHECK(bitwise_equal(a.shape_dirs, b.shape_dirs));
  CHECK(bitwise_equal(a.joint_regressor, b.joint_regressor));
  CHECK(bitwise_equal(a.downsample, b.downsample));
  CHECK(a.parents == b.parents);
  std::filesystem::remove(path);
}

TEST_CASE("parameter packing round trips and has the documented width") {
  CHECK(param_dim(24) == 85);
  CHECK(param_dim(8) == 37);
  Prng r(149);
  BodyParams p;
  p.theta = r.normal_tensor({24 * 3});
  p.beta = r.normal_tensor({10});
  p.cam_s = 1.3;
  p.cam_t = Tensor::vector({0.1, -0.2});
  Tensor flat = flatten_params(p);
  CHECK(flat.dim(0) == 85);
  BodyParams q = unflatten_params(flat, 24);
  CHECK(bitwise_equal(p.theta, q.theta));
  CHECK(bitwise_equal(p.beta, q.beta));
  CHECK(q.cam_s == 1.3);
  CHECK(bitwise_equal(p.cam_t, q.cam_t));
  BodyParams m = mean_params(24);
  CHECK(test::max_abs(m.theta) == 0.0);
  CHECK(m.cam_s == 1.0);
}

TEST_CASE("body_forward matches the explicit composition") {
  BodyTemplate tmpl = make_mini_template({}, 5);
  Prng r(151);
  BodyParams p;
  p.theta = r.uniform_tensor({3 * tmpl.joints()}, -0.5, 0.5);
  p.beta = r.normal_tensor({10}, 0.3);
  p.cam_s = 1.1;
  p.cam_t = Tensor::vector({0.05, -0.04});
  Var flat = constant(flatten_params(p));
  BodyVars out = body_forward(tmpl, flat);
  Var verts = lbs_forward(tmpl, constant(p.beta), constant(p.theta));
  Var joints = regress_joints(tmpl, verts);
  CHECK(max_abs_diff(out.vertices.value, verts.value) == 0.0);
  CHECK(max_abs_diff(out.joints.value, joints.value) == 0.0);
  Tensor want2d = project_weak_perspective(joints.value, p.cam_s, p.cam_t);
  CHECK(max_abs_diff(out.joints2d.value, want2d) < 1e-15);
}
