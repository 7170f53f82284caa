#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "staf/body_model.hpp"
#include "staf/prng.hpp"
#include "staf/pyramid.hpp"
#include "test_util.hpp"

using namespace staf;
using test::max_abs_diff;

namespace {

DeconvVars random_deconv(std::int64_t co, std::int64_t ci, Prng r) {
  return {constant(r.normal_tensor({co, ci, 4, 4}, 0.2)), constant(r.normal_tensor({co}))};
}

// Scatter-add transposed convolution, kernel 4, stride 2, pad 1.
Tensor deconv_oracle(const Tensor& w, const Tensor& b, const Tensor& in) {
  const auto Co = w.dim(0), Ci = w.dim(1), H = in.dim(1), W = in.dim(2);
  const auto Ho = 2 * H, Wo = 2 * W;
  std::vector<double> out(static_cast<std::size_t>(Co * Ho * Wo));
  for (std::int64_t co = 0; co < Co; ++co)
    for (std::int64_t i = 0; i < Ho * Wo; ++i) out[static_cast<std::size_t>(co * Ho * Wo + i)] = b.at(co);
  for (std::int64_t ci = 0; ci < Ci; ++ci)
    for (std::int64_t iy = 0; iy < H; ++iy)
      for (std::int64_t ix = 0; ix < W; ++ix)
        for (std::int64_t ky = 0; ky < 4; ++ky)
          for (std::int64_t kx = 0; kx < 4; ++kx) {
            std::int64_t oy = 2 * iy + ky - 1, ox = 2 * ix + kx - 1;
            if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
            for (std::int64_t co = 0; co < Co; ++co)
              out[static_cast<std::size_t>((co * Ho + oy) * Wo + ox)] +=
                  w.at(((co * Ci + ci) * 4 + ky) * 4 + kx) * in.at((ci * H + iy) * W + ix);
          }
  return Tensor({Co, Ho, Wo}, std::move(out));
}

LinearVars random_reduce(std::int64_t out, std::int64_t in, Prng r) {
  return {constant(r.normal_tensor({out, in}, 0.3)), constant(r.normal_tensor({out}))};
}

}  // namespace

TEST_CASE("deconv levels double the spatial size up the chain") {
  Prng r(197);
  Tensor map = r.normal_tensor({3, 7, 7});
  Var x = constant(map);
  std::int64_t chans[4] = {3, 4, 5, 6};
  for (int level = 0; level < 3; ++level) {
    x = deconv_apply(random_deconv(chans[level + 1], chans[level], r.stream(level)), x);
    CHECK(x.value.dim(0) == chans[level + 1]);
    CHECK(x.value.dim(1) == 7 << (level + 1));
    CHECK(x.value.dim(2) == 7 << (level + 1));
  }
  CHECK(x.value.dim(1) == 56);
}

TEST_CASE("deconv with a zero kernel emits the bias everywhere") {
  Var w = constant(Tensor::zeros({2, 3, 4, 4}));
  Var b = constant(Tensor::vector({1.5, -2.5}));
  Prng r(199);
  Var out = deconv_apply({w, b}, constant(r.normal_tensor({3, 4, 4})));
  REQUIRE(out.value.dims() == std::vector<std::int64_t>{2, 8, 8});
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t i = 0; i < 64; ++i) CHECK(out.value.at(c * 64 + i) == b.value.at(c));
}

TEST_CASE("deconv matches the scatter add oracle") {
  Prng r(211);
  Tensor w = r.normal_tensor({2, 2, 4, 4});
  Tensor b = r.normal_tensor({2});
  Tensor in = r.normal_tensor({2, 3, 3});
  Var out = deconv_apply({constant(w), constant(b)}, constant(in));
  REQUIRE(out.value.dims() == std::vector<std::int64_t>{2, 6, 6});
  CHECK(max_abs_diff(out.value, deconv_oracle(w, b, in)) < 1e-12);
}

TEST_CASE("pyramid config reports the level geometry") {
  PyramidConfig pc;
  CHECK(pc.level_h(0) == 7);
  CHECK(pc.level_h(1) == 14);
  CHECK(pc.level_h(2) == 28);
  CHECK(pc.level_h(3) == 56);
  CHECK(pc.level_channels(0) == 2048);
  CHECK(pc.grid_side * pc.grid_side * pc.Cm == 2205);
  pc.validate();
  desk_scale_config().validate();
}

TEST_CASE("grid points cover the square corner to corner, y outer") {
  Tensor g = make_grid_points(3);
  REQUIRE(g.dims() == std::vector<std::int64_t>{9, 2});
  // Row-major over (y, x): first row of points shares y = -1.
  double want[18] = {-1, -1, 0, -1, 1, -1, -1, 0, 0, 0, 1, 0, -1, 1, 0, 1, 1, 1};
  for (int i = 0; i < 18; ++i) CHECK(g.at(i) == want[i]);
  Tensor g21 = make_grid_points(21);
  CHECK(g21.dim(0) == 441);
  CHECK(g21.at(0) == -1.0);
  CHECK(g21.at(2 * 441 - 1) == 1.0);
  // Uniform spacing 2/(side-1).
  CHECK(g21.at(2) - g21.at(0) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("grid features have the documented length at full scale") {
  Prng r(223);
  Tensor map = r.normal_tensor({3, 7, 7});
  Var f = grid_sample_features(constant(map), random_reduce(5, 3, r.stream(1)), 21);
  CHECK(f.value.dims() == std::vector<std::int64_t>{21 * 21 * 5});
}

TEST_CASE("grid features on a constant map repeat one reduced vector") {
  Prng r(227);
  LinearVars reduce = random_reduce(4, 2, r);
  std::vector<double> md(2 * 5 * 5);
  for (std::int64_t c = 0; c < 2; ++c)
    for (int i = 0; i < 25; ++i) md[static_cast<std::size_t>(c * 25 + i)] = c ? -3.0 : 2.0;
  Var f = grid_sample_features(constant(Tensor({2, 5, 5}, std::move(md))), reduce, 4);
  Var one = ops::linear(reduce, constant(Tensor::vector({2.0, -3.0})));
  REQUIRE(f.value.dim(0) == 16 * 4);
  for (std::int64_t p = 0; p < 16; ++p)
    for (std::int64_t c = 0; c < 4; ++c)
      CHECK(std::abs(f.value.at(p * 4 + c) - one.value.at(c)) < 1e-12);
}

TEST_CASE("a 3x3 grid on a 5x5 map lands on alternating pixels") {
  Prng r(229);
  Tensor map = r.normal_tensor({2, 5, 5});
  LinearVars reduce = random_reduce(3, 2, r.stream(1));
  Var f = grid_sample_features(constant(map), reduce, 3);
  REQUIRE(f.value.dim(0) == 27);
  for (std::int64_t iy = 0; iy < 3; ++iy)
    for (std::int64_t ix = 0; ix < 3; ++ix) {
      Tensor sample = Tensor::vector({map.at((0 * 5 + 2 * iy) * 5 + 2 * ix), map.at((1 * 5 + 2 * iy) * 5 + 2 * ix)});
      Var want = ops::linear(reduce, constant(sample));
      for (std::int64_t c = 0; c < 3; ++c)
        CHECK(std::abs(f.value.at((iy * 3 + ix) * 3 + c) - want.value.at(c)) < 1e-12);
    }
}

TEST_CASE("mesh features have the documented length at full scale") {
  BodyTemplate tmpl = make_mini_template({500, 23, 431}, 3);
  Prng r(233);
  Tensor map = r.normal_tensor({3, 14, 14});
  Var flat = constant(flatten_params(mean_params(tmpl.joints())));
  Var f = project_sample_features(constant(map), tmpl, flat, random_reduce(5, 3, r.stream(2)));
  CHECK(f.value.dims() == std::vector<std::int64_t>{431 * 5});
}

TEST_CASE("mesh features on a constant map ignore the pose") {
  BodyTemplate tmpl = make_mini_template({}, 7);
  Prng r(239);
  LinearVars reduce = random_reduce(5, 2, r);
  std::vector<double> md(2 * 6 * 6);
  for (std::int64_t c = 0; c < 2; ++c)
    for (int i = 0; i < 36; ++i) md[static_cast<std::size_t>(c * 36 + i)] = c ? 0.5 : -1.5;
  Var map = constant(Tensor({2, 6, 6}, std::move(md)));
  BodyParams p = mean_params(tmpl.joints());
  Var fa = project_sample_features(map, tmpl, constant(flatten_params(p)), reduce);
  p.theta = r.uniform_tensor({3 * tmpl.joints()}, -0.5, 0.5);
  p.cam_t = Tensor::vector({0.3, -0.2});
  Var fb = project_sample_features(map, tmpl, constant(flatten_params(p)), reduce);
  CHECK(max_abs_diff(fa.value, fb.value) < 1e-12);
}

TEST_CASE("mesh features match a per vertex oracle") {
  BodyTemplate tmpl = make_mini_template({}, 11);
  Prng r(241);
  Tensor map = r.normal_tensor({3, 8, 8});
  LinearVars reduce = random_reduce(2, 3, r.stream(1));
  BodyParams p;
  p.theta = r.uniform_tensor({3 * tmpl.joints()}, -0.4, 0.4);
  p.beta = r.normal_tensor({10}, 0.3);
  p.cam_s = 0.9;
  p.cam_t = Tensor::vector({0.1, 0.05});
  Tensor flat = flatten_params(p);
  Var f = project_sample_features(constant(map), tmpl, constant(flat), reduce);

  BodyVars body = body_forward(tmpl, constant(flat));
  Var down = downsample_verts(tmpl, body.vertices);
  Tensor pts2d = project_weak_perspective(down.value, p.cam_s, p.cam_t);
  REQUIRE(f.value.dim(0) == tmpl.down_verts() * 2);
  for (std::int64_t i = 0; i < tmpl.down_verts(); ++i) {
    Var sampled = ops::bilinear_sample(constant(map),
                                       constant(Tensor::matrix(1, 2, {pts2d.at(i * 2), pts2d.at(i * 2 + 1)})));
    Var want = ops::linear(reduce, constant(Tensor::vector({sampled.value.at(0), sampled.value.at(1), sampled.value.at(2)})));
    for (std::int64_t c = 0; c < 2; ++c)
      CHECK(std::abs(f.value.at(i * 2 + c) - want.value.at(c)) < 1e-12);
  }
}

TEST_CASE("grid features shift with an interior translation of the map content") {
  // Sampling is local: translating a delta map moves its response with it.
  Prng r(251);
  LinearVars reduce = random_reduce(1, 1, r);
  auto delta_map = [&](std::int64_t y, std::int64_t x) {
    std::vector<double> d(49, 0.0);
    d[static_cast<std::size_t>(y * 7 + x)] = 1.0;
    return Tensor({1, 7, 7}, std::move(d));
  };
  Var fa = grid_sample_features(constant(delta_map(2, 3)), reduce, 7);
  Var fb = grid_sample_features(constant(delta_map(4, 5)), reduce, 7);
  // A 7 point grid on a 7 pixel map samples pixel centers, so the delta's
  // response appears exactly at its own grid index.
  CHECK(fa.value.at(2 * 7 + 3) != fa.value.at(0));
  CHECK(fa.value.at(2 * 7 + 3) == fb.value.at(4 * 7 + 5));
}
