#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "staf/autodiff.hpp"
#include "staf/ops.hpp"
#include "staf/prng.hpp"
#include "staf/serialize.hpp"
#include "staf/tensor.hpp"
#include "test_util.hpp"

using namespace staf;
using test::bitwise_equal;
using test::max_abs_diff;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.size() == 6);
  CHECK(t.at(4) == 5.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(t.reshaped({5}), std::invalid_argument);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
  CHECK(r.at(5) == 6.0);  // same storage, row-major
}

TEST_CASE("prng streams are independent and deterministic") {
  Prng a(42), b(42);
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());

  // Drawing from a child stream never disturbs the parent.
  Prng p(7);
  Prng child = p.stream("child");
  std::uint64_t first = Prng(7).next_u64();
  (void)child.next_u64();
  CHECK(p.next_u64() == first);

  // Label and id streams with distinct keys diverge.
  CHECK(Prng(7).stream("x").next_u64() != Prng(7).stream("y").next_u64());
  CHECK(Prng(7).stream(1).next_u64() != Prng(7).stream(2).next_u64());
}

TEST_CASE("prng uniform range and normal moments") {
  Prng r(99);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 4096; ++i) {
    double u = r.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(lo < 0.05);
  CHECK(hi > 0.95);

  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("tensor serialization round trip is bit exact") {
  Prng r(3);
  Tensor t = r.normal_tensor({3, 4, 5});
  std::stringstream ss;
  write_tensor(ss, t);
  Tensor u = read_tensor(ss);
  CHECK(u.dims() == t.dims());
  CHECK(bitwise_equal(t, u));

  std::stringstream bad;
  bad << "NOTSTAF1garbage";
  CHECK_THROWS(read_tensor(bad));
}

TEST_CASE("bundle round trip preserves manifest and blobs") {
  Bundle b;
  b.manifest["kind"] = "demo";
  b.manifest["n"] = 3;
  Prng r(11);
  b.tensors.push_back({"alpha", r.normal_tensor({4})});
  b.tensors.push_back({"beta", r.uniform_tensor({2, 2}, -1.0, 1.0)});
  std::stringstream ss;
  write_bundle(ss, b);
  Bundle c = read_bundle(ss);
  CHECK(c.manifest.at("kind") == "demo");
  CHECK(c.manifest.at("n") == 3);
  REQUIRE(c.tensors.size() == 2);
  CHECK(c.tensors[0].first == "alpha");
  CHECK(bitwise_equal(c.get("alpha"), b.get("alpha")));
  CHECK(bitwise_equal(c.get("beta"), b.get("beta")));
  CHECK_THROWS_AS(c.get("gamma"), std::runtime_error);
}

TEST_CASE("content hash tracks data changes") {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = Tensor::vector({1, 2, 4});
  auto h = [](const Tensor& t) { return content_hash({{"t", t}}); };
  CHECK(h(a) == h(a));
  CHECK(h(a) != h(b));
}

TEST_CASE("tape gradients for a scalar composite") {
  // f(x, y) = sum(x * y) + 2 * sum(x): df/dx = y + 2, df/dy = x.
  Tape tape;
  TapeScope scope(tape);
  Var x = watch(Tensor::vector({1.0, -2.0, 3.0}));
  Var y = watch(Tensor::vector({0.5, 4.0, -1.0}));
  Var f = ops::add(ops::sum(ops::mul(x, y)), ops::scale(ops::sum(x), 2.0));
  auto g = tape.gradients(f.node, Tensor::scalar(1.0));
  Tensor gx = g[static_cast<std::size_t>(x.node)];
  Tensor gy = g[static_cast<std::size_t>(y.node)];
  CHECK(max_abs_diff(gx, Tensor::vector({2.5, 6.0, 1.0})) < 1e-14);
  CHECK(max_abs_diff(gy, Tensor::vector({1.0, -2.0, 3.0})) < 1e-14);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  Tape tape;
  TapeScope scope(tape);
  Var x = watch(Tensor::vector({3.0}));
  Var y = ops::mul(x, x);  // d/dx = 2x
  Var f = ops::add(y, y);  // d/dx = 4x
  auto g = tape.gradients(f.node, Tensor::scalar(1.0));
  CHECK(g[static_cast<std::size_t>(x.node)].at(0) == doctest::Approx(12.0).epsilon(1e-14));
}

TEST_CASE("tape scopes do not nest and ops without a tape are untracked") {
  Tape outer;
  TapeScope scope(outer);
  CHECK_THROWS([] {
    Tape inner;
    TapeScope bad(inner);
  }());
  Var c = ops::add(constant(Tensor::scalar(1.0)), constant(Tensor::scalar(2.0)));
  (void)c;
}

TEST_CASE("untracked ops outside any tape") {
  Var z = ops::mul(constant(Tensor::vector({2, 3})), constant(Tensor::vector({4, 5})));
  CHECK(z.node == -1);
  CHECK(max_abs_diff(z.value, Tensor::vector({8, 15})) == 0.0);
}

TEST_CASE("softmax of a zero row is uniform") {
  Var y = ops::softmax_rows(constant(Tensor::matrix(1, 3, {0, 0, 0})));
  CHECK(max_abs_diff(y.value, Tensor::matrix(1, 3, {1.0 / 3, 1.0 / 3, 1.0 / 3})) < 1e-15);
}

TEST_CASE("softmax of a single logit is one") {
  Var y = ops::softmax_rows(constant(Tensor::matrix(1, 1, {5.0})));
  CHECK(y.value.at(0) == 1.0);
}

TEST_CASE("softmax of log-integer logits recovers the ratios") {
  Tensor logits = Tensor::matrix(1, 3, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Var y = ops::softmax_rows(constant(logits));
  CHECK(max_abs_diff(y.value, Tensor::matrix(1, 3, {1.0 / 6, 2.0 / 6, 3.0 / 6})) < 1e-12);
}

TEST_CASE("softmax rows sum to one and shifting logits changes nothing") {
  Prng r(17);
  Tensor m = r.normal_tensor({5, 8}, 3.0);
  Var y = ops::softmax_rows(constant(m));
  for (std::int64_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < 8; ++j) s += y.value.at(i * 8 + j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  std::vector<double> shifted(m.data(), m.data() + m.size());
  for (std::int64_t i = 0; i < 5; ++i)
    for (std::int64_t j = 0; j < 8; ++j) shifted[static_cast<std::size_t>(i * 8 + j)] += 100.0 * (i + 1);
  Var y2 = ops::softmax_rows(constant(Tensor({5, 8}, std::move(shifted))));
  CHECK(max_abs_diff(y.value, y2.value) < 1e-12);
}

TEST_CASE("softmax stays finite for extreme logits") {
  Var y = ops::softmax_rows(constant(Tensor::matrix(1, 3, {1000.0, -1000.0, 999.0})));
  CHECK(y.value.all_finite());
  CHECK(y.value.at(0) > y.value.at(2));
  CHECK(y.value.at(1) < 1e-300);
}

TEST_CASE("bilinear sample at a corner returns the corner pixel") {
  // 1x2x2 map, pixels row-major: (y0: 1 2, y1: 3 4).
  Var map = constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  Var pts = constant(Tensor::matrix(4, 2, {-1, -1, 1, -1, -1, 1, 1, 1}));
  Var out = ops::bilinear_sample(map, pts);
  CHECK(max_abs_diff(out.value, Tensor::matrix(4, 1, {1, 2, 3, 4})) == 0.0);
}

TEST_CASE("bilinear sample at the center of a 2x2 map averages all pixels") {
  Var map = constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  Var out = ops::bilinear_sample(map, constant(Tensor::matrix(1, 2, {0, 0})));
  CHECK(out.value.at(0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("bilinear sample matches the four-corner formula on random points") {
  Prng r(23);
  const std::int64_t C = 3, H = 5, W = 7;
  Tensor map = r.normal_tensor({C, H, W});
  std::vector<double> pd(50 * 2);
  for (auto& v : pd) v = r.uniform(-1.0, 1.0);
  Tensor pts({50, 2}, std::move(pd));
  Var out = ops::bilinear_sample(constant(map), constant(pts));
  for (std::int64_t i = 0; i < 50; ++i) {
    double u = (pts.at(i * 2) + 1.0) * 0.5 * (W - 1);
    double v = (pts.at(i * 2 + 1) + 1.0) * 0.5 * (H - 1);
    auto x0 = static_cast<std::int64_t>(std::floor(u));
    auto y0 = static_cast<std::int64_t>(std::floor(v));
    x0 = std::min(x0, W - 2);
    y0 = std::min(y0, H - 2);
    double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
    for (std::int64_t c = 0; c < C; ++c) {
      auto px = [&](std::int64_t y, std::int64_t x) { return map.at((c * H + y) * W + x); };
      double want = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                    fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
      CHECK(std::abs(out.value.at(i * C + c) - want) < 1e-12);
    }
  }
}

TEST_CASE("bilinear sample clamps points outside the square to the edge") {
  Var map = constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  Var out = ops::bilinear_sample(map, constant(Tensor::matrix(3, 2, {-5, -5, 5, 5, 0, -9})));
  CHECK(out.value.at(0) == 1.0);
  CHECK(out.value.at(1) == 4.0);
  CHECK(out.value.at(2) == 1.5);  // midway along the top edge
}

TEST_CASE("bilinear sample hits pixel centers exactly") {
  Prng r(31);
  const std::int64_t H = 4, W = 6;
  Tensor map = r.normal_tensor({2, H, W});
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j) {
      double x = 2.0 * static_cast<double>(j) / (W - 1) - 1.0;
      double y = 2.0 * static_cast<double>(i) / (H - 1) - 1.0;
      Var out = ops::bilinear_sample(constant(map), constant(Tensor::matrix(1, 2, {x, y})));
      for (std::int64_t c = 0; c < 2; ++c)
        CHECK(std::abs(out.value.at(c) - map.at((c * H + i) * W + j)) < 1e-12);
    }
}

TEST_CASE("linear with identity weights is a copy") {
  Var w = constant(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Var b = constant(Tensor::zeros({3}));
  Var x = constant(Tensor::vector({4, -5, 6}));
  CHECK(max_abs_diff(ops::linear(w, b, x).value, x.value) == 0.0);
}

TEST_CASE("linear with zero weights returns the bias") {
  Var w = constant(Tensor::zeros({2, 3}));
  Var b = constant(Tensor::vector({7, -8}));
  Var x = constant(Tensor::vector({1, 2, 3}));
  CHECK(max_abs_diff(ops::linear(w, b, x).value, b.value) == 0.0);
}

TEST_CASE("linear matches an explicit double loop") {
  Prng r(41);
  Tensor w = r.normal_tensor({4, 3});
  Tensor b = r.normal_tensor({4});
  Tensor x = r.normal_tensor({3});
  Var y = ops::linear(constant(w), constant(b), constant(x));
  for (std::int64_t i = 0; i < 4; ++i) {
    double acc = b.at(i);
    for (std::int64_t j = 0; j < 3; ++j) acc += w.at(i * 3 + j) * x.at(j);
    CHECK(std::abs(y.value.at(i) - acc) < 1e-12);
  }
}

TEST_CASE("batched linear applies the same map to every row") {
  Prng r(43);
  Tensor w = r.normal_tensor({4, 3});
  Tensor b = r.normal_tensor({4});
  Tensor xs = r.normal_tensor({5, 3});
  Var y = ops::linear(constant(w), constant(b), constant(xs));
  REQUIRE(y.value.dims() == std::vector<std::int64_t>{5, 4});
  for (std::int64_t i = 0; i < 5; ++i) {
    Var xi = ops::linear(constant(w), constant(b),
                         constant(Tensor::vector({xs.at(i * 3), xs.at(i * 3 + 1), xs.at(i * 3 + 2)})));
    for (std::int64_t j = 0; j < 4; ++j)
      CHECK(std::abs(y.value.at(i * 4 + j) - xi.value.at(j)) <= 1e-12);
  }
}

TEST_CASE("sum reduces left to right") {
  // Fixed reduction order keeps results reproducible across runs and thread
  // counts; verify against an explicit sequential accumulation.
  Prng r(53);
  Tensor x = r.uniform_tensor({257}, 0.0, 1.0);
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x.at(i);
  CHECK(ops::sum(constant(x)).value.at(0) == acc);
}

TEST_CASE("norm2 is the euclidean norm of the flat buffer") {
  Var y = ops::norm2(constant(Tensor::matrix(2, 2, {3, 0, 0, 4})));
  CHECK(y.value.at(0) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("average of constants is the elementwise mean") {
  std::vector<Var> xs = {constant(Tensor::vector({1, 2})), constant(Tensor::vector({3, 6}))};
  CHECK(max_abs_diff(ops::average(xs).value, Tensor::vector({2, 4})) == 0.0);
}

TEST_CASE("matmul transpose and concat_cols agree with Eigen style oracles") {
  Prng r(61);
  Tensor a = r.normal_tensor({3, 4});
  Tensor b = r.normal_tensor({4, 2});
  Var y = ops::matmul(constant(a), constant(b));
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < 4; ++k) acc += a.at(i * 4 + k) * b.at(k * 2 + j);
      CHECK(std::abs(y.value.at(i * 2 + j) - acc) < 1e-12);
    }
  Var t = ops::transpose(constant(a));
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t j = 0; j < 4; ++j) CHECK(t.value.at(j * 3 + i) == a.at(i * 4 + j));
  Var cc = ops::concat_cols(constant(a), constant(a));
  REQUIRE(cc.value.dims() == std::vector<std::int64_t>{3, 8});
  CHECK(cc.value.at(0 * 8 + 5) == a.at(0 * 4 + 1));
}
