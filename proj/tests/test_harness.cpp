#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "staf/cli.hpp"
#include "staf/prng.hpp"
#include "staf/synth.hpp"
#include "staf/train.hpp"
#include "test_util.hpp"

using namespace staf;
using test::bitwise_equal;
using test::max_abs_diff;

namespace {

SynthSpec tiny_spec(std::uint64_t seed, std::int64_t length = 12) {
  SynthSpec s;
  s.length = length;
  s.keyframes = 3;
  s.seed = seed;
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(std::vector<std::string> args) {
  std::vector<char*> argv;
  args.insert(args.begin(), "staf");
  argv.reserve(args.size());
  for (auto& a : args) argv.push_back(a.data());
  return cli_run(static_cast<int>(argv.size()), argv.data());
}

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("zero amplitudes yield a static ground truth") {
  SynthSpec spec = tiny_spec(3, 10);
  spec.pose_amp = 0.0;
  spec.cam_jitter = 0.0;
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData seq = generate_synthetic(spec, tmpl, desk_scale_config());
  const auto d = seq.theta_gt.dim(1);
  for (std::int64_t t = 1; t < seq.length(); ++t)
    for (std::int64_t k = 0; k < d; ++k) CHECK(seq.theta_gt.at(t * d + k) == seq.theta_gt.at(k));
  const auto jn = seq.joints.dim(1) * 3;
  for (std::int64_t t = 1; t < seq.length(); ++t)
    for (std::int64_t k = 0; k < jn; ++k) CHECK(seq.joints.at(t * jn + k) == seq.joints.at(k));
  // A static clip carries no acceleration signal at all.
  for (double v : accel_frames(seq.joints, seq.joints, 0.0, true)) CHECK(v == 0.0);
}

TEST_CASE("generation is deterministic and thread count invariant") {
  SynthSpec spec = tiny_spec(17);
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData a = generate_synthetic(spec, tmpl, desk_scale_config(), 1);
  SequenceData b = generate_synthetic(spec, tmpl, desk_scale_config(), 4);
  CHECK(bitwise_equal(a.theta_gt, b.theta_gt));
  CHECK(bitwise_equal(a.phi0, b.phi0));
  CHECK(bitwise_equal(a.joints, b.joints));
  CHECK(bitwise_equal(a.vertices, b.vertices));

  auto p1 = tmp("staf_seq_a.bin"), p2 = tmp("staf_seq_b.bin");
  save_sequence(p1.string(), a);
  save_sequence(p2.string(), b);
  CHECK(read_file(p1) == read_file(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("clamped endpoint interpolation reproduces constants and keys") {
  std::vector<Tensor> keys = {Tensor::vector({2.0}), Tensor::vector({2.0}), Tensor::vector({2.0})};
  for (double u : {0.0, 0.3, 1.0, 1.7, 2.0}) CHECK(catmull_rom(keys, u).at(0) == 2.0);
  std::vector<Tensor> ramp = {Tensor::vector({0.0}), Tensor::vector({1.0}), Tensor::vector({4.0})};
  CHECK(catmull_rom(ramp, 0.0).at(0) == 0.0);
  CHECK(catmull_rom(ramp, 1.0).at(0) == 1.0);
  CHECK(catmull_rom(ramp, 2.0).at(0) == 4.0);
}

TEST_CASE("frame spacing second differences match the spline curvature") {
  // Inside one cubic segment the central second difference at spacing h
  // equals h^2 times the second derivative exactly; estimate the derivative
  // with a much finer stencil and compare.
  Prng r(521);
  std::vector<Tensor> keys;
  for (int k = 0; k < 4; ++k) keys.push_back(r.stream(k).normal_tensor({3}));
  const double h = 0.125;
  for (double u : {0.4, 1.3, 2.5}) {
    Tensor lo = catmull_rom(keys, u - h), mid = catmull_rom(keys, u), hi = catmull_rom(keys, u + h);
    const double fine = 1e-4;
    Tensor flo = catmull_rom(keys, u - fine), fhi = catmull_rom(keys, u + fine);
    for (std::int64_t c = 0; c < 3; ++c) {
      double coarse = (hi.at(c) - 2 * mid.at(c) + lo.at(c)) / (h * h);
      double oracle = (fhi.at(c) - 2 * mid.at(c) + flo.at(c)) / (fine * fine);
      CHECK(std::abs(coarse - oracle) < 1e-6);
    }
  }
}

TEST_CASE("generated pose trajectories respect the interpolation bound") {
  // Keys are bounded by pose_amp and the spline's second derivative by
  // 36*pose_amp, so frame second differences stay under 36*amp*h^2.
  SynthSpec spec = tiny_spec(29, 40);
  spec.keyframes = 5;
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData seq = generate_synthetic(spec, tmpl, desk_scale_config());
  const auto d = seq.theta_gt.dim(1);
  const auto pose_len = 3 * tmpl.joints();
  const double h = static_cast<double>(spec.keyframes - 1) / static_cast<double>(spec.length - 1);
  const double bound = 36.0 * spec.pose_amp * h * h * (1.0 + 1e-9);
  for (std::int64_t t = 1; t + 1 < seq.length(); ++t)
    for (std::int64_t k = 0; k < pose_len; ++k) {
      double dd = seq.theta_gt.at((t + 1) * d + k) - 2 * seq.theta_gt.at(t * d + k) +
                  seq.theta_gt.at((t - 1) * d + k);
      CHECK(std::abs(dd) <= bound);
    }
}

TEST_CASE("the encoder is deterministic per frame and varies across frames") {
  PyramidConfig pc = desk_scale_config();
  StubEncoder enc(pc, 37, 77, 0.01);
  Prng r(523);
  Tensor theta = r.normal_tensor({37});
  Tensor a = enc.encode(theta, 3, 12);
  Tensor b = enc.encode(theta, 3, 12);
  CHECK(bitwise_equal(a, b));
  CHECK(!bitwise_equal(a, enc.encode(theta, 4, 12)));
  StubEncoder clean(pc, 37, 77, 0.0);
  CHECK(!bitwise_equal(clean.encode(theta, 3, 12), a));
}

TEST_CASE("sequence files round trip every stored tensor") {
  SynthSpec spec = tiny_spec(31, 8);
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData a = generate_synthetic(spec, tmpl, desk_scale_config());
  auto p = tmp("staf_seq_rt.bin");
  save_sequence(p.string(), a);
  SequenceData b = load_sequence(p.string());
  CHECK(b.template_hash == a.template_hash);
  CHECK(b.spec.length == a.spec.length);
  CHECK(b.spec.seed == a.spec.seed);
  CHECK(b.spec.noise_sigma == a.spec.noise_sigma);
  CHECK(b.tcfg.N == a.tcfg.N);
  CHECK(bitwise_equal(a.theta_gt, b.theta_gt));
  CHECK(bitwise_equal(a.phi0, b.phi0));
  CHECK(bitwise_equal(a.joints, b.joints));
  CHECK(bitwise_equal(a.vertices, b.vertices));
  // Re-serializing the loaded clip yields the same bytes.
  auto p2 = tmp("staf_seq_rt2.bin");
  save_sequence(p2.string(), b);
  CHECK(read_file(p) == read_file(p2));
  std::filesystem::remove(p);
  std::filesystem::remove(p2);
}

TEST_CASE("frame annotations carry the ground truth in metric units") {
  SynthSpec spec = tiny_spec(37, 6);
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData seq = generate_synthetic(spec, tmpl, desk_scale_config());
  FrameAnnotation ann = annotation_for_frame(seq, tmpl, 2);
  REQUIRE(ann.gt_theta.has_value());
  REQUIRE(ann.gt_joints3d.has_value());
  REQUIRE(ann.gt_joints2d.has_value());
  const auto d = seq.theta_gt.dim(1);
  for (std::int64_t k = 0; k < d; ++k) CHECK(ann.gt_theta->at(k) == seq.theta_gt.at(2 * d + k));
  const auto jn = seq.joints.dim(1) * 3;
  for (std::int64_t k = 0; k < jn; ++k)
    CHECK(ann.gt_joints3d->at(k) == doctest::Approx(1000.0 * seq.joints.at(2 * jn + k)).epsilon(1e-15));
  BodyParams p = unflatten_params(*ann.gt_theta, tmpl.joints());
  Tensor j2d = project_weak_perspective(
      Tensor({seq.joints.dim(1), 3},
             std::vector<double>(seq.joints.data() + 2 * jn, seq.joints.data() + 3 * jn)),
      p.cam_s, p.cam_t);
  CHECK(max_abs_diff(*ann.gt_joints2d, j2d) == 0.0);
}

TEST_CASE("a zero learning rate leaves the model untouched") {
  SynthSpec spec = tiny_spec(41, 6);
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData seq = generate_synthetic(spec, tmpl, desk_scale_config());
  StafModel model = init_model(desk_scale_config(), tmpl, 9, 41, desk_model_init());
  std::vector<std::pair<std::string, Tensor>> before;
  visit_weights(model, [&](const std::string& n, const Tensor& t) { before.push_back({n, t}); });
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.lr = 0.0;
  TrainReport rep = train_overfit(model, seq, cfg);
  REQUIRE(rep.losses.size() == 4);
  for (double l : rep.losses) CHECK(l == rep.losses[0]);
  std::vector<std::pair<std::string, Tensor>> after;
  visit_weights(model, [&](const std::string& n, const Tensor& t) { after.push_back({n, t}); });
  CHECK(content_hash(before) == content_hash(after));
}

TEST_CASE("the reported initial loss matches an independent evaluation") {
  SynthSpec spec = tiny_spec(43, 5);
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData seq = generate_synthetic(spec, tmpl, desk_scale_config());
  StafModel model = init_model(desk_scale_config(), tmpl, 9, 43, desk_model_init());
  TrainConfig cfg;
  cfg.steps = 0;
  TrainReport rep = train_overfit(model, seq, cfg);
  REQUIRE(rep.losses.size() == 1);

  ModelVars mv = as_constant(model);
  auto frames = sequence_frames(seq);
  std::vector<Var> losses;
  for (std::int64_t t = 0; t < seq.length(); ++t) {
    std::vector<Tensor> window;
    for (auto i : window_indices(t, seq.length(), model.T)) window.push_back(frames[static_cast<std::size_t>(i)]);
    FrameAnnotation ann = annotation_for_frame(seq, tmpl, t);
    StafOutput out = staf_forward(window, model, mv, cfg.apm_enabled);
    auto stage = [&](const Var& theta) {
      BodyVars body = body_forward(tmpl, theta);
      return loss_total(theta, ops::scale(body.joints, 1000.0), body.joints2d, ann, cfg.lw);
    };
    Var loss = ops::add(stage(out.theta3),
                        ops::scale(ops::add(stage(out.theta1[4]), stage(out.theta2)), cfg.aux_weight));
    losses.push_back(loss);
  }
  double want = ops::average(losses).value.at(0);
  CHECK(std::abs(rep.losses[0] - want) < 1e-12 * std::max(1.0, std::abs(want)));
}

TEST_CASE("training steps reduce the loss on an easy clip") {
  SynthSpec spec = tiny_spec(47, 5);
  spec.noise_sigma = 0.0;
  BodyTemplate tmpl = template_for_spec(spec, {});
  SequenceData seq = generate_synthetic(spec, tmpl, desk_scale_config());
  StafModel model = init_model(desk_scale_config(), tmpl, 9, 47, desk_model_init());
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.lr = 1e-4;
  TrainReport rep = train_overfit(model, seq, cfg);
  REQUIRE(rep.losses.size() == 11);
  CHECK(rep.aborted_step == -1);
  CHECK(rep.losses.back() < rep.losses.front());
}

TEST_CASE("the command line chain generates, infers, and evaluates") {
  auto seq = tmp("staf_cli_seq.bin"), model_out = tmp("staf_cli_model.bin");
  auto pred = tmp("staf_cli_pred.csv"), metrics = tmp("staf_cli_metrics.csv");
  auto curve = tmp("staf_cli_curve.csv");
  CHECK(run_cli({"gen", "--length", "6", "--keyframes", "3", "--seed", "5", "--out",
                 seq.string()}) == 0);
  CHECK(std::filesystem::exists(seq));
  CHECK(run_cli({"train-overfit", "--seq", seq.string(), "--steps", "2", "--lr", "1e-5",
                 "--seed", "5", "--out", model_out.string(), "--curve", curve.string()}) == 0);
  CHECK(run_cli({"infer", "--model", model_out.string(), "--seq", seq.string(), "--out",
                 pred.string()}) == 0);
  CHECK(run_cli({"eval", "--pred", pred.string(), "--gt", seq.string(), "--model",
                 model_out.string(), "--out", metrics.string()}) == 0);
  std::string table = read_file(metrics);
  CHECK(table.rfind("frame,mpjpe,pa_mpjpe,pve,accel\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 7);

  // Self evaluation of the clip against itself reports exact zeros.
  auto self_metrics = tmp("staf_cli_self.csv");
  CHECK(run_cli({"eval", "--pred", seq.string(), "--gt", seq.string(), "--out",
                 self_metrics.string()}) == 0);
  std::istringstream in(read_file(self_metrics));
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.find(",0,0,0,") != std::string::npos);
  }
  CHECK(rows == 6);
  for (auto p : {seq, model_out, pred, metrics, curve, self_metrics}) std::filesystem::remove(p);
}

TEST_CASE("usage and validation failures use distinct exit codes") {
  CHECK(run_cli({"gen", "--no-such-flag"}) == 1);
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"infer", "--model", "/nonexistent/model.bin", "--seq", "/nonexistent/seq.bin",
                 "--out", tmp("staf_cli_nope.csv").string()}) == 2);
  SynthSpec bad;
  bad.length = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
