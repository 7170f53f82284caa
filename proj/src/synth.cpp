#include "staf/synth.hpp"

#include <cmath>
#include <thread>

#include "staf/prng.hpp"

namespace staf {

void SynthSpec::validate() const {
  require(length >= 1, "sequence length must be positive");
  require(keyframes >= 1, "need at least one keyframe");
  require(pose_amp >= 0 && shape_amp >= 0 && cam_jitter >= 0, "amplitudes must be nonnegative");
  require(noise_sigma >= 0, "noise sigma must be nonnegative");
}

StubEncoder::StubEncoder(const PyramidConfig& pc, std::int64_t param_len, std::uint64_t seed,
                         double noise_sigma)
    : pc_(pc), noise_sigma_(noise_sigma), seed_(seed) {
  pc.validate();
  require(param_len >= 1, "parameter length must be positive");
  require(noise_sigma >= 0, "noise sigma must be nonnegative");
  const auto rows = pc.C0 * pc.H0 * pc.W0;
  const double a = 1.0 / std::sqrt(static_cast<double>(param_len + 4));
  w_ = Prng(seed).stream("encoder").uniform_tensor({rows, param_len + 4}, -a, a);
}

Tensor StubEncoder::encode(const Tensor& theta, std::int64_t t, std::int64_t length) const {
  require(theta.rank() == 1 && theta.size() == w_.dim(1) - 4,
          "parameter vector length mismatch, got " + dims_str(theta));
  require(theta.all_finite(), "parameters must be finite");
  require(t >= 0 && t < length, "frame index out of range");
  const auto in = w_.dim(1);
  std::vector<double> x(static_cast<std::size_t>(in));
  std::copy(theta.data(), theta.data() + theta.size(), x.begin());
  const double phase = 2.0 * M_PI * static_cast<double>(t) / static_cast<double>(length);
  x[static_cast<std::size_t>(in - 4)] = std::sin(phase);
  x[static_cast<std::size_t>(in - 3)] = std::cos(phase);
  x[static_cast<std::size_t>(in - 2)] = std::sin(2.0 * phase);
  x[static_cast<std::size_t>(in - 1)] = std::cos(2.0 * phase);

  const auto rows = w_.dim(0);
  std::vector<double> y(static_cast<std::size_t>(rows));
  Eigen::Map<Eigen::VectorXd>(y.data(), rows).noalias() =
      w_.mat() * Eigen::Map<const Eigen::VectorXd>(x.data(), in);
  if (noise_sigma_ > 0) {
    Prng frame = Prng(seed_).stream("noise").stream(static_cast<std::uint64_t>(t));
    for (double& v : y) v += noise_sigma_ * frame.normal();
  }
  Tensor out({pc_.C0, pc_.H0, pc_.W0}, std::move(y));
  require(out.all_finite(), "encoder output must be finite");
  return out;
}

Tensor catmull_rom(const std::vector<Tensor>& keys, double u) {
  require(!keys.empty(), "need at least one control row");
  const auto k = static_cast<std::int64_t>(keys.size());
  if (k == 1) return keys[0];
  require(u >= 0 && u <= static_cast<double>(k - 1), "interpolation parameter out of range");
  auto i = static_cast<std::int64_t>(std::floor(u));
  if (i > k - 2) i = k - 2;
  const double s = u - static_cast<double>(i);
  const Tensor& p0 = keys[static_cast<std::size_t>(std::max<std::int64_t>(i - 1, 0))];
  const Tensor& p1 = keys[static_cast<std::size_t>(i)];
  const Tensor& p2 = keys[static_cast<std::size_t>(i + 1)];
  const Tensor& p3 = keys[static_cast<std::size_t>(std::min<std::int64_t>(i + 2, k - 1))];
  require(p0.same_dims(p1) && p1.same_dims(p2) && p2.same_dims(p3),
          "control rows must share a shape");
  std::vector<double> out(static_cast<std::size_t>(p1.size()));
  for (std::int64_t j = 0; j < p1.size(); ++j) {
    // Difference form of the uniform spline: the base value never passes
    // through the polynomial terms, so constant keys interpolate bit exactly.
    const double d0 = p1.at(j) - p0.at(j), d1 = p2.at(j) - p1.at(j), d2 = p3.at(j) - p2.at(j);
    out[static_cast<std::size_t>(j)] =
        p1.at(j) + 0.5 * s *
                       ((d0 + d1) + s * ((3.0 * d1 - 2.0 * d0 - d2) + s * (d0 - 2.0 * d1 + d2)));
  }
  return Tensor(p1.dims(), std::move(out));
}

BodyTemplate template_for_spec(const SynthSpec& spec, const TemplateConfig& tcfg) {
  return make_mini_template(tcfg, Prng(spec.seed).stream("template").next_u64());
}

SequenceData generate_synthetic(const SynthSpec& spec, const BodyTemplate& tmpl,
                                const PyramidConfig& pc, int threads) {
  spec.validate();
  tmpl.validate();
  pc.validate();
  const auto L = spec.length;
  const auto joints = tmpl.joints();
  const auto nt = 3 * joints;
  const auto d = param_dim(joints);

  Prng root(spec.seed);
  Tensor beta = root.stream("shape").uniform_tensor({10}, -spec.shape_amp, spec.shape_amp);
  Prng kf_root = root.stream("keyframes");
  std::vector<Tensor> keys;
  keys.reserve(static_cast<std::size_t>(spec.keyframes));
  for (std::int64_t k = 0; k < spec.keyframes; ++k) {
    Prng kf = kf_root.stream(static_cast<std::uint64_t>(k));
    BodyParams p;
    p.theta = kf.uniform_tensor({nt}, -spec.pose_amp, spec.pose_amp);
    p.beta = beta;
    p.cam_s = 1.0 + kf.uniform(-spec.cam_jitter, spec.cam_jitter);
    p.cam_t = kf.uniform_tensor({2}, -spec.cam_jitter, spec.cam_jitter);
    keys.push_back(flatten_params(p));
  }

  StubEncoder enc(pc, d, spec.seed, spec.noise_sigma);
  const auto n = tmpl.verts();
  const auto map_len = pc.C0 * pc.H0 * pc.W0;
  std::vector<double> theta_all(static_cast<std::size_t>(L * d));
  std::vector<double> phi_all(static_cast<std::size_t>(L * map_len));
  std::vector<double> joints_all(static_cast<std::size_t>(L * joints * 3));
  std::vector<double> verts_all(static_cast<std::size_t>(L * n * 3));

  auto work = [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t t = begin; t < end; ++t) {
      const double u = (L == 1) ? 0.0
                                : static_cast<double>(t) * static_cast<double>(spec.keyframes - 1) /
                                      static_cast<double>(L - 1);
      Tensor theta = catmull_rom(keys, u);
      BodyVars body = body_forward(tmpl, constant(theta));
      Tensor phi = enc.encode(theta, t, L);
      std::copy(theta.data(), theta.data() + d, theta_all.begin() + t * d);
      std::copy(phi.data(), phi.data() + map_len, phi_all.begin() + t * map_len);
      const Tensor& j = body.joints.value;
      std::copy(j.data(), j.data() + joints * 3, joints_all.begin() + t * joints * 3);
      const Tensor& v = body.vertices.value;
      std::copy(v.data(), v.data() + n * 3, verts_all.begin() + t * n * 3);
    }
  };
  if (threads <= 1) {
    work(0, L);
  } else {
    const auto k = std::min<std::int64_t>(threads, L);
    std::vector<std::thread> pool;
    for (std::int64_t i = 0; i < k; ++i) pool.emplace_back(work, i * L / k, (i + 1) * L / k);
    for (auto& th : pool) th.join();
  }

  SequenceData seq;
  seq.spec = spec;
  seq.tcfg = TemplateConfig{n, joints - 1, tmpl.down_verts()};
  seq.template_hash = tmpl.hash();
  seq.theta_gt = Tensor({L, d}, std::move(theta_all));
  seq.phi0 = Tensor({L, pc.C0, pc.H0, pc.W0}, std::move(phi_all));
  seq.joints = Tensor({L, joints, 3}, std::move(joints_all));
  seq.vertices = Tensor({L, n, 3}, std::move(verts_all));
  return seq;
}

void save_sequence(const std::string& path, const SequenceData& seq) {
  Bundle b;
  b.manifest["kind"] = "staf_sequence";
  b.manifest["L"] = seq.length();
  b.manifest["template_hash"] = seq.template_hash;
  b.manifest["spec"] = {{"length", seq.spec.length},       {"keyframes", seq.spec.keyframes},
                        {"pose_amp", seq.spec.pose_amp},   {"shape_amp", seq.spec.shape_amp},
                        {"cam_jitter", seq.spec.cam_jitter}, {"noise_sigma", seq.spec.noise_sigma},
                        {"seed", seq.spec.seed}};
  b.manifest["template"] = {{"N", seq.tcfg.N}, {"J", seq.tcfg.J}, {"Nd", seq.tcfg.Nd}};
  b.tensors.emplace_back("theta_gt", seq.theta_gt);
  b.tensors.emplace_back("phi0", seq.phi0);
  b.tensors.emplace_back("joints", seq.joints);
  b.tensors.emplace_back("vertices", seq.vertices);
  save_bundle(path, b);
}

SequenceData load_sequence(const std::string& path) {
  Bundle b = load_bundle(path);
  require(b.manifest.value("kind", std::string()) == "staf_sequence",
          "not a sequence file: " + path);
  SequenceData seq;
  const auto& sp = b.manifest["spec"];
  seq.spec.length = sp["length"].get<std::int64_t>();
  seq.spec.keyframes = sp["keyframes"].get<std::int64_t>();
  seq.spec.pose_amp = sp["pose_amp"].get<double>();
  seq.spec.shape_amp = sp["shape_amp"].get<double>();
  seq.spec.cam_jitter = sp["cam_jitter"].get<double>();
  seq.spec.noise_sigma = sp["noise_sigma"].get<double>();
  seq.spec.seed = sp["seed"].get<std::uint64_t>();
  const auto& tc = b.manifest["template"];
  seq.tcfg = TemplateConfig{tc["N"].get<std::int64_t>(), tc["J"].get<std::int64_t>(),
                            tc["Nd"].get<std::int64_t>()};
  seq.template_hash = b.manifest["template_hash"].get<std::uint64_t>();
  seq.theta_gt = b.get("theta_gt");
  seq.phi0 = b.get("phi0");
  seq.joints = b.get("joints");
  seq.vertices = b.get("vertices");
  require(seq.length() == b.manifest["L"].get<std::int64_t>(), "frame count mismatch in " + path);
  return seq;
}

FrameAnnotation annotation_for_frame(const SequenceData& seq, const BodyTemplate& tmpl,
                                     std::int64_t t) {
  require(t >= 0 && t < seq.length(), "frame index out of range");
  const auto d = seq.theta_gt.dim(1);
  const auto joints = seq.joints.dim(1);
  std::vector<double> th(seq.theta_gt.data() + t * d, seq.theta_gt.data() + (t + 1) * d);
  Tensor theta({d}, std::move(th));
  std::vector<double> jm(seq.joints.data() + t * joints * 3,
                         seq.joints.data() + (t + 1) * joints * 3);
  Tensor joints_m({joints, 3}, std::move(jm));

  FrameAnnotation ann;
  ann.gt_theta = theta;
  std::vector<double> mm(joints_m.data(), joints_m.data() + joints_m.size());
  for (double& v : mm) v *= 1000.0;
  ann.gt_joints3d = Tensor({joints, 3}, std::move(mm));
  BodyParams p = unflatten_params(theta, tmpl.joints());
  ann.gt_joints2d = project_weak_perspective(joints_m, p.cam_s, p.cam_t);
  return ann;
}

}  // namespace staf
