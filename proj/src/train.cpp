#include "staf/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "staf/prng.hpp"

namespace staf {

namespace {

Tensor frame_map(const SequenceData& seq, std::int64_t t) {
  const auto c = seq.phi0.dim(1), h = seq.phi0.dim(2), w = seq.phi0.dim(3);
  const auto len = c * h * w;
  std::vector<double> d(seq.phi0.data() + t * len, seq.phi0.data() + (t + 1) * len);
  return Tensor({c, h, w}, std::move(d));
}

Var stage_loss(const StafModel& model, const Var& theta, const FrameAnnotation& ann,
               const LossWeights& lw) {
  BodyVars body = body_forward(model.tmpl, theta);
  Var joints_mm = ops::scale(body.joints, 1000.0);
  return loss_total(theta, joints_mm, body.joints2d, ann, lw);
}

Var window_loss(const StafModel& model, const ModelVars& mv, const std::vector<Tensor>& window,
                const FrameAnnotation& ann, const TrainConfig& cfg) {
  StafOutput out = staf_forward(window, model, mv, cfg.apm_enabled);
  const auto target = static_cast<std::size_t>((model.T - 1) / 2);
  Var loss = stage_loss(model, out.theta3, ann, cfg.lw);
  if (cfg.aux_weight > 0) {
    Var aux = ops::add(stage_loss(model, out.theta1[target], ann, cfg.lw),
                       stage_loss(model, out.theta2, ann, cfg.lw));
    loss = ops::add(loss, ops::scale(aux, cfg.aux_weight));
  }
  return loss;
}

}  // namespace

TrainReport train_overfit(StafModel& model, const SequenceData& seq, const TrainConfig& cfg) {
  require(cfg.steps >= 0, "step count must be nonnegative");
  require(cfg.lr >= 0, "learning rate must be nonnegative");
  require(cfg.patience >= 1, "patience must be positive");
  cfg.lw.validate();
  require(seq.template_hash == model.tmpl.hash(), "sequence was generated for another template");

  const auto L = seq.length();
  std::vector<std::vector<Tensor>> windows;
  std::vector<FrameAnnotation> anns;
  windows.reserve(static_cast<std::size_t>(L));
  for (std::int64_t t = 0; t < L; ++t) {
    std::vector<Tensor> w;
    for (auto i : window_indices(t, L, model.T)) w.push_back(frame_map(seq, i));
    windows.push_back(std::move(w));
    anns.push_back(annotation_for_frame(seq, model.tmpl, t));
  }

  TrainReport report;
  double lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  std::int64_t since_improve = 0;

  for (std::int64_t step = 0; step <= cfg.steps; ++step) {
    Tape tape;
    TapeScope scope(tape);
    std::vector<std::int32_t> nodes;
    ModelVars mv = watch_model(model, &nodes);
    std::vector<Var> losses;
    losses.reserve(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i)
      losses.push_back(window_loss(model, mv, windows[i], anns[i], cfg));
    Var total = ops::average(losses);
    const double loss = total.value.at(0);
    report.losses.push_back(loss);
    if (!std::isfinite(loss)) {
      report.aborted_step = step;
      break;
    }
    if (cfg.stop_loss_frac > 0 && loss < cfg.stop_loss_frac * report.losses.front()) break;
    if (step == cfg.steps) break;

    if (loss < best * (1.0 - cfg.min_rel_improve)) {
      best = loss;
      since_improve = 0;
    } else if (++since_improve >= cfg.patience) {
      lr *= 0.1;
      since_improve = 0;
    }
    report.lr_trace.push_back(lr);

    std::vector<Tensor> grads = tape.gradients(total.node, Tensor::scalar(1.0));
    std::size_t k = 0;
    visit_weights(model, [&](const std::string&, Tensor& t) {
      const Tensor& g = grads[static_cast<std::size_t>(nodes[k++])];
      std::vector<double> next(static_cast<std::size_t>(t.size()));
      for (std::int64_t i = 0; i < t.size(); ++i) next[static_cast<std::size_t>(i)] = t.at(i) - lr * g.at(i);
      t = Tensor(t.dims(), std::move(next));
    });
  }
  return report;
}

double sequence_mpjpe(const StafModel& model, const SequenceData& seq, bool apm_enabled,
                      int threads) {
  Tensor theta = run_sequence(sequence_frames(seq), model, apm_enabled, threads);
  Tensor pred = joints_mm_from_params(model, theta);
  std::vector<double> gt(seq.joints.data(), seq.joints.data() + seq.joints.size());
  for (double& v : gt) v *= 1000.0;
  auto per_frame = mpjpe_frames(pred, Tensor(seq.joints.dims(), std::move(gt)));
  double acc = 0;
  for (double v : per_frame) acc += v;
  return acc / static_cast<double>(per_frame.size());
}

std::vector<Tensor> sequence_frames(const SequenceData& seq) {
  std::vector<Tensor> frames;
  frames.reserve(static_cast<std::size_t>(seq.length()));
  for (std::int64_t t = 0; t < seq.length(); ++t) frames.push_back(frame_map(seq, t));
  return frames;
}

Tensor joints_mm_from_params(const StafModel& model, const Tensor& theta_rows) {
  require(theta_rows.rank() == 2 && theta_rows.dim(1) == model.dim(),
          "parameter rows must be {L,D}");
  const auto L = theta_rows.dim(0);
  const auto j = model.tmpl.joints();
  std::vector<double> out(static_cast<std::size_t>(L * j * 3));
  for (std::int64_t t = 0; t < L; ++t) {
    std::vector<double> row(theta_rows.data() + t * model.dim(),
                            theta_rows.data() + (t + 1) * model.dim());
    BodyVars body = body_forward(model.tmpl, constant(Tensor({model.dim()}, std::move(row))));
    const Tensor& jm = body.joints.value;
    for (std::int64_t i = 0; i < j * 3; ++i)
      out[static_cast<std::size_t>(t * j * 3 + i)] = jm.at(i) * 1000.0;
  }
  return Tensor({L, j, 3}, std::move(out));
}

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty list");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

AblateResult ablate_apm(const PyramidConfig& pc, const TemplateConfig& tcfg, std::int64_t T,
                        const SynthSpec& base, std::int64_t n_seeds, const ModelInit& mi,
                        int threads) {
  require(n_seeds >= 2, "need at least two seeds");
  AblateResult res;
  res.seeds.resize(static_cast<std::size_t>(n_seeds));
  res.accel_on.resize(static_cast<std::size_t>(n_seeds));
  res.accel_off.resize(static_cast<std::size_t>(n_seeds));
  Prng root = Prng(base.seed).stream("ablate");

  auto run_seed = [&](std::int64_t i) {
    const std::uint64_t seed = root.stream(static_cast<std::uint64_t>(i)).next_u64();
    res.seeds[static_cast<std::size_t>(i)] = seed;
    BodyTemplate tmpl = make_mini_template(tcfg, Prng(seed).stream("template").next_u64());
    SynthSpec spec = base;
    spec.seed = seed;
    SequenceData seq = generate_synthetic(spec, tmpl, pc);
    StafModel model = init_model(pc, tmpl, T, Prng(seed).stream("model").next_u64(), mi);
    std::vector<double> gt(seq.joints.data(), seq.joints.data() + seq.joints.size());
    for (double& v : gt) v *= 1000.0;
    Tensor gt_mm(seq.joints.dims(), std::move(gt));
    auto frames = sequence_frames(seq);
    for (bool on : {true, false}) {
      Tensor theta = run_sequence(frames, model, on);
      Tensor pred = joints_mm_from_params(model, theta);
      auto accel = accel_frames(pred, gt_mm);
      double acc = 0;
      for (double v : accel) acc += v;
      const double mean = acc / static_cast<double>(accel.size());
      (on ? res.accel_on : res.accel_off)[static_cast<std::size_t>(i)] = mean;
    }
  };

  if (threads <= 1) {
    for (std::int64_t i = 0; i < n_seeds; ++i) run_seed(i);
  } else {
    const auto k = std::min<std::int64_t>(threads, n_seeds);
    std::vector<std::thread> pool;
    for (std::int64_t w = 0; w < k; ++w) {
      pool.emplace_back([&, w]() {
        for (std::int64_t i = w * n_seeds / k; i < (w + 1) * n_seeds / k; ++i) run_seed(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  res.median_on = median(res.accel_on);
  res.median_off = median(res.accel_off);
  return res;
}

}  // namespace staf
