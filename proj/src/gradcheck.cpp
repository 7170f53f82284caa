#include "staf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "staf/metrics.hpp"
#include "staf/pipeline.hpp"
#include "staf/synth.hpp"
#include "staf/train.hpp"

namespace staf {

namespace {

Tensor perturbed(const Tensor& x, std::int64_t j, double delta) {
  std::vector<double> d(x.data(), x.data() + x.size());
  d[static_cast<std::size_t>(j)] += delta;
  return Tensor(x.dims(), std::move(d));
}

double dot(const Tensor& w, const Tensor& y) {
  double s = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) s += w.at(i) * y.at(i);
  return s;
}

}  // namespace

CheckResult vjp_check(const CheckCase& c, std::uint64_t seed, int trials, double tol) {
  CheckResult res;
  res.name = c.name;
  res.trials = trials;
  Prng root = Prng(seed).stream(c.name);
  for (int trial = 0; trial < trials; ++trial) {
    Prng rng = root.stream(static_cast<std::uint64_t>(trial));
    std::vector<Tensor> inputs = c.make_inputs(rng);

    Tape tape;
    std::vector<std::int32_t> nodes;
    Var y;
    {
      TapeScope scope(tape);
      std::vector<Var> vars;
      vars.reserve(inputs.size());
      for (const Tensor& t : inputs) {
        Var v = watch(t);
        nodes.push_back(v.node);
        vars.push_back(v);
      }
      y = c.run(vars);
    }
    Tensor w = rng.normal_tensor(y.value.dims());
    std::vector<Tensor> grads = tape.gradients(y.node, w);

    auto scalar_at = [&](const std::vector<Tensor>& xs) {
      std::vector<Var> vars;
      vars.reserve(xs.size());
      for (const Tensor& t : xs) vars.push_back(constant(t));
      return dot(w, c.run(vars).value);
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor& x = inputs[k];
      const Tensor& g = grads[static_cast<std::size_t>(nodes[k])];
      std::vector<std::int64_t> coords;
      if (c.probe_cap <= 0 || x.size() <= c.probe_cap) {
        for (std::int64_t j = 0; j < x.size(); ++j) coords.push_back(j);
      } else {
        Prng pick = rng.stream("probe").stream(static_cast<std::uint64_t>(k));
        for (std::int64_t j = 0; j < c.probe_cap; ++j) coords.push_back(pick.index(x.size()));
      }
      for (auto j : coords) {
        const double h = 1e-6 * (1.0 + std::abs(x.at(j)));
        std::vector<Tensor> xs = inputs;
        xs[k] = perturbed(x, j, h);
        const double sp = scalar_at(xs);
        xs[k] = perturbed(x, j, -h);
        const double sm = scalar_at(xs);
        const double numeric = (sp - sm) / (2.0 * h);
        const double analytic = g.at(j);
        const double rel = std::abs(analytic - numeric) /
                           std::max({1.0, std::abs(analytic), std::abs(numeric)});
        res.max_rel = std::max(res.max_rel, rel);
      }
    }
  }
  res.passed = res.max_rel < tol;
  return res;
}

namespace {

LinearVars lin2(const std::vector<Var>& v, std::size_t i) { return LinearVars{v[i], v[i + 1]}; }

CheckCase simple(std::string name, std::function<std::vector<Tensor>(Prng&)> make,
                 std::function<Var(const std::vector<Var>&)> run, std::int64_t cap = 0) {
  CheckCase c;
  c.name = std::move(name);
  c.make_inputs = std::move(make);
  c.run = std::move(run);
  c.probe_cap = cap;
  return c;
}

Tensor nrm(Prng& r, std::vector<std::int64_t> dims) { return r.normal_tensor(std::move(dims)); }

}  // namespace

std::vector<CheckCase> gradient_suite() {
  std::vector<CheckCase> cases;

  cases.push_back(simple(
      "add", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {3, 4})}; },
      [](const std::vector<Var>& v) { return ops::add(v[0], v[1]); }));
  cases.push_back(simple(
      "sub", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {3, 4})}; },
      [](const std::vector<Var>& v) { return ops::sub(v[0], v[1]); }));
  cases.push_back(simple(
      "mul", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {3, 4})}; },
      [](const std::vector<Var>& v) { return ops::mul(v[0], v[1]); }));
  cases.push_back(simple(
      "scale", [](Prng& r) { return std::vector<Tensor>{nrm(r, {2, 5})}; },
      [](const std::vector<Var>& v) { return ops::scale(v[0], -1.7); }));
  cases.push_back(simple(
      "tanh", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4})}; },
      [](const std::vector<Var>& v) { return ops::tanh(v[0]); }));
  cases.push_back(simple(
      "sum", [](Prng& r) { return std::vector<Tensor>{nrm(r, {7})}; },
      [](const std::vector<Var>& v) { return ops::sum(v[0]); }));
  cases.push_back(simple(
      "norm2", [](Prng& r) { return std::vector<Tensor>{nrm(r, {7})}; },
      [](const std::vector<Var>& v) { return ops::norm2(v[0]); }));
  cases.push_back(simple(
      "average",
      [](Prng& r) {
        return std::vector<Tensor>{nrm(r, {2, 3}), nrm(r, {2, 3}), nrm(r, {2, 3})};
      },
      [](const std::vector<Var>& v) { return ops::average({v[0], v[1], v[2]}); }));
  cases.push_back(simple(
      "reshape", [](Prng& r) { return std::vector<Tensor>{nrm(r, {2, 6})}; },
      [](const std::vector<Var>& v) { return ops::reshape(v[0], {3, 4}); }));
  cases.push_back(simple(
      "concat", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3}), nrm(r, {4})}; },
      [](const std::vector<Var>& v) { return ops::concat({v[0], v[1]}); }));
  cases.push_back(simple(
      "slice", [](Prng& r) { return std::vector<Tensor>{nrm(r, {10})}; },
      [](const std::vector<Var>& v) { return ops::slice(v[0], 2, 5); }));
  cases.push_back(simple(
      "row", [](Prng& r) { return std::vector<Tensor>{nrm(r, {4, 3})}; },
      [](const std::vector<Var>& v) { return ops::row(v[0], 1); }));
  cases.push_back(simple(
      "stack_rows",
      [](Prng& r) { return std::vector<Tensor>{nrm(r, {5}), nrm(r, {5}), nrm(r, {5})}; },
      [](const std::vector<Var>& v) { return ops::stack_rows({v[0], v[1], v[2]}); }));
  cases.push_back(simple(
      "concat_cols", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 2}), nrm(r, {3, 4})}; },
      [](const std::vector<Var>& v) { return ops::concat_cols(v[0], v[1]); }));
  cases.push_back(simple(
      "transpose", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4})}; },
      [](const std::vector<Var>& v) { return ops::transpose(v[0]); }));
  cases.push_back(simple(
      "matmul", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {4, 2})}; },
      [](const std::vector<Var>& v) { return ops::matmul(v[0], v[1]); }));
  cases.push_back(simple(
      "add_rowvec", [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {4})}; },
      [](const std::vector<Var>& v) { return ops::add_rowvec(v[0], v[1]); }));
  cases.push_back(simple(
      "linear_vector",
      [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {3}), nrm(r, {4})}; },
      [](const std::vector<Var>& v) { return ops::linear(lin2(v, 0), v[2]); }));
  cases.push_back(simple(
      "linear_batch",
      [](Prng& r) { return std::vector<Tensor>{nrm(r, {3, 4}), nrm(r, {3}), nrm(r, {5, 4})}; },
      [](const std::vector<Var>& v) { return ops::linear(lin2(v, 0), v[2]); }));
  cases.push_back(simple(
      "softmax_rows", [](Prng& r) { return std::vector<Tensor>{nrm(r, {4, 4})}; },
      [](const std::vector<Var>& v) { return ops::softmax_rows(v[0]); }));
  cases.push_back(simple(
      "bilinear_sample",
      [](Prng& r) {
        return std::vector<Tensor>{nrm(r, {3, 4, 5}), r.uniform_tensor({6, 2}, -0.9, 0.9)};
      },
      [](const std::vector<Var>& v) { return ops::bilinear_sample(v[0], v[1]); }));
  cases.push_back(simple(
      "bilinear_sample_clamped",
      [](Prng& r) {
        return std::vector<Tensor>{nrm(r, {2, 3, 3}), r.uniform_tensor({4, 2}, 1.2, 1.8)};
      },
      [](const std::vector<Var>& v) { return ops::bilinear_sample(v[0], v[1]); }));
  cases.push_back(simple(
      "deconv",
      [](Prng& r) {
        return std::vector<Tensor>{nrm(r, {3, 2, 4, 4}), nrm(r, {3}), nrm(r, {2, 3, 3})};
      },
      [](const std::vector<Var>& v) {
        return deconv_apply(DeconvVars{v[0], v[1]}, v[2]);
      }));
  cases.push_back(simple(
      "rodrigues_rows", [](Prng& r) { return std::vector<Tensor>{nrm(r, {4, 3})}; },
      [](const std::vector<Var>& v) { return ops::rodrigues_rows(v[0]); }));
  cases.push_back(simple(
      "rowwise_transform",
      [](Prng& r) { return std::vector<Tensor>{nrm(r, {5, 9}), nrm(r, {5, 3})}; },
      [](const std::vector<Var>& v) { return ops::rowwise_transform(v[0], v[1]); }));
  cases.push_back(simple(
      "project_xy",
      [](Prng& r) {
        return std::vector<Tensor>{nrm(r, {5, 3}), r.uniform_tensor({1}, 0.5, 1.5),
                                   r.uniform_tensor({2}, -0.3, 0.3)};
      },
      [](const std::vector<Var>& v) { return ops::project_xy(v[0], v[1], v[2]); }));

  // Composites. One small template shared by every body-dependent case.
  auto tmpl = std::make_shared<BodyTemplate>(make_mini_template({40, 5, 12}, 77));
  const auto nt = 3 * tmpl->joints();
  const auto d = param_dim(tmpl->joints());

  cases.push_back(simple(
      "lbs_forward",
      [nt](Prng& r) {
        return std::vector<Tensor>{r.uniform_tensor({10}, -1.0, 1.0),
                                   r.uniform_tensor({nt}, -0.5, 0.5)};
      },
      [tmpl](const std::vector<Var>& v) { return lbs_forward(*tmpl, v[0], v[1]); }));

  auto make_flat = [nt, d](Prng& r) {
    std::vector<double> flat(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < nt; ++i) flat[static_cast<std::size_t>(i)] = r.uniform(-0.5, 0.5);
    for (std::int64_t i = nt; i < nt + 10; ++i)
      flat[static_cast<std::size_t>(i)] = r.uniform(-1.0, 1.0);
    flat[static_cast<std::size_t>(nt + 10)] = r.uniform(0.8, 1.2);
    flat[static_cast<std::size_t>(nt + 11)] = r.uniform(-0.2, 0.2);
    flat[static_cast<std::size_t>(nt + 12)] = r.uniform(-0.2, 0.2);
    return Tensor({d}, std::move(flat));
  };
  cases.push_back(simple(
      "body_projection",
      [make_flat](Prng& r) { return std::vector<Tensor>{make_flat(r)}; },
      [tmpl](const std::vector<Var>& v) { return body_forward(*tmpl, v[0]).joints2d; }));

  cases.push_back(simple(
      "grid_sample_features",
      [](Prng& r) {
        return std::vector<Tensor>{nrm(r, {4, 6, 6}), nrm(r, {2, 4}), nrm(r, {2})};
      },
      [](const std::vector<Var>& v) { return grid_sample_features(v[0], lin2(v, 1), 3); }));
  cases.push_back(simple(
      "project_sample_features",
      [make_flat](Prng& r) {
        return std::vector<Tensor>{nrm(r, {4, 6, 6}), make_flat(r), nrm(r, {2, 4}), nrm(r, {2})};
      },
      [tmpl](const std::vector<Var>& v) {
        return project_sample_features(v[0], *tmpl, v[1], lin2(v, 2));
      }));

  auto tcfm_inputs = [](Prng& r) {
    return std::vector<Tensor>{nrm(r, {3, 8}),                  // z
                               nrm(r, {4, 8}), nrm(r, {4}),     // q
                               nrm(r, {4, 8}), nrm(r, {4}),     // k
                               nrm(r, {4, 8}), nrm(r, {4}),     // v
                               nrm(r, {1, 2}), nrm(r, {1}),     // fuse
                               nrm(r, {8, 4}), nrm(r, {8})};    // u
  };
  auto tcfm_vars = [](const std::vector<Var>& v) {
    return TcfmVars{lin2(v, 1), lin2(v, 3), lin2(v, 5), lin2(v, 7), lin2(v, 9)};
  };
  cases.push_back(simple("tcfm_forward", tcfm_inputs, [tcfm_vars](const std::vector<Var>& v) {
    return tcfm_forward(v[0], tcfm_vars(v));
  }));
  cases.push_back(simple("correlation_matrices", tcfm_inputs,
                         [tcfm_vars](const std::vector<Var>& v) {
                           auto [m_con, m_sim] = correlation_matrices(v[0], tcfm_vars(v));
                           return ops::add(m_con, m_sim);
                         }));

  auto safm_weights = [](Prng& r) {
    std::vector<Tensor> w{nrm(r, {3, 8}), nrm(r, {3}),   // fc_reduce
                          nrm(r, {4, 9}), nrm(r, {4}),   // h1
                          nrm(r, {4, 4}), nrm(r, {4}),   // h2
                          nrm(r, {3, 4}), nrm(r, {3})};  // h3
    return w;
  };
  auto safm_vars = [](const std::vector<Var>& v, std::size_t off) {
    return SafmVars{lin2(v, off), lin2(v, off + 2), lin2(v, off + 4), lin2(v, off + 6)};
  };
  cases.push_back(simple(
      "attention_integrate",
      [safm_weights](Prng& r) {
        std::vector<Tensor> in{nrm(r, {8}), nrm(r, {8}), nrm(r, {8})};
        auto w = safm_weights(r);
        in.insert(in.end(), w.begin(), w.end());
        return in;
      },
      [safm_vars](const std::vector<Var>& v) {
        return attention_integrate(v[0], v[1], v[2], safm_vars(v, 3)).first;
      }));
  cases.push_back(simple(
      "safm_forward",
      [safm_weights](Prng& r) {
        std::vector<Tensor> in;
        for (int i = 0; i < 9; ++i) in.push_back(nrm(r, {8}));
        auto w = safm_weights(r);
        in.insert(in.end(), w.begin(), w.end());
        return in;
      },
      [safm_vars](const std::vector<Var>& v) {
        std::vector<Var> feats(v.begin(), v.begin() + 9);
        return safm_forward(feats, safm_vars(v, 9)).first;
      }));

  cases.push_back(simple(
      "ief_regress",
      [make_flat, d](Prng& r) {
        return std::vector<Tensor>{nrm(r, {6}),  make_flat(r),      nrm(r, {8, 6 + d}),
                                   nrm(r, {8}),  nrm(r, {8, 8}),    nrm(r, {8}),
                                   nrm(r, {d, 8}), nrm(r, {d})};
      },
      [](const std::vector<Var>& v) {
        return ief_regress(v[0], v[1], RegressorVars{lin2(v, 2), lin2(v, 4), lin2(v, 6)});
      }));

  {
    // Fixed annotation so the loss surface is smooth at the probe point.
    Prng fixed(4242);
    FrameAnnotation ann;
    ann.gt_theta = fixed.normal_tensor({d});
    ann.gt_joints3d = fixed.normal_tensor({6, 3});
    ann.gt_joints2d = fixed.normal_tensor({6, 2});
    LossWeights lw{0.7, 1.3, 2.1};
    cases.push_back(simple(
        "loss_total",
        [d](Prng& r) {
          return std::vector<Tensor>{nrm(r, {d}), nrm(r, {6, 3}), nrm(r, {6, 2})};
        },
        [ann, lw](const std::vector<Var>& v) { return loss_total(v[0], v[1], v[2], ann, lw); }));
  }

  {
    // End-to-end: gradient of the training loss with respect to every weight
    // tensor of a small model, through all three stages.
    PyramidConfig pc;
    pc.C0 = 4;
    pc.H0 = 2;
    pc.W0 = 2;
    pc.channels = {4, 4, 4};
    pc.Cm = 2;
    pc.grid_side = 3;
    ModelInit mi;
    mi.regressor_hidden = 8;
    mi.safm_dr = 4;
    mi.safm_hidden = 6;
    auto model = std::make_shared<StafModel>(init_model(pc, *tmpl, 3, 99, mi));

    Prng fixed(909);
    auto window = std::make_shared<std::vector<Tensor>>();
    for (int t = 0; t < 3; ++t) window->push_back(fixed.normal_tensor({pc.C0, pc.H0, pc.W0}));
    auto ann = std::make_shared<FrameAnnotation>();
    ann->gt_theta = fixed.normal_tensor({d});
    const auto joints = tmpl->joints();
    ann->gt_joints3d = fixed.normal_tensor({joints, 3}, 100.0);
    ann->gt_joints2d = fixed.normal_tensor({joints, 2});

    CheckCase c;
    c.name = "pipeline_loss";
    c.probe_cap = 2;
    c.make_inputs = [pc, tmpl, mi](Prng& r) {
      StafModel m = init_model(pc, *tmpl, 3, r.next_u64(), mi);
      std::vector<Tensor> weights;
      visit_weights(m, [&weights](const std::string&, const Tensor& t) { weights.push_back(t); });
      return weights;
    };
    c.run = [model, window, ann](const std::vector<Var>& v) {
      ModelVars mv = vars_from_list(*model, v);
      StafOutput out = staf_forward(*window, *model, mv, true);
      LossWeights lw;
      auto stage = [&](const Var& theta) {
        BodyVars body = body_forward(model->tmpl, theta);
        return loss_total(theta, ops::scale(body.joints, 1000.0), body.joints2d, *ann, lw);
      };
      Var aux = ops::add(stage(out.theta1[1]), stage(out.theta2));
      return ops::add(stage(out.theta3), ops::scale(aux, 0.5));
    };
    cases.push_back(std::move(c));
  }

  return cases;
}

std::vector<std::string> unverifiable_ops() {
  return {"procrustes_align", "mpjpe_frames", "pa_mpjpe_frames", "pve_frames", "accel_frames"};
}

std::vector<CheckResult> run_gradient_suite(std::uint64_t seed, int trials) {
  std::vector<CheckResult> out;
  for (const CheckCase& c : gradient_suite()) out.push_back(vjp_check(c, seed, trials));
  return out;
}

}  // namespace staf
