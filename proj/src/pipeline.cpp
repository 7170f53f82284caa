#include "staf/pipeline.hpp"

#include <cmath>
#include <thread>

#include "staf/prng.hpp"
#include "staf/serialize.hpp"

namespace staf {

void RegressorWeights::validate(std::int64_t feature_len, std::int64_t dim) const {
  require(l1.in_dim() == feature_len + dim, "regressor input must be feature + params wide");
  require(l2.in_dim() == l1.out_dim() && head.in_dim() == l2.out_dim(),
          "regressor layers must chain");
  require(head.out_dim() == dim, "regressor head must emit a params update");
}

void StafModel::validate() const {
  pc.validate();
  tmpl.validate();
  require(T >= 1 && T <= 9 && T % 2 == 1, "window length must be odd and at most 9");
  for (int k = 0; k < 3; ++k) {
    require(deconv[static_cast<std::size_t>(k)].in_channels() == pc.level_channels(k),
            "deconv input channels must match the previous level");
    require(deconv[static_cast<std::size_t>(k)].out_channels() == pc.level_channels(k + 1),
            "deconv output channels must match the level");
    require(reduce[static_cast<std::size_t>(k)].in_dim() == pc.level_channels(k + 1) &&
                reduce[static_cast<std::size_t>(k)].out_dim() == pc.Cm,
            "reduce layer must map level channels to Cm");
  }
  require(tcfm.width() == grid_feature_len(), "temporal fusion width must match grid features");
  require(tcfm.bottleneck() == tcfm_bottleneck(grid_feature_len()),
          "temporal bottleneck must be half the width");
  tcfm.validate();
  require(safm.width() == mesh_feature_len(), "spatial fusion width must match mesh features");
  safm.validate();
  reg[0].validate(grid_feature_len(), dim());
  reg[1].validate(mesh_feature_len(), dim());
  reg[2].validate(mesh_feature_len(), dim());
  require(theta_mean.rank() == 1 && theta_mean.size() == dim(),
          "mean params length must match the template");
}

namespace {

// Single listing of the trainable tensors; both visitors and the ModelVars
// builder walk it so orders can never drift apart.
template <class Model, class F>
void walk_weights(Model& m, F&& f) {
  for (int k = 0; k < 3; ++k) {
    const std::string d = "deconv" + std::to_string(k);
    f(d + ".weight", m.deconv[static_cast<std::size_t>(k)].weight);
    f(d + ".bias", m.deconv[static_cast<std::size_t>(k)].bias);
  }
  for (int k = 0; k < 3; ++k) {
    const std::string r = "reduce" + std::to_string(k);
    f(r + ".weight", m.reduce[static_cast<std::size_t>(k)].weight);
    f(r + ".bias", m.reduce[static_cast<std::size_t>(k)].bias);
  }
  auto layer = [&f](const std::string& name, auto& l) {
    f(name + ".weight", l.weight);
    f(name + ".bias", l.bias);
  };
  layer("tcfm.q", m.tcfm.q);
  layer("tcfm.k", m.tcfm.k);
  layer("tcfm.v", m.tcfm.v);
  layer("tcfm.fuse", m.tcfm.fuse);
  layer("tcfm.u", m.tcfm.u);
  layer("safm.fc_reduce", m.safm.fc_reduce);
  layer("safm.h1", m.safm.h1);
  layer("safm.h2", m.safm.h2);
  layer("safm.h3", m.safm.h3);
  for (int k = 0; k < 3; ++k) {
    const std::string r = "reg" + std::to_string(k);
    layer(r + ".l1", m.reg[static_cast<std::size_t>(k)].l1);
    layer(r + ".l2", m.reg[static_cast<std::size_t>(k)].l2);
    layer(r + ".head", m.reg[static_cast<std::size_t>(k)].head);
  }
}

// Builds the Var mirror through `f`, visiting tensors in walk_weights order.
template <class F>
ModelVars map_model(const StafModel& m, F&& f) {
  ModelVars mv;
  std::size_t cursor = 0;
  std::vector<Var*> slots;
  for (int k = 0; k < 3; ++k) {
    slots.push_back(&mv.deconv[static_cast<std::size_t>(k)].weight);
    slots.push_back(&mv.deconv[static_cast<std::size_t>(k)].bias);
  }
  for (int k = 0; k < 3; ++k) {
    slots.push_back(&mv.reduce[static_cast<std::size_t>(k)].weight);
    slots.push_back(&mv.reduce[static_cast<std::size_t>(k)].bias);
  }
  auto lin = [&slots](LinearVars& l) {
    slots.push_back(&l.weight);
    slots.push_back(&l.bias);
  };
  lin(mv.tcfm.q);
  lin(mv.tcfm.k);
  lin(mv.tcfm.v);
  lin(mv.tcfm.fuse);
  lin(mv.tcfm.u);
  lin(mv.safm.fc_reduce);
  lin(mv.safm.h1);
  lin(mv.safm.h2);
  lin(mv.safm.h3);
  for (int k = 0; k < 3; ++k) {
    lin(mv.reg[static_cast<std::size_t>(k)].l1);
    lin(mv.reg[static_cast<std::size_t>(k)].l2);
    lin(mv.reg[static_cast<std::size_t>(k)].head);
  }
  visit_weights(m, [&](const std::string& name, const Tensor& t) {
    require(cursor < slots.size(), "weight listing out of sync");
    *slots[cursor++] = f(name, t);
  });
  require(cursor == slots.size(), "weight listing out of sync");
  return mv;
}

}  // namespace

void visit_weights(StafModel& m, const std::function<void(const std::string&, Tensor&)>& f) {
  walk_weights(m, f);
}

void visit_weights(const StafModel& m,
                   const std::function<void(const std::string&, const Tensor&)>& f) {
  walk_weights(m, f);
}

ModelVars as_constant(const StafModel& m) {
  return map_model(m, [](const std::string&, const Tensor& t) { return constant(t); });
}

ModelVars watch_model(const StafModel& m, std::vector<std::int32_t>* nodes) {
  return map_model(m, [nodes](const std::string&, const Tensor& t) {
    Var v = watch(t);
    if (nodes) nodes->push_back(v.node);
    return v;
  });
}

ModelVars vars_from_list(const StafModel& m, const std::vector<Var>& weights) {
  std::size_t k = 0;
  ModelVars mv = map_model(m, [&](const std::string& name, const Tensor& t) {
    require(k < weights.size(), "weight list too short");
    require(weights[k].value.same_dims(t), "shape mismatch for " + name);
    return weights[k++];
  });
  require(k == weights.size(), "weight list too long");
  return mv;
}

ModelInit desk_model_init() {
  ModelInit mi;
  mi.regressor_hidden = 64;
  mi.safm_dr = 16;
  mi.safm_hidden = 32;
  return mi;
}

namespace {

Tensor fan_in_init(Prng& root, const std::string& name, std::vector<std::int64_t> dims,
                   std::int64_t fan_in, double scale) {
  Prng rng = root.stream(name);
  const double a = scale / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(dims), -a, a);
}

LinearLayer init_linear(Prng& root, const std::string& name, std::int64_t out, std::int64_t in,
                        double scale) {
  return LinearLayer(fan_in_init(root, name + ".weight", {out, in}, in, scale),
                     Tensor::zeros({out}));
}

}  // namespace

StafModel init_model(const PyramidConfig& pc, BodyTemplate tmpl, std::int64_t T,
                     std::uint64_t seed, const ModelInit& mi) {
  pc.validate();
  StafModel m;
  m.pc = pc;
  m.T = T;
  m.tmpl = std::move(tmpl);
  Prng root(seed);
  for (int k = 0; k < 3; ++k) {
    const auto ci = pc.level_channels(k);
    const auto co = pc.level_channels(k + 1);
    const std::string name = "deconv" + std::to_string(k);
    m.deconv[static_cast<std::size_t>(k)] =
        DeconvLayer(fan_in_init(root, name + ".weight", {co, ci, 4, 4}, ci * 16, mi.weight_scale),
                    Tensor::zeros({co}));
    m.reduce[static_cast<std::size_t>(k)] =
        init_linear(root, "reduce" + std::to_string(k), pc.Cm, co, mi.weight_scale);
  }
  const auto s1 = m.grid_feature_len();
  const auto sb = tcfm_bottleneck(s1);
  m.tcfm.q = init_linear(root, "tcfm.q", sb, s1, mi.weight_scale);
  m.tcfm.k = init_linear(root, "tcfm.k", sb, s1, mi.weight_scale);
  m.tcfm.v = init_linear(root, "tcfm.v", sb, s1, mi.weight_scale);
  m.tcfm.fuse = init_linear(root, "tcfm.fuse", 1, 2, mi.weight_scale);
  m.tcfm.u = init_linear(root, "tcfm.u", s1, sb, mi.weight_scale);
  const auto s2 = m.mesh_feature_len();
  m.safm.fc_reduce = init_linear(root, "safm.fc_reduce", mi.safm_dr, s2, mi.weight_scale);
  m.safm.h1 = init_linear(root, "safm.h1", mi.safm_hidden, 3 * mi.safm_dr, mi.weight_scale);
  m.safm.h2 = init_linear(root, "safm.h2", mi.safm_hidden, mi.safm_hidden, mi.weight_scale);
  m.safm.h3 = init_linear(root, "safm.h3", 3, mi.safm_hidden, mi.weight_scale);
  const auto dim = m.dim();
  const std::int64_t feat[3] = {s1, s2, s2};
  for (int k = 0; k < 3; ++k) {
    const std::string r = "reg" + std::to_string(k);
    auto& rw = m.reg[static_cast<std::size_t>(k)];
    rw.l1 = init_linear(root, r + ".l1", mi.regressor_hidden, feat[k] + dim, mi.weight_scale);
    rw.l2 = init_linear(root, r + ".l2", mi.regressor_hidden, mi.regressor_hidden,
                        mi.weight_scale);
    rw.head = init_linear(root, r + ".head", dim, mi.regressor_hidden,
                          mi.weight_scale * mi.head_scale);
  }
  m.theta_mean = flatten_params(mean_params(m.tmpl.joints()));
  m.validate();
  return m;
}

Tensor apm(const std::vector<Tensor>& features) {
  require(!features.empty(), "window mean needs at least one map");
  std::vector<Var> vars;
  vars.reserve(features.size());
  for (const Tensor& t : features) vars.push_back(constant(t));
  return ops::average(vars).value;
}

Var ief_regress(const Var& feature, const Var& theta_in, const RegressorVars& w) {
  Var x = ops::concat({feature, theta_in});
  Var h1 = ops::tanh(ops::linear(w.l1, x));
  Var h2 = ops::tanh(ops::linear(w.l2, h1));
  Var delta = ops::linear(w.head, h2);
  return ops::add(theta_in, delta);
}

namespace {

void check_stage(bool finite, const std::string& stage) {
  if (!finite) throw NumericError("non-finite values at " + stage);
}

}  // namespace

StafOutput staf_forward(const std::vector<Tensor>& window, const StafModel& model,
                        const ModelVars& mv, bool apm_enabled) {
  const auto T = model.T;
  require(static_cast<std::int64_t>(window.size()) == T,
          "window must hold exactly " + std::to_string(T) + " frames");
  for (const Tensor& f : window) {
    require(f.rank() == 3 && f.dim(0) == model.pc.C0 && f.dim(1) == model.pc.H0 &&
                f.dim(2) == model.pc.W0,
            "frame map shape mismatch, got " + dims_str(f));
    require(f.all_finite(), "frame maps must be finite");
  }
  const auto target = static_cast<std::size_t>((T - 1) / 2);

  std::vector<Var> frames;
  frames.reserve(window.size());
  for (const Tensor& f : window) frames.push_back(constant(f));
  if (apm_enabled) frames[target] = ops::average(frames);

  StafOutput out;

  // Level 1: grid features per frame, temporal fusion, per-frame regression.
  std::vector<Var> phi1(window.size());
  std::vector<Var> grid_feats(window.size());
  for (std::size_t t = 0; t < window.size(); ++t) {
    phi1[t] = deconv_apply(mv.deconv[0], frames[t]);
    grid_feats[t] = grid_sample_features(phi1[t], mv.reduce[0], model.pc.grid_side);
  }
  Var z = ops::stack_rows(grid_feats);
  check_stage(z.value.all_finite(), "stage 1 (grid features)");
  Var z_ref = tcfm_forward(z, mv.tcfm, &out.tcfm_trace);
  Var theta_mean = constant(model.theta_mean);
  out.theta1.resize(window.size());
  for (std::size_t t = 0; t < window.size(); ++t) {
    out.theta1[t] = ief_regress(ops::row(z_ref, static_cast<std::int64_t>(t)), theta_mean,
                                mv.reg[0]);
    check_stage(out.theta1[t].value.all_finite(), "stage 1 (params)");
  }

  // Level 2: mesh-projected features per frame, spatial fusion, target
  // regression. Only the target frame's level-2 map is kept for level 3.
  std::vector<Var> mesh_feats(window.size());
  Var phi2_target;
  for (std::size_t t = 0; t < window.size(); ++t) {
    Var phi2 = deconv_apply(mv.deconv[1], phi1[t]);
    mesh_feats[t] = project_sample_features(phi2, model.tmpl, out.theta1[t], mv.reduce[1]);
    if (t == target) phi2_target = phi2;
  }
  // Pad by edge replication so the two-level three-way integration always
  // sees nine candidates with the target centered.
  std::vector<Var> padded;
  const std::size_t pad = static_cast<std::size_t>((9 - T) / 2);
  for (std::size_t i = 0; i < pad; ++i) padded.push_back(mesh_feats.front());
  for (const Var& f : mesh_feats) padded.push_back(f);
  for (std::size_t i = 0; i < pad; ++i) padded.push_back(mesh_feats.back());
  auto [phi_ref, alphas] = safm_forward(padded, mv.safm);
  out.safm_alphas = std::move(alphas);
  out.theta2 = ief_regress(phi_ref, out.theta1[target], mv.reg[1]);
  check_stage(out.theta2.value.all_finite(), "stage 2 (params)");

  // Level 3: target only.
  Var phi3 = deconv_apply(mv.deconv[2], phi2_target);
  Var mesh3 = project_sample_features(phi3, model.tmpl, out.theta2, mv.reduce[2]);
  out.theta3 = ief_regress(mesh3, out.theta2, mv.reg[2]);
  check_stage(out.theta3.value.all_finite(), "stage 3 (params)");
  return out;
}

std::vector<std::int64_t> window_indices(std::int64_t target, std::int64_t length,
                                         std::int64_t T) {
  require(length >= 1, "sequence must not be empty");
  require(target >= 0 && target < length, "target frame out of range");
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(T));
  const auto half = (T - 1) / 2;
  for (std::int64_t off = -half; off <= half; ++off) {
    auto i = target + off;
    if (i < 0) i = 0;
    if (i >= length) i = length - 1;
    idx.push_back(i);
  }
  return idx;
}

Tensor run_sequence(const std::vector<Tensor>& frames, const StafModel& model, bool apm_enabled,
                    int threads) {
  const auto L = static_cast<std::int64_t>(frames.size());
  require(L >= 1, "sequence must not be empty");
  const auto D = model.dim();
  ModelVars mv = as_constant(model);
  std::vector<double> out(static_cast<std::size_t>(L * D));

  auto work = [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t t = begin; t < end; ++t) {
      std::vector<Tensor> window;
      for (auto i : window_indices(t, L, model.T)) window.push_back(frames[static_cast<std::size_t>(i)]);
      StafOutput res = staf_forward(window, model, mv, apm_enabled);
      std::copy(res.theta3.value.data(), res.theta3.value.data() + D, out.begin() + t * D);
    }
  };

  if (threads <= 1) {
    work(0, L);
  } else {
    const auto k = std::min<std::int64_t>(threads, L);
    std::vector<std::thread> pool;
    for (std::int64_t i = 0; i < k; ++i) {
      const auto begin = i * L / k;
      const auto end = (i + 1) * L / k;
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return Tensor({L, D}, std::move(out));
}

void save_model(const std::string& path, const StafModel& model) {
  Bundle b;
  b.manifest["kind"] = "staf_model";
  b.manifest["config"] = {{"C0", model.pc.C0},
                          {"H0", model.pc.H0},
                          {"W0", model.pc.W0},
                          {"channels", model.pc.channels},
                          {"Cm", model.pc.Cm},
                          {"grid_side", model.pc.grid_side},
                          {"T", model.T}};
  b.manifest["template"] = {{"N", model.tmpl.verts()},
                            {"J", model.tmpl.joints() - 1},
                            {"Nd", model.tmpl.down_verts()},
                            {"parents", model.tmpl.parents}};
  visit_weights(model, [&b](const std::string& name, const Tensor& t) {
    b.tensors.emplace_back(name, t);
  });
  b.tensors.emplace_back("theta_mean", model.theta_mean);
  b.tensors.emplace_back("template.rest_vertices", model.tmpl.rest_vertices);
  b.tensors.emplace_back("template.shape_dirs", model.tmpl.shape_dirs);
  b.tensors.emplace_back("template.joint_regressor", model.tmpl.joint_regressor);
  b.tensors.emplace_back("template.skin_weights", model.tmpl.skin_weights);
  b.tensors.emplace_back("template.downsample", model.tmpl.downsample);
  save_bundle(path, b);
}

StafModel load_model(const std::string& path) {
  Bundle b = load_bundle(path);
  require(b.manifest.value("kind", std::string()) == "staf_model",
          "not a model checkpoint: " + path);
  StafModel m;
  const auto& cfg = b.manifest["config"];
  m.pc.C0 = cfg["C0"].get<std::int64_t>();
  m.pc.H0 = cfg["H0"].get<std::int64_t>();
  m.pc.W0 = cfg["W0"].get<std::int64_t>();
  const auto chans = cfg["channels"].get<std::vector<std::int64_t>>();
  require(chans.size() == 3, "checkpoint config must list three level widths");
  std::copy(chans.begin(), chans.end(), m.pc.channels.begin());
  m.pc.Cm = cfg["Cm"].get<std::int64_t>();
  m.pc.grid_side = cfg["grid_side"].get<std::int64_t>();
  m.T = cfg["T"].get<std::int64_t>();
  m.tmpl.rest_vertices = b.get("template.rest_vertices");
  m.tmpl.shape_dirs = b.get("template.shape_dirs");
  m.tmpl.joint_regressor = b.get("template.joint_regressor");
  m.tmpl.skin_weights = b.get("template.skin_weights");
  m.tmpl.downsample = b.get("template.downsample");
  m.tmpl.parents = b.manifest["template"]["parents"].get<std::vector<int>>();
  visit_weights(m, [&b](const std::string& name, Tensor& t) { t = b.get(name); });
  m.theta_mean = b.get("theta_mean");
  m.validate();
  return m;
}

}  // namespace staf
