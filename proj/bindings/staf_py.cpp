// Python surface for the core pipeline: synthesis, inference, training,
// metrics, and the reusable tensor ops. Arrays cross the boundary by copy;
// core exceptions surface as Python exceptions unchanged.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "staf/body_model.hpp"
#include "staf/metrics.hpp"
#include "staf/ops.hpp"
#include "staf/pipeline.hpp"
#include "staf/pyramid.hpp"
#include "staf/synth.hpp"
#include "staf/train.hpp"

namespace py = pybind11;
using namespace staf;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_array(const DoubleArray& a) {
  if (a.ndim() == 0) throw std::invalid_argument("expected an array, got a scalar");
  std::vector<std::int64_t> dims(static_cast<std::size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    dims[static_cast<std::size_t>(i)] = a.shape(i);
  return Tensor(std::move(dims), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

PyramidConfig config_for(bool paper_scale) {
  return paper_scale ? PyramidConfig{} : desk_scale_config();
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["mpjpe"] = r.mpjpe;
  d["pa_mpjpe"] = r.pa_mpjpe;
  d["pve"] = r.pve;
  d["accel"] = r.accel;
  d["mean_mpjpe"] = r.mean_mpjpe;
  d["mean_pa_mpjpe"] = r.mean_pa_mpjpe;
  d["mean_pve"] = r.mean_pve;
  d["mean_accel"] = r.mean_accel;
  return d;
}

}  // namespace

PYBIND11_MODULE(_staf, m) {
  m.doc() = "video-to-mesh recovery core";

  py::class_<BodyTemplate>(m, "Template")
      .def_property_readonly("vertices", [](const BodyTemplate& t) { return t.rest_vertices.dim(0); })
      .def_property_readonly("joints", [](const BodyTemplate& t) { return t.joint_regressor.dim(0) - 1; });

  py::class_<StafModel>(m, "Model")
      .def_property_readonly("dim", &StafModel::dim)
      .def_property_readonly("window", [](const StafModel& s) { return s.T; })
      .def("save", [](const StafModel& s, const std::string& path) { save_model(path, s); })
      .def_static("load", &load_model);

  py::class_<SequenceData>(m, "Sequence")
      .def_property_readonly("length", &SequenceData::length)
      .def_property_readonly("theta_gt", [](const SequenceData& s) { return to_array(s.theta_gt); })
      .def_property_readonly("joints", [](const SequenceData& s) { return to_array(s.joints); })
      .def_property_readonly("vertices", [](const SequenceData& s) { return to_array(s.vertices); })
      .def("save", [](const SequenceData& s, const std::string& path) { save_sequence(path, s); })
      .def_static("load", &load_sequence);

  m.def(
      "make_template",
      [](std::int64_t vertices, std::int64_t joints, std::int64_t down_vertices,
         std::uint64_t seed) { return make_mini_template({vertices, joints, down_vertices}, seed); },
      py::arg("vertices") = 120, py::arg("joints") = 7, py::arg("down_vertices") = 24,
      py::arg("seed") = 1);

  m.def(
      "generate",
      [](std::int64_t length, std::int64_t keyframes, double pose_amp, double shape_amp,
         double cam_jitter, double noise_sigma, std::uint64_t seed, bool paper_scale,
         int threads) {
        SynthSpec spec;
        spec.length = length;
        spec.keyframes = keyframes;
        spec.pose_amp = pose_amp;
        spec.shape_amp = shape_amp;
        spec.cam_jitter = cam_jitter;
        spec.noise_sigma = noise_sigma;
        spec.seed = seed;
        TemplateConfig tcfg;
        if (paper_scale) tcfg = {6890, 23, 431};
        BodyTemplate tmpl = template_for_spec(spec, tcfg);
        return generate_synthetic(spec, tmpl, config_for(paper_scale), threads);
      },
      py::arg("length") = 60, py::arg("keyframes") = 4, py::arg("pose_amp") = 0.3,
      py::arg("shape_amp") = 0.5, py::arg("cam_jitter") = 0.05, py::arg("noise_sigma") = 0.01,
      py::arg("seed") = 1, py::arg("paper_scale") = false, py::arg("threads") = 1);

  m.def(
      "init_model",
      [](const SequenceData& seq, std::uint64_t seed, bool paper_scale, std::int64_t window) {
        BodyTemplate tmpl = template_for_spec(seq.spec, seq.tcfg);
        return init_model(config_for(paper_scale), tmpl, window, seed, desk_model_init());
      },
      py::arg("sequence"), py::arg("seed") = 1, py::arg("paper_scale") = false,
      py::arg("window") = 9);

  m.def(
      "infer",
      [](const StafModel& model, const SequenceData& seq, bool apm, int threads) {
        return to_array(run_sequence(sequence_frames(seq), model, apm, threads));
      },
      py::arg("model"), py::arg("sequence"), py::arg("apm") = true, py::arg("threads") = 1);

  m.def(
      "joints_mm",
      [](const StafModel& model, const DoubleArray& theta_rows) {
        return to_array(joints_mm_from_params(model, from_array(theta_rows)));
      },
      py::arg("model"), py::arg("theta_rows"));

  m.def(
      "train_overfit",
      [](StafModel& model, const SequenceData& seq, std::int64_t steps, double lr,
         std::int64_t patience, double aux_weight, double lw_params, double lw_joints3d,
         double lw_joints2d, double stop_loss_frac, bool apm) {
        TrainConfig cfg;
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.patience = patience;
        cfg.aux_weight = aux_weight;
        cfg.lw = {lw_params, lw_joints3d, lw_joints2d};
        cfg.stop_loss_frac = stop_loss_frac;
        cfg.apm_enabled = apm;
        TrainReport rep = train_overfit(model, seq, cfg);
        py::dict d;
        d["losses"] = rep.losses;
        d["lr_trace"] = rep.lr_trace;
        d["aborted_step"] = rep.aborted_step;
        return d;
      },
      py::arg("model"), py::arg("sequence"), py::arg("steps"), py::arg("lr"),
      py::arg("patience") = 100, py::arg("aux_weight") = 0.5, py::arg("lw_params") = 1.0,
      py::arg("lw_joints3d") = 1.0, py::arg("lw_joints2d") = 1.0,
      py::arg("stop_loss_frac") = 0.0, py::arg("apm") = true);

  m.def(
      "evaluate",
      [](const DoubleArray& pred_joints, const DoubleArray& gt_joints,
         const DoubleArray& pred_verts, const DoubleArray& gt_verts, double fps,
         bool static_accel_gt) {
        return report_dict(evaluate_sequence(from_array(pred_joints), from_array(gt_joints),
                                             from_array(pred_verts), from_array(gt_verts), fps,
                                             static_accel_gt));
      },
      py::arg("pred_joints"), py::arg("gt_joints"), py::arg("pred_verts"), py::arg("gt_verts"),
      py::arg("fps") = 0.0, py::arg("static_accel_gt") = false);

  m.def("mpjpe", [](const DoubleArray& pred, const DoubleArray& gt) {
    return mpjpe_frames(from_array(pred), from_array(gt));
  });
  m.def("pa_mpjpe", [](const DoubleArray& pred, const DoubleArray& gt) {
    return pa_mpjpe_frames(from_array(pred), from_array(gt));
  });
  m.def(
      "pve",
      [](const DoubleArray& pv, const DoubleArray& gv, const DoubleArray& pr,
         const DoubleArray& gr) {
        return pve_frames(from_array(pv), from_array(gv), from_array(pr), from_array(gr));
      },
      py::arg("pred_verts"), py::arg("gt_verts"), py::arg("pred_roots"), py::arg("gt_roots"));
  m.def(
      "accel",
      [](const DoubleArray& pred, const DoubleArray& gt, double fps, bool static_gt) {
        return accel_frames(from_array(pred), from_array(gt), fps, static_gt);
      },
      py::arg("pred"), py::arg("gt"), py::arg("fps") = 0.0, py::arg("static_gt") = false);

  m.def(
      "procrustes",
      [](const DoubleArray& a, const DoubleArray& b) {
        Similarity s = procrustes_align(from_array(a), from_array(b));
        return py::make_tuple(s.s, to_array(s.R), to_array(s.t));
      },
      py::arg("a"), py::arg("b"));

  m.def("grid_points", [](std::int64_t side) { return to_array(make_grid_points(side)); },
        py::arg("side"));

  // Sampling zero points is a valid query and yields an empty feature block.
  m.def(
      "bilinear_sample",
      [](const DoubleArray& map, const DoubleArray& pts) {
        Tensor m_t = from_array(map);
        if (m_t.dims().size() != 3) throw std::invalid_argument("map must be {C,H,W}");
        if (pts.ndim() == 2 && pts.shape(0) == 0) {
          py::array_t<double> out(
              std::vector<py::ssize_t>{0, static_cast<py::ssize_t>(m_t.dim(0))});
          return py::array(out);
        }
        return to_array(ops::bilinear_sample(constant(std::move(m_t)), constant(from_array(pts))).value);
      },
      py::arg("map"), py::arg("points"));

  m.def(
      "deconv",
      [](const DoubleArray& weight, const DoubleArray& bias, const DoubleArray& map) {
        DeconvLayer layer(from_array(weight), from_array(bias));
        return to_array(deconv_apply(as_constant(layer), constant(from_array(map))).value);
      },
      py::arg("weight"), py::arg("bias"), py::arg("map"));

  m.def("rodrigues", [](const DoubleArray& aa) { return to_array(rodrigues(from_array(aa))); },
        py::arg("axis_angle"));
}
