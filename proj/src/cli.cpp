#include "staf/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "staf/gradcheck.hpp"
#include "staf/pipeline.hpp"
#include "staf/svg.hpp"
#include "staf/synth.hpp"
#include "staf/train.hpp"

namespace staf {

namespace {

std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open for writing: " + path);
  out << text;
  require(out.good(), "write failed: " + path);
}

TemplateConfig scale_tcfg(bool paper) {
  return paper ? TemplateConfig{6890, 23, 431} : TemplateConfig{};
}

PyramidConfig scale_pc(bool paper) { return paper ? PyramidConfig{} : desk_scale_config(); }

// The body a sequence file was generated with, rebuilt from its spec and
// checked against the stored hash.
BodyTemplate sequence_template(const SequenceData& seq) {
  BodyTemplate tmpl = template_for_spec(seq.spec, seq.tcfg);
  require(tmpl.hash() == seq.template_hash,
          "sequence template hash mismatch; file was not generated by this tool chain");
  return tmpl;
}

std::string params_csv(const Tensor& theta) {
  std::ostringstream os;
  os << "frame";
  for (std::int64_t j = 0; j < theta.dim(1); ++j) os << ",p" << j;
  os << "\n";
  for (std::int64_t t = 0; t < theta.dim(0); ++t) {
    os << (t + 1);
    for (std::int64_t j = 0; j < theta.dim(1); ++j) os << "," << num17(theta.at(t * theta.dim(1) + j));
    os << "\n";
  }
  return os.str();
}

Tensor params_from_csv(const std::string& path, std::int64_t dim) {
  std::ifstream in(path);
  require(in.good(), "cannot open: " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty parameter file: " + path);
  std::vector<double> data;
  std::int64_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    require(static_cast<bool>(std::getline(ls, cell, ',')), "malformed row in " + path);
    std::int64_t cols = 0;
    while (std::getline(ls, cell, ',')) {
      data.push_back(std::stod(cell));
      ++cols;
    }
    require(cols == dim, "parameter row width mismatch in " + path);
    ++rows;
  }
  require(rows >= 1, "no parameter rows in " + path);
  return Tensor({rows, dim}, std::move(data));
}

bool looks_like_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open: " + path);
  char head[6] = {};
  in.read(head, 5);
  return std::string(head, 5) == "frame";
}

Tensor scale_mm(const Tensor& t) {
  std::vector<double> d(t.data(), t.data() + t.size());
  for (double& v : d) v *= 1000.0;
  return Tensor(t.dims(), std::move(d));
}

// Joints and vertices (mm) for each parameter row.
std::pair<Tensor, Tensor> body_mm_rows(const BodyTemplate& tmpl, const Tensor& theta_rows) {
  const auto L = theta_rows.dim(0), d = theta_rows.dim(1);
  const auto j = tmpl.joints(), n = tmpl.verts();
  std::vector<double> jd(static_cast<std::size_t>(L * j * 3));
  std::vector<double> vd(static_cast<std::size_t>(L * n * 3));
  for (std::int64_t t = 0; t < L; ++t) {
    std::vector<double> row(theta_rows.data() + t * d, theta_rows.data() + (t + 1) * d);
    BodyVars body = body_forward(tmpl, constant(Tensor({d}, std::move(row))));
    for (std::int64_t i = 0; i < j * 3; ++i)
      jd[static_cast<std::size_t>(t * j * 3 + i)] = body.joints.value.at(i) * 1000.0;
    for (std::int64_t i = 0; i < n * 3; ++i)
      vd[static_cast<std::size_t>(t * n * 3 + i)] = body.vertices.value.at(i) * 1000.0;
  }
  return {Tensor({L, j, 3}, std::move(jd)), Tensor({L, n, 3}, std::move(vd))};
}

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> cells;  // cells[row][col], NaN for blanks
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open: " + path);
  CsvTable t;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty csv: " + path);
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      auto end = line.find(',', start);
      std::string field = line.substr(start, end == std::string::npos ? end : end - start);
      row.push_back(field.empty() ? std::nan("") : std::stod(field));
      start = (end == std::string::npos) ? line.size() : end + 1;
    }
    t.cells.push_back(std::move(row));
  }
  return t;
}

}  // namespace

int cli_run(int argc, char** argv) {
  CLI::App app{"Video-window body recovery pipeline: synthetic clips, inference, metrics"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 1;
  double fps = 0.0;
  bool paper = false;
  app.add_option("--seed", seed, "Root seed for anything randomized");
  app.add_option("--fps", fps, "Frames per second; scales the acceleration metric");
  app.add_flag("--paper-scale", paper, "Full-size configuration instead of the desk-scale one");

  SynthSpec spec;
  int threads = 1;
  std::string out_path, template_out, model_path, seq_path, pred_path, gt_path, curve_path;
  bool no_apm = false, static_gt = false;
  int trials = 25;
  std::int64_t n_seeds = 20;
  TrainConfig tcfg_train;
  std::string plot_in, plot_out, plot_title = "metrics";

  auto* gen = app.add_subcommand("gen", "Generate a synthetic clip with exact ground truth");
  gen->add_option("--length", spec.length, "Frames in the clip");
  gen->add_option("--keyframes", spec.keyframes, "Control poses to interpolate between");
  gen->add_option("--pose-amp", spec.pose_amp, "Pose amplitude, radians");
  gen->add_option("--shape-amp", spec.shape_amp, "Shape coefficient amplitude");
  gen->add_option("--cam-jitter", spec.cam_jitter, "Camera scale/shift amplitude");
  gen->add_option("--noise-sigma", spec.noise_sigma, "Feature noise level");
  gen->add_option("--threads", threads, "Worker threads (output is thread-count invariant)");
  gen->add_option("--out", out_path, "Sequence file to write")->required();
  gen->add_option("--template-out", template_out, "Also save the body template here");

  auto* infer = app.add_subcommand("infer", "Run the model over a clip; params per frame as CSV");
  infer->add_option("--model", model_path, "Model checkpoint")->required();
  infer->add_option("--seq", seq_path, "Sequence file")->required();
  infer->add_option("--out", out_path, "Output parameter CSV")->required();
  infer->add_option("--threads", threads, "Worker threads (output is thread-count invariant)");
  infer->add_flag("--no-apm", no_apm, "Disable the window-mean smoothing of the target frame");

  auto* eval = app.add_subcommand("eval", "Compare predictions against ground truth");
  eval->add_option("--pred", pred_path, "Parameter CSV from infer, or a sequence file")->required();
  eval->add_option("--gt", gt_path, "Ground-truth sequence file")->required();
  eval->add_option("--model", model_path, "Model checkpoint (template source for CSV inputs)");
  eval->add_option("--out", out_path, "Metric CSV to write")->required();
  eval->add_flag("--static-accel-gt", static_gt, "Treat ground truth as acceleration-free");

  auto* grad = app.add_subcommand("gradcheck", "Verify every registered backward map");
  grad->add_option("--trials", trials, "Seeded trials per op");

  auto* ablate = app.add_subcommand("ablate-apm", "Window-mean smoothing on/off comparison");
  ablate->add_option("--seeds", n_seeds, "Number of seeded models");
  ablate->add_option("--length", spec.length, "Frames per clip");
  ablate->add_option("--noise-sigma", spec.noise_sigma, "Feature noise level");
  ablate->add_option("--threads", threads, "Worker threads (output is thread-count invariant)");
  ablate->add_option("--out", out_path, "Per-seed CSV to write");

  auto* train = app.add_subcommand("train-overfit", "Fit a fresh model to one clip");
  train->add_option("--seq", seq_path, "Training clip")->required();
  train->add_option("--steps", tcfg_train.steps, "Gradient steps");
  train->add_option("--lr", tcfg_train.lr, "Learning rate");
  train->add_option("--aux-weight", tcfg_train.aux_weight, "Weight on intermediate-stage losses");
  train->add_option("--stop-loss-frac", tcfg_train.stop_loss_frac,
                    "Stop once loss falls below this fraction of the initial loss (0 = off)");
  train->add_option("--out", out_path, "Model checkpoint to write")->required();
  train->add_option("--curve", curve_path, "Loss curve CSV to write");
  train->add_flag("--no-apm", no_apm, "Disable the window-mean smoothing during training");

  auto* plot = app.add_subcommand("plot", "Render a metric CSV as an SVG line chart");
  plot->add_option("--in", plot_in, "CSV with a leading index column")->required();
  plot->add_option("--out", plot_out, "SVG file to write")->required();
  plot->add_option("--title", plot_title, "Chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spec.seed = seed;

    if (gen->parsed()) {
      BodyTemplate tmpl = template_for_spec(spec, scale_tcfg(paper));
      SequenceData seq = generate_synthetic(spec, tmpl, scale_pc(paper), threads);
      save_sequence(out_path, seq);
      if (!template_out.empty()) save_template(template_out, tmpl);
      std::cout << "wrote " << out_path << ": " << seq.length() << " frames, body hash "
                << seq.template_hash << "\n";
    } else if (infer->parsed()) {
      StafModel model = load_model(model_path);
      SequenceData seq = load_sequence(seq_path);
      require(model.tmpl.hash() == seq.template_hash,
              "model and sequence were built for different bodies");
      Tensor theta = run_sequence(sequence_frames(seq), model, !no_apm, threads);
      write_file(out_path, params_csv(theta));
      std::cout << "wrote " << out_path << ": " << theta.dim(0) << " rows\n";
    } else if (eval->parsed()) {
      SequenceData gt = load_sequence(gt_path);
      Tensor pred_j, pred_v;
      if (looks_like_csv(pred_path)) {
        BodyTemplate tmpl;
        if (!model_path.empty()) {
          StafModel model = load_model(model_path);
          require(model.tmpl.hash() == gt.template_hash,
                  "model and sequence were built for different bodies");
          tmpl = model.tmpl;
        } else {
          tmpl = sequence_template(gt);
        }
        Tensor rows = params_from_csv(pred_path, param_dim(tmpl.joints()));
        require(rows.dim(0) == gt.length(), "prediction frame count mismatch");
        auto [j, v] = body_mm_rows(tmpl, rows);
        pred_j = j;
        pred_v = v;
      } else {
        SequenceData pred = load_sequence(pred_path);
        require(pred.length() == gt.length(), "prediction frame count mismatch");
        pred_j = scale_mm(pred.joints);
        pred_v = scale_mm(pred.vertices);
      }
      MetricReport report = evaluate_sequence(pred_j, scale_mm(gt.joints), pred_v,
                                              scale_mm(gt.vertices), fps, static_gt);
      write_file(out_path, metric_csv(report));
      std::cout << "mpjpe " << num17(report.mean_mpjpe) << " mm, pa_mpjpe "
                << num17(report.mean_pa_mpjpe) << " mm, pve " << num17(report.mean_pve)
                << " mm, accel " << num17(report.mean_accel) << "\n";
    } else if (grad->parsed()) {
      bool all_pass = true;
      for (const CheckResult& r : run_gradient_suite(seed, trials)) {
        std::cout << (r.passed ? "pass" : "FAIL") << "  " << r.name << "  max_rel "
                  << num17(r.max_rel) << "  (" << r.trials << " trials)\n";
        all_pass = all_pass && r.passed;
      }
      for (const std::string& name : unverifiable_ops())
        std::cout << "unverifiable (forward only)  " << name << "\n";
      if (!all_pass) {
        std::cerr << "gradient suite failed\n";
        return 3;
      }
    } else if (ablate->parsed()) {
      ModelInit mi = desk_model_init();
      mi.head_scale = 1.0;
      AblateResult res =
          ablate_apm(scale_pc(paper), scale_tcfg(paper), 9, spec, n_seeds, mi, threads);
      std::ostringstream csv;
      csv << "seed,accel_on,accel_off\n";
      for (std::size_t i = 0; i < res.seeds.size(); ++i)
        csv << res.seeds[i] << "," << num17(res.accel_on[i]) << "," << num17(res.accel_off[i])
            << "\n";
      if (!out_path.empty()) write_file(out_path, csv.str());
      std::cout << "median accel with smoothing " << num17(res.median_on) << ", without "
                << num17(res.median_off) << " over " << res.seeds.size() << " seeds\n";
    } else if (train->parsed()) {
      SequenceData seq = load_sequence(seq_path);
      BodyTemplate tmpl = sequence_template(seq);
      tcfg_train.apm_enabled = !no_apm;
      StafModel model = init_model(scale_pc(paper), tmpl, 9, seed, desk_model_init());
      const double mpjpe0 = sequence_mpjpe(model, seq, tcfg_train.apm_enabled);
      TrainReport report = train_overfit(model, seq, tcfg_train);
      save_model(out_path, model);
      if (!curve_path.empty()) {
        std::ostringstream csv;
        csv << "step,loss\n";
        for (std::size_t i = 0; i < report.losses.size(); ++i)
          csv << i << "," << num17(report.losses[i]) << "\n";
        write_file(curve_path, csv.str());
      }
      if (report.aborted_step >= 0)
        throw NumericError("training loss became non-finite at step " +
                           std::to_string(report.aborted_step));
      const double mpjpe1 = sequence_mpjpe(model, seq, tcfg_train.apm_enabled);
      std::cout << "loss " << num17(report.losses.front()) << " -> " << num17(report.losses.back())
                << " over " << (report.losses.size() - 1) << " steps; mpjpe " << num17(mpjpe0)
                << " -> " << num17(mpjpe1) << " mm\n";
    } else if (plot->parsed()) {
      CsvTable table = read_csv(plot_in);
      require(table.columns.size() >= 2, "csv needs an index column and at least one series");
      std::vector<SvgSeries> series;
      for (std::size_t c = 1; c < table.columns.size(); ++c) {
        SvgSeries s;
        s.label = table.columns[c];
        for (const auto& row : table.cells) {
          s.x.push_back(row[0]);
          s.y.push_back(row[c]);
        }
        series.push_back(std::move(s));
      }
      write_file(plot_out, svg_line_chart(plot_title, table.columns[0], "value", series));
      std::cout << "wrote " << plot_out << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace staf
