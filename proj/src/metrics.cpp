#include "staf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace staf {

void LossWeights::validate() const {
  require(params >= 0.0 && joints3d >= 0.0 && joints2d >= 0.0,
          "loss weights must be nonnegative");
}

Var loss_total(const Var& pred_theta, const Var& pred_joints3d, const Var& pred_joints2d,
               const FrameAnnotation& ann, const LossWeights& lw) {
  lw.validate();
  Var total = constant(Tensor::scalar(0.0));
  if (ann.gt_theta) {
    require(pred_theta.value.same_dims(*ann.gt_theta), "loss: theta shape mismatch");
    Var term = ops::norm2(ops::sub(pred_theta, constant(*ann.gt_theta)));
    total = ops::add(total, ops::scale(term, lw.params));
  }
  if (ann.gt_joints3d) {
    require(pred_joints3d.value.same_dims(*ann.gt_joints3d), "loss: joints3d shape mismatch");
    Var term = ops::norm2(ops::sub(pred_joints3d, constant(*ann.gt_joints3d)));
    total = ops::add(total, ops::scale(term, lw.joints3d));
  }
  if (ann.gt_joints2d) {
    require(pred_joints2d.value.same_dims(*ann.gt_joints2d), "loss: joints2d shape mismatch");
    Var term = ops::norm2(ops::sub(pred_joints2d, constant(*ann.gt_joints2d)));
    total = ops::add(total, ops::scale(term, lw.joints2d));
  }
  return total;
}

namespace {

void check_seq(const Tensor& t, const std::string& name) {
  require(t.rank() == 3 && t.dim(2) == 3, name + " must be {L,P,3}");
}

double frame_mean_dist(const double* a, const double* b, std::int64_t p) {
  double s = 0.0;
  for (std::int64_t j = 0; j < p; ++j) {
    const double dx = a[j * 3] - b[j * 3];
    const double dy = a[j * 3 + 1] - b[j * 3 + 1];
    const double dz = a[j * 3 + 2] - b[j * 3 + 2];
    s += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return s / static_cast<double>(p);
}

}  // namespace

Similarity procrustes_align(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && a.dim(1) == 3 && a.same_dims(b), "procrustes expects matching {P,3}");
  const auto p = a.dim(0);
  require(p >= 3, "procrustes needs at least 3 points");
  Eigen::Vector3d ca = a.mat().colwise().mean().transpose();
  Eigen::Vector3d cb = b.mat().colwise().mean().transpose();
  RowMatXd ac = a.mat().rowwise() - ca.transpose();
  RowMatXd bc = b.mat().rowwise() - cb.transpose();
  const double var_a = ac.squaredNorm();
  require(var_a > 1e-18, "procrustes: source points are degenerate (coincident)");
  Eigen::Matrix3d h = ac.transpose() * bc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  const double sign = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Eigen::Vector3d dvec(1.0, 1.0, sign);
  Eigen::Matrix3d r = v * dvec.asDiagonal() * u.transpose();
  const double scale = (svd.singularValues().head(2).sum() + sign * svd.singularValues()(2)) / var_a;
  Eigen::Vector3d t = cb - scale * r * ca;

  Similarity out;
  out.s = scale;
  std::vector<double> rd(9), td(3);
  for (int i = 0; i < 3; ++i) {
    td[static_cast<std::size_t>(i)] = t(i);
    for (int j = 0; j < 3; ++j) rd[static_cast<std::size_t>(i * 3 + j)] = r(i, j);
  }
  out.R = Tensor({3, 3}, std::move(rd));
  out.t = Tensor({3}, std::move(td));
  return out;
}

std::vector<double> mpjpe_frames(const Tensor& pred, const Tensor& gt) {
  check_seq(pred, "pred");
  require(pred.same_dims(gt), "mpjpe: shape mismatch");
  const auto l = pred.dim(0), p = pred.dim(1);
  std::vector<double> out(static_cast<std::size_t>(l));
  std::vector<double> pc(static_cast<std::size_t>(p * 3)), gc(static_cast<std::size_t>(p * 3));
  for (std::int64_t f = 0; f < l; ++f) {
    const double* pf = pred.data() + f * p * 3;
    const double* gf = gt.data() + f * p * 3;
    for (std::int64_t j = 0; j < p; ++j)
      for (int c = 0; c < 3; ++c) {
        pc[static_cast<std::size_t>(j * 3 + c)] = pf[j * 3 + c] - pf[c];
        gc[static_cast<std::size_t>(j * 3 + c)] = gf[j * 3 + c] - gf[c];
      }
    out[static_cast<std::size_t>(f)] = frame_mean_dist(pc.data(), gc.data(), p);
  }
  return out;
}

std::vector<double> pa_mpjpe_frames(const Tensor& pred, const Tensor& gt) {
  check_seq(pred, "pred");
  require(pred.same_dims(gt), "pa_mpjpe: shape mismatch");
  const auto l = pred.dim(0), p = pred.dim(1);
  std::vector<double> out(static_cast<std::size_t>(l));
  for (std::int64_t f = 0; f < l; ++f) {
    Tensor pf({p, 3}, std::vector<double>(pred.data() + f * p * 3, pred.data() + (f + 1) * p * 3));
    Tensor gf({p, 3}, std::vector<double>(gt.data() + f * p * 3, gt.data() + (f + 1) * p * 3));
    // Identical frames need no solve; the identity is the exact optimum, so
    // self-evaluation reports exactly zero.
    if (std::equal(pf.data(), pf.data() + p * 3, gf.data())) {
      out[static_cast<std::size_t>(f)] = 0.0;
      continue;
    }
    Similarity sim = procrustes_align(pf, gf);
    std::vector<double> aligned(static_cast<std::size_t>(p * 3));
    Eigen::Map<RowMatXd>(aligned.data(), p, 3) =
        (sim.s * (pf.mat() * sim.R.mat().transpose())).rowwise() + sim.t.vec().transpose();
    out[static_cast<std::size_t>(f)] = frame_mean_dist(aligned.data(), gf.data(), p);
  }
  return out;
}

std::vector<double> pve_frames(const Tensor& pred_verts, const Tensor& gt_verts,
                               const Tensor& pred_roots, const Tensor& gt_roots) {
  check_seq(pred_verts, "pred_verts");
  require(pred_verts.same_dims(gt_verts), "pve: shape mismatch");
  const auto l = pred_verts.dim(0), n = pred_verts.dim(1);
  require(pred_roots.rank() == 2 && pred_roots.dim(0) == l && pred_roots.dim(1) == 3 &&
              gt_roots.same_dims(pred_roots),
          "pve: roots must be {L,3}");
  std::vector<double> out(static_cast<std::size_t>(l));
  for (std::int64_t f = 0; f < l; ++f) {
    const double* pv = pred_verts.data() + f * n * 3;
    const double* gv = gt_verts.data() + f * n * 3;
    const double* pr = pred_roots.data() + f * 3;
    const double* gr = gt_roots.data() + f * 3;
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double dx = (pv[i * 3] - pr[0]) - (gv[i * 3] - gr[0]);
      const double dy = (pv[i * 3 + 1] - pr[1]) - (gv[i * 3 + 1] - gr[1]);
      const double dz = (pv[i * 3 + 2] - pr[2]) - (gv[i * 3 + 2] - gr[2]);
      s += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    out[static_cast<std::size_t>(f)] = s / static_cast<double>(n);
  }
  return out;
}

std::vector<double> accel_frames(const Tensor& pred, const Tensor& gt, double fps,
                                 bool static_gt) {
  check_seq(pred, "pred");
  require(pred.same_dims(gt), "accel: shape mismatch");
  const auto l = pred.dim(0), p = pred.dim(1);
  require(l >= 3, "accel needs at least 3 frames");
  const double unit = fps > 0.0 ? fps * fps : 1.0;
  std::vector<double> out(static_cast<std::size_t>(l - 2));
  for (std::int64_t f = 1; f + 1 < l; ++f) {
    const double* pm = pred.data() + (f - 1) * p * 3;
    const double* pz = pred.data() + f * p * 3;
    const double* pp = pred.data() + (f + 1) * p * 3;
    const double* gm = gt.data() + (f - 1) * p * 3;
    const double* gz = gt.data() + f * p * 3;
    const double* gp = gt.data() + (f + 1) * p * 3;
    double s = 0.0;
    for (std::int64_t j = 0; j < p; ++j) {
      double d[3];
      for (int c = 0; c < 3; ++c) {
        const double ap = pp[j * 3 + c] - 2.0 * pz[j * 3 + c] + pm[j * 3 + c];
        const double ag =
            static_gt ? 0.0 : gp[j * 3 + c] - 2.0 * gz[j * 3 + c] + gm[j * 3 + c];
        d[c] = ap - ag;
      }
      s += std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    }
    out[static_cast<std::size_t>(f - 1)] = unit * s / static_cast<double>(p);
  }
  return out;
}

MetricReport evaluate_sequence(const Tensor& pred_joints, const Tensor& gt_joints,
                               const Tensor& pred_verts, const Tensor& gt_verts, double fps,
                               bool static_accel_gt) {
  MetricReport r;
  r.mpjpe = mpjpe_frames(pred_joints, gt_joints);
  r.pa_mpjpe = pa_mpjpe_frames(pred_joints, gt_joints);
  const auto l = pred_joints.dim(0), p = pred_joints.dim(1);
  std::vector<double> proots, groots;
  for (std::int64_t f = 0; f < l; ++f)
    for (int c = 0; c < 3; ++c) {
      proots.push_back(pred_joints.at(f * p * 3 + c));
      groots.push_back(gt_joints.at(f * p * 3 + c));
    }
  r.pve = pve_frames(pred_verts, gt_verts, Tensor({l, 3}, std::move(proots)),
                     Tensor({l, 3}, std::move(groots)));
  if (l >= 3) r.accel = accel_frames(pred_joints, gt_joints, fps, static_accel_gt);
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  r.mean_mpjpe = mean(r.mpjpe);
  r.mean_pa_mpjpe = mean(r.pa_mpjpe);
  r.mean_pve = mean(r.pve);
  r.mean_accel = mean(r.accel);
  return r;
}

std::string metric_csv(const MetricReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "frame,mpjpe,pa_mpjpe,pve,accel\n";
  const auto l = report.mpjpe.size();
  for (std::size_t f = 0; f < l; ++f) {
    out << (f + 1) << "," << report.mpjpe[f] << "," << report.pa_mpjpe[f] << ","
        << report.pve[f] << ",";
    if (f >= 1 && f + 1 < l && f - 1 < report.accel.size()) out << report.accel[f - 1];
    out << "\n";
  }
  return out.str();
}

}  // namespace staf
