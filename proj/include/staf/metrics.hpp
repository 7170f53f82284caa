#pragma once

#include <optional>
#include <string>
#include <vector>

#include "staf/ops.hpp"

namespace staf {

// Ground truth available for one frame. Joints are millimeters; 2D points
// are normalized image coordinates. A missing field drops its loss term.
struct FrameAnnotation {
  std::optional<Tensor> gt_theta;     // {D}
  std::optional<Tensor> gt_joints3d;  // {P,3}
  std::optional<Tensor> gt_joints2d;  // {P,2}
};

struct LossWeights {
  double params = 1.0;
  double joints3d = 1.0;
  double joints2d = 1.0;

  void validate() const;
};

// Weighted sum of Euclidean norms of the three residuals, each term dropped
// when its annotation is absent. pred_joints3d is millimeters.
Var loss_total(const Var& pred_theta, const Var& pred_joints3d, const Var& pred_joints2d,
               const FrameAnnotation& ann, const LossWeights& lw);

struct Similarity {
  double s = 1.0;
  Tensor R;  // {3,3}
  Tensor t;  // {3}
};

// Similarity transform minimizing ||s*R*A + t - B||^2 over rows of A, B
// ({P,3}, P >= 3). Rejects degenerate A (coincident points).
Similarity procrustes_align(const Tensor& a, const Tensor& b);

// Per-frame metrics; all joint/vertex arguments are {L,P,3} / {L,N,3} in mm.
std::vector<double> mpjpe_frames(const Tensor& pred, const Tensor& gt);
std::vector<double> pa_mpjpe_frames(const Tensor& pred, const Tensor& gt);
// Root-aligned vertex error; roots are each sequence's joint 0, {L,3}.
std::vector<double> pve_frames(const Tensor& pred_verts, const Tensor& gt_verts,
                               const Tensor& pred_roots, const Tensor& gt_roots);
// Second-difference error for interior frames (L-2 values). static_gt treats
// the ground truth as having zero acceleration. Scaled by fps^2 when fps > 0.
std::vector<double> accel_frames(const Tensor& pred, const Tensor& gt, double fps = 0.0,
                                 bool static_gt = false);

struct MetricReport {
  std::vector<double> mpjpe, pa_mpjpe, pve;  // one per frame
  std::vector<double> accel;                 // one per interior frame
  double mean_mpjpe = 0.0, mean_pa_mpjpe = 0.0, mean_pve = 0.0, mean_accel = 0.0;
};

MetricReport evaluate_sequence(const Tensor& pred_joints, const Tensor& gt_joints,
                               const Tensor& pred_verts, const Tensor& gt_verts, double fps = 0.0,
                               bool static_accel_gt = false);

// Columns frame,mpjpe,pa_mpjpe,pve,accel; the accel cell is empty on the
// first and last frames where the second difference is undefined.
std::string metric_csv(const MetricReport& report);

}  // namespace staf
