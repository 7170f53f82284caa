#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "staf/body_model.hpp"
#include "staf/metrics.hpp"
#include "staf/pyramid.hpp"
#include "staf/serialize.hpp"
#include "staf/tensor.hpp"

namespace staf {

// Recipe for one synthetic motion clip. Keyframes are drawn uniformly inside
// the amplitudes; frames in between come from cubic interpolation, so the
// ground-truth trajectory is smooth by construction.
struct SynthSpec {
  std::int64_t length = 60;
  std::int64_t keyframes = 4;
  double pose_amp = 0.3;    // radians, per axis-angle coordinate
  double shape_amp = 0.5;   // shape coefficient range
  double cam_jitter = 0.05; // camera scale/translation range around (1, 0)
  double noise_sigma = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

// Stand-in for the image backbone: a fixed seeded linear map from the
// ground-truth parameters (plus low-frequency time features) to a base
// feature map, with additive per-frame noise. Linear on purpose, so the
// recovery problem stays solvable; every nonlinearity lives in the model
// under test.
class StubEncoder {
 public:
  StubEncoder(const PyramidConfig& pc, std::int64_t param_len, std::uint64_t seed,
              double noise_sigma);

  // Deterministic in (seed, theta, t); length only sets the time-feature
  // frequencies.
  Tensor encode(const Tensor& theta, std::int64_t t, std::int64_t length) const;

 private:
  PyramidConfig pc_;
  Tensor w_;  // {C0*H0*W0, param_len + 4}
  double noise_sigma_;
  std::uint64_t seed_;
};

// A generated clip with exact ground truth. Joints and vertices are stored
// in meters.
struct SequenceData {
  SynthSpec spec;
  TemplateConfig tcfg;
  std::uint64_t template_hash = 0;
  Tensor theta_gt;   // {L,D}
  Tensor phi0;       // {L,C0,H0,W0}
  Tensor joints;     // {L,J+1,3}
  Tensor vertices;   // {L,N,3}

  std::int64_t length() const { return theta_gt.dim(0); }
};

// Centripetal-free Catmull-Rom with clamped endpoints over K control rows;
// u in [0, K-1]. Exposed for the finite-difference smoothness tests.
Tensor catmull_rom(const std::vector<Tensor>& keys, double u);

// Canonical template for a spec seed, so any tool holding just the sequence
// file can rebuild the body the clip was generated with (checked against the
// stored template hash).
BodyTemplate template_for_spec(const SynthSpec& spec, const TemplateConfig& tcfg);

SequenceData generate_synthetic(const SynthSpec& spec, const BodyTemplate& tmpl,
                                const PyramidConfig& pc, int threads = 1);

void save_sequence(const std::string& path, const SequenceData& seq);
SequenceData load_sequence(const std::string& path);

// The per-frame supervision targets the loss consumes, in millimeters and
// normalized image coordinates. Derived from the stored ground truth.
FrameAnnotation annotation_for_frame(const SequenceData& seq, const BodyTemplate& tmpl,
                                     std::int64_t t);

}  // namespace staf
