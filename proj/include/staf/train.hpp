#pragma once

#include <cstdint>
#include <vector>

#include "staf/metrics.hpp"
#include "staf/pipeline.hpp"
#include "staf/synth.hpp"

namespace staf {

struct TrainConfig {
  std::int64_t steps = 2000;
  double lr = 1e-2;
  LossWeights lw;
  // Supervision also reaches the two intermediate parameter estimates so the
  // early stages receive a direct error signal.
  double aux_weight = 0.5;
  // Plateau schedule: when the best loss has not improved by min_rel_improve
  // for `patience` consecutive steps, the rate drops by 10x.
  std::int64_t patience = 100;
  double min_rel_improve = 1e-3;
  // Optional early exit once loss falls below this fraction of the initial
  // loss; 0 disables it.
  double stop_loss_frac = 0.0;
  bool apm_enabled = true;
};

struct TrainReport {
  // losses[k] is the full-batch loss of the weights before step k, so
  // losses.front() is the untrained loss and losses.back() the final one.
  std::vector<double> losses;
  std::vector<double> lr_trace;    // rate used at each step
  std::int64_t aborted_step = -1;  // set when a non-finite loss stopped the run
};

// Plain full-batch gradient descent of the windowed supervision loss over
// every target frame of the clip. Mutates the model in place.
TrainReport train_overfit(StafModel& model, const SequenceData& seq, const TrainConfig& cfg);

// Mean per-joint error (mm) of the final-stage predictions over the clip.
double sequence_mpjpe(const StafModel& model, const SequenceData& seq, bool apm_enabled = true,
                      int threads = 1);

// The clip's base feature maps as a per-frame list.
std::vector<Tensor> sequence_frames(const SequenceData& seq);

// Posed joints (mm) for each row of a {L,D} parameter matrix.
Tensor joints_mm_from_params(const StafModel& model, const Tensor& theta_rows);

struct AblateResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> accel_on, accel_off;  // mean accel error per seed, mm/frame^2
  double median_on = 0.0, median_off = 0.0;
};

// For each seed: a fresh template, clip, and randomly initialized model; the
// clip is run with the window-mean smoothing enabled and disabled and the
// acceleration error of the predicted joints is recorded.
AblateResult ablate_apm(const PyramidConfig& pc, const TemplateConfig& tcfg, std::int64_t T,
                        const SynthSpec& base, std::int64_t n_seeds, const ModelInit& mi,
                        int threads = 1);

double median(std::vector<double> v);

}  // namespace staf
