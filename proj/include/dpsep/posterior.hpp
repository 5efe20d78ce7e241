#pragma once

#include <vector>

#include "dpsep/score_model.hpp"
#include "dpsep/spectral.hpp"

namespace dpsep {

// Diffusion state of all K speech signals and the noise at one noise level.
struct JointState {
  std::vector<Signal> speech;
  Signal noise;
  double sigma = 0.0;
};

struct GuidanceConfig {
  double zeta = 0.5;
  double grad_norm_floor = 1e-12;

  void validate() const;
};

// The two priors plus per-speaker conditioning. Every speaker shares the
// speech prior; the noise prior is unconditional.
struct SourcePriors {
  const ScoreModel& speech;
  const ScoreModel& noise;
  std::vector<Conditioning> conds;  // one per speaker
  double cfg_weight = 1.0;

  std::size_t speakers() const { return conds.size(); }
};

struct PosteriorDiagnostics {
  double rec_loss = 0.0;
  double zeta_x = 0.0;
  double zeta_n = 0.0;
  double speech_grad_norm = 0.0;  // norm of the concatenated speech gradient
  double noise_grad_norm = 0.0;
  std::vector<double> source_grad_norms;
};

struct PosteriorScores {
  std::vector<Signal> speech_scores;
  Signal noise_score;
  PosteriorDiagnostics diagnostics;

  // One-step estimates of the clean signals and the raw reconstruction-loss
  // gradients with respect to each latent (empty when zeta == 0).
  std::vector<Signal> speech_estimates;
  Signal noise_estimate;
  std::vector<Signal> speech_loss_grads;
  Signal noise_loss_grad;
};

// Prior scores from the denoisers plus the zeta-normalized gradient of the
// compressed-spectrogram reconstruction loss, routed back through each
// denoiser's vector-Jacobian product. Throws NumericalError on NaN/inf.
PosteriorScores posterior_score(const ReconstructionLoss& loss, const JointState& state,
                                const SourcePriors& priors, const GuidanceConfig& gcfg);

PosteriorScores posterior_score(SignalView y, const JointState& state,
                                const SourcePriors& priors, const GuidanceConfig& gcfg,
                                const StftConfig& stft_cfg);

PosteriorDiagnostics guidance_norms(const PosteriorScores& scores);

double l2_norm(SignalView v);

}  // namespace dpsep
