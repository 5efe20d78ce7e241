#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "dpsep/posterior.hpp"
#include "dpsep/schedule.hpp"

namespace dpsep {

struct SamplerConfig {
  SigmaSchedule schedule;
  ChurnConfig churn;
  std::uint64_t seed = 0;
  // Replace the state at sigma_min by the denoiser's one-step estimate.
  bool final_denoise = true;
  bool capture_trajectory = true;
};

struct TrajectoryRow {
  std::size_t step = 0;
  double sigma = 0.0;      // sigma_i
  double sigma_hat = 0.0;  // after churn
  PosteriorDiagnostics diagnostics;
  double state_norm = 0.0;
};

struct SeparationResult {
  std::vector<Signal> speech;
  Signal noise;
  std::vector<TrajectoryRow> trajectory;
};

// Stacked state: speech 1..K followed by the noise signal.
using StackedState = std::vector<Signal>;
using StackedScoreFn = std::function<StackedState(const StackedState&, double sigma)>;

// K + 1 vectors drawn i.i.d. from N(0, sigma_max^2), speech first.
JointState init_state(std::size_t speakers, std::size_t len, double sigma_max,
                      std::mt19937_64& rng);

// u <- u + sqrt(sigma_hat^2 - sigma^2) * s_noise * eps, sub-vectors in order.
void apply_churn(StackedState& u, double sigma, double sigma_hat, double s_noise,
                 std::mt19937_64& rng);

// Stochastic second-order sampler over the whole ladder: churn, Euler
// predictor, Heun corrector, from levels[0] down to levels[N-1].
// `on_step` sees the step index, sigma_i, sigma_hat and the state after churn.
void heun_solve(StackedState& u, const SigmaSchedule& schedule, const ChurnConfig& churn,
                std::mt19937_64& rng, const StackedScoreFn& score,
                const std::function<void(std::size_t, double, double, const StackedState&)>&
                    on_step = {});

SeparationResult sample_posterior(SignalView y, const SourcePriors& priors,
                                  const SamplerConfig& scfg, const GuidanceConfig& gcfg,
                                  const StftConfig& stft_cfg);

Signal unconditional_sample(const ScoreModel& model, std::size_t len,
                            const SamplerConfig& scfg, const Conditioning& cond,
                            std::mt19937_64& rng);

// CSV columns: step,sigma,sigma_hat,rec_loss,zeta_x,zeta_n,speech_grad_norm,
// noise_grad_norm,state_norm
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows);

}  // namespace dpsep
