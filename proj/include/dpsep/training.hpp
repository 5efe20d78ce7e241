#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpsep/frame_denoiser.hpp"
#include "dpsep/schedule.hpp"

namespace dpsep {

struct TrainingExample {
  Signal signal;
  Conditioning cond;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double lr = 1e-4;
  double cond_dropout = 0.1;
  std::size_t crop_len = 1024;
  std::uint64_t seed = 0;
  // Weight each sample by 1/c_out(sigma)^2, i.e. an unweighted loss on the
  // raw network output. Logged losses are always the plain L2 denoising loss.
  bool edm_weighting = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;           // mean over batch of ||D(x + sigma eps) - x||^2 / len
  double weighted_loss = 0.0;  // what the optimizer sees
};

struct AdamState {
  std::vector<FrameDenoiser::Matrix> m;
  std::vector<FrameDenoiser::Matrix> v;
  std::size_t step = 0;
};

// Root-mean-square amplitude of the corpus (used as sigma_data).
double estimate_sigma_data(const std::vector<TrainingExample>& data);

// Per-coordinate loss of the identity predictor D(x) = x, averaged over a
// uniform draw from the schedule: mean_i sigma_i^2.
double identity_baseline_loss(const SigmaSchedule& schedule);

class DenoiserTrainer {
 public:
  DenoiserTrainer(FrameDenoiser model, TrainConfig cfg, SigmaSchedule schedule,
                  AdamState state = {});

  // Runs `steps` optimizer updates. Throws NumericalError on a non-finite loss.
  std::vector<TrainLogEntry> run(const std::vector<TrainingExample>& data,
                                 std::size_t steps,
                                 const std::function<void(const TrainLogEntry&)>& on_step = {});

  const FrameDenoiser& model() const { return model_; }
  const AdamState& optimizer() const { return adam_; }

 private:
  TrainLogEntry step(const std::vector<TrainingExample>& data, std::mt19937_64& rng);

  FrameDenoiser model_;
  TrainConfig cfg_;
  SigmaSchedule schedule_;
  AdamState adam_;
};

struct TrainResult {
  FrameDenoiser model;
  AdamState optimizer;
  std::vector<TrainLogEntry> log;
};

// Fresh model (sigma_data from the corpus) trained for cfg.steps updates.
TrainResult train_denoiser(const std::vector<TrainingExample>& data,
                           const SigmaSchedule& schedule, const FrameDenoiserConfig& arch,
                           const TrainConfig& cfg);

}  // namespace dpsep
