#include "dpsep/sampler.hpp"

#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dpsep {
namespace {

void require_finite(const StackedState& u, std::size_t step, double sigma) {
  for (const Signal& s : u) {
    for (double v : s) {
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "sampler: non-finite state at step " << step << " (sigma=" << sigma << ")";
        throw NumericalError(msg.str());
      }
    }
  }
}

double stacked_norm(const StackedState& u) {
  double acc = 0.0;
  for (const Signal& s : u) {
    for (double v : s) acc += v * v;
  }
  return std::sqrt(acc);
}

}  // namespace

JointState init_state(std::size_t speakers, std::size_t len, double sigma_max,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  JointState state;
  state.sigma = sigma_max;
  state.speech.assign(speakers, Signal(len));
  for (Signal& s : state.speech) {
    for (double& v : s) v = sigma_max * normal(rng);
  }
  state.noise.resize(len);
  for (double& v : state.noise) v = sigma_max * normal(rng);
  return state;
}

void apply_churn(StackedState& u, double sigma, double sigma_hat, double s_noise,
                 std::mt19937_64& rng) {
  const double amount = std::sqrt(std::max(sigma_hat * sigma_hat - sigma * sigma, 0.0)) * s_noise;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Signal& s : u) {
    for (double& v : s) v += amount * normal(rng);
  }
}

void heun_solve(StackedState& u, const SigmaSchedule& schedule, const ChurnConfig& churn,
                std::mt19937_64& rng, const StackedScoreFn& score,
                const std::function<void(std::size_t, double, double, const StackedState&)>&
                    on_step) {
  churn.validate();
  const auto& levels = schedule.levels();
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const double sigma = levels[i];
    const double next = levels[i + 1];
    const double gamma = churn_gamma(schedule, churn, i);
    const double sigma_hat = sigma * (1.0 + gamma);
    if (gamma > 0.0) apply_churn(u, sigma, sigma_hat, churn.s_noise, rng);
    if (on_step) on_step(i, sigma, sigma_hat, u);

    // dx/dsigma = -sigma * score
    const double dt = next - sigma_hat;
    const StackedState p = score(u, sigma_hat);
    StackedState d1(u.size());
    StackedState trial(u.size());
    for (std::size_t s = 0; s < u.size(); ++s) {
      d1[s].resize(u[s].size());
      trial[s].resize(u[s].size());
      for (std::size_t j = 0; j < u[s].size(); ++j) {
        d1[s][j] = -sigma_hat * p[s][j];
        trial[s][j] = u[s][j] + dt * d1[s][j];
      }
    }
    if (next > 0.0) {
      const StackedState p2 = score(trial, next);
      for (std::size_t s = 0; s < u.size(); ++s) {
        for (std::size_t j = 0; j < u[s].size(); ++j) {
          u[s][j] += dt * 0.5 * (d1[s][j] - next * p2[s][j]);
        }
      }
    } else {
      u = std::move(trial);
    }
    require_finite(u, i, next);
  }
}

SeparationResult sample_posterior(SignalView y, const SourcePriors& priors,
                                  const SamplerConfig& scfg, const GuidanceConfig& gcfg,
                                  const StftConfig& stft_cfg) {
  gcfg.validate();
  const std::size_t k_count = priors.speakers();
  const std::size_t d = y.size();
  if (d == 0) throw std::invalid_argument("sample_posterior: empty mixture");
  for (const ScoreModel* m : {&priors.speech, &priors.noise}) {
    if (m->dim() != 0 && m->dim() != d) {
      throw std::invalid_argument("sample_posterior: model dimension does not match mixture");
    }
  }

  const ReconstructionLoss loss(y, stft_cfg);
  std::mt19937_64 rng(scfg.seed);
  JointState init = init_state(k_count, d, scfg.schedule.sigma_max(), rng);
  StackedState u = std::move(init.speech);
  u.push_back(std::move(init.noise));

  SeparationResult result;
  bool first_eval = true;
  TrajectoryRow pending;

  auto score = [&](const StackedState& v, double sigma) {
    JointState state{StackedState(v.begin(), v.end() - 1), v.back(), sigma};
    PosteriorScores scores = posterior_score(loss, state, priors, gcfg);
    if (first_eval && scfg.capture_trajectory) {
      pending.diagnostics = scores.diagnostics;
      result.trajectory.push_back(pending);
      first_eval = false;
    }
    StackedState out = std::move(scores.speech_scores);
    out.push_back(std::move(scores.noise_score));
    return out;
  };
  auto on_step = [&](std::size_t i, double sigma, double sigma_hat, const StackedState& v) {
    first_eval = true;
    pending = TrajectoryRow{i, sigma, sigma_hat, {}, stacked_norm(v)};
  };

  heun_solve(u, scfg.schedule, scfg.churn, rng, score, on_step);

  const double sigma_min = scfg.schedule.sigma_min();
  if (scfg.final_denoise) {
    for (std::size_t i = 0; i < k_count; ++i) {
      result.speech.push_back(
          cfg_denoise(priors.speech, u[i], sigma_min, priors.conds[i], priors.cfg_weight));
    }
    result.noise = priors.noise.denoise(u.back(), sigma_min, Conditioning::absent());
  } else {
    result.speech.assign(u.begin(), u.end() - 1);
    result.noise = u.back();
  }
  return result;
}

Signal unconditional_sample(const ScoreModel& model, std::size_t len,
                            const SamplerConfig& scfg, const Conditioning& cond,
                            std::mt19937_64& rng) {
  if (len == 0) throw std::invalid_argument("unconditional_sample: empty length");
  std::normal_distribution<double> normal(0.0, 1.0);
  StackedState u(1, Signal(len));
  for (double& v : u[0]) v = scfg.schedule.sigma_max() * normal(rng);

  auto score = [&](const StackedState& v, double sigma) {
    return StackedState{score_from_denoiser(model, v[0], sigma, cond)};
  };
  heun_solve(u, scfg.schedule, scfg.churn, rng, score);
  if (scfg.final_denoise) return model.denoise(u[0], scfg.schedule.sigma_min(), cond);
  return u[0];
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << "step,sigma,sigma_hat,rec_loss,zeta_x,zeta_n,speech_grad_norm,noise_grad_norm,"
         "state_norm\n";
  out.precision(10);
  for (const auto& r : rows) {
    const auto& d = r.diagnostics;
    out << r.step << ',' << r.sigma << ',' << r.sigma_hat << ',' << d.rec_loss << ','
        << d.zeta_x << ',' << d.zeta_n << ',' << d.speech_grad_norm << ','
        << d.noise_grad_norm << ',' << r.state_norm << '\n';
  }
}

}  // namespace dpsep
