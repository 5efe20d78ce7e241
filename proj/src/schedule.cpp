#include "dpsep/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dpsep {

void ChurnConfig::validate() const {
  if (!(s_churn >= 0.0) || !std::isfinite(s_churn)) {
    throw std::invalid_argument("churn: s_churn must be finite and >= 0");
  }
  if (!(s_tmin <= s_tmax)) {
    throw std::invalid_argument("churn: s_tmin must be <= s_tmax");
  }
  if (!(s_noise > 0.0)) {
    throw std::invalid_argument("churn: s_noise must be > 0");
  }
}

SigmaSchedule build_schedule(double sigma_max, double sigma_min, double rho,
                             std::size_t n_steps) {
  if (!std::isfinite(sigma_max) || !std::isfinite(sigma_min) ||
      !(sigma_min > 0.0) || !(sigma_max > sigma_min)) {
    throw std::invalid_argument("schedule: requires sigma_max > sigma_min > 0");
  }
  if (!std::isfinite(rho) || !(rho >= 1.0)) {
    throw std::invalid_argument("schedule: requires rho >= 1");
  }
  if (n_steps < 2) {
    throw std::invalid_argument("schedule: requires n_steps >= 2");
  }

  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  const double last = static_cast<double>(n_steps - 1);

  std::vector<double> levels(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double frac = static_cast<double>(i) / last;
    levels[i] = std::pow(hi + frac * (lo - hi), rho);
  }
  levels.front() = sigma_max;
  levels.back() = sigma_min;

  for (std::size_t i = 0; i + 1 < n_steps; ++i) {
    if (!(levels[i] > levels[i + 1])) {
      throw std::invalid_argument("schedule: levels collapse at index " +
                                  std::to_string(i) +
                                  " (range too narrow for n_steps)");
    }
  }
  return SigmaSchedule(std::move(levels), rho);
}

double churn_gamma(const SigmaSchedule& schedule, const ChurnConfig& cfg,
                   std::size_t i) {
  if (i >= schedule.size()) {
    throw std::out_of_range("churn_gamma: step index " + std::to_string(i) +
                            " out of range");
  }
  if (cfg.s_churn == 0.0) return 0.0;
  const double sigma = schedule[i];
  if (sigma < cfg.s_tmin || sigma > cfg.s_tmax) return 0.0;
  const double n = static_cast<double>(schedule.size());
  return std::min(cfg.s_churn / n, std::sqrt(2.0) - 1.0);
}

double sample_training_sigma(const SigmaSchedule& schedule, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, schedule.size() - 1);
  return schedule[pick(rng)];
}

}  // namespace dpsep
