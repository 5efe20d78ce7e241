#pragma once

#include <cstddef>
#include <limits>
#include <random>
#include <vector>

namespace dpsep {

// Discretized variance-exploding noise ladder, sigma_0 = sigma_max down to
// sigma_{N-1} = sigma_min, warped by rho. Immutable once built.
class SigmaSchedule {
 public:
  const std::vector<double>& levels() const { return levels_; }
  std::size_t size() const { return levels_.size(); }
  double operator[](std::size_t i) const { return levels_[i]; }
  double sigma_max() const { return levels_.front(); }
  double sigma_min() const { return levels_.back(); }
  double rho() const { return rho_; }

 private:
  friend SigmaSchedule build_schedule(double, double, double, std::size_t);
  SigmaSchedule(std::vector<double> levels, double rho)
      : levels_(std::move(levels)), rho_(rho) {}

  std::vector<double> levels_;
  double rho_;
};

struct ChurnConfig {
  double s_churn = 0.0;
  double s_tmin = 0.0;
  double s_tmax = std::numeric_limits<double>::infinity();
  double s_noise = 1.0;

  void validate() const;
};

// levels[i] = (sigma_max^(1/rho) + i/(N-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho
// with both endpoints pinned to the inputs. Throws std::invalid_argument.
SigmaSchedule build_schedule(double sigma_max, double sigma_min, double rho,
                             std::size_t n_steps);

// Churn amount for step i: min(s_churn / N, sqrt(2) - 1) inside
// [s_tmin, s_tmax], zero outside. Throws std::out_of_range on a bad index.
double churn_gamma(const SigmaSchedule& schedule, const ChurnConfig& cfg,
                   std::size_t i);

// Uniform draw over the discrete levels.
double sample_training_sigma(const SigmaSchedule& schedule, std::mt19937_64& rng);

}  // namespace dpsep
