#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dpsep/types.hpp"

namespace dpsep {

// Side information for a conditional denoiser. An absent vector selects the
// unconditional branch.
struct Conditioning {
  std::vector<double> values;
  bool present = false;

  static Conditioning absent() { return {}; }
  static Conditioning of(std::vector<double> v) { return {std::move(v), true}; }
};

// A denoiser output together with its vector-Jacobian product at that input.
struct Linearization {
  Signal value;
  std::function<Signal(SignalView)> pullback;
};

// D(x_tau, sigma[, cond]) -> estimate of x_0, plus J^T v with J = dD/dx_tau.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  // Signal length the model is dimensioned for; 0 means any length.
  virtual std::size_t dim() const = 0;

  virtual Signal denoise(SignalView x, double sigma, const Conditioning& cond) const = 0;
  virtual Signal vjp(SignalView x, double sigma, const Conditioning& cond,
                     SignalView v) const = 0;

  // Models with an expensive forward pass override this to reuse it for the
  // pullback.
  virtual Linearization linearize(SignalView x, double sigma,
                                  const Conditioning& cond) const;
};

// (D(x, sigma) - x) / sigma^2.
Signal score_from_denoiser(const ScoreModel& model, SignalView x, double sigma,
                           const Conditioning& cond);
Signal score_from_estimate(SignalView estimate, SignalView x, double sigma);

// Classifier-free guidance, interpolating form D_u + w (D_c - D_u).
// w == 0 and w == 1 return the branch outputs without mixing.
Signal cfg_denoise(const ScoreModel& model, SignalView x, double sigma,
                   const Conditioning& cond, double w);
Linearization cfg_linearize(const ScoreModel& model, SignalView x, double sigma,
                            const Conditioning& cond, double w);

// Central-difference J^T v, one probe pair per input coordinate. Test oracle.
Signal vjp_finite_diff_oracle(const ScoreModel& model, SignalView x, double sigma,
                              const Conditioning& cond, SignalView v, double h);

class GaussianPrior final : public ScoreModel {
 public:
  GaussianPrior(Signal mean, Signal var);

  const Signal& mean() const { return mean_; }
  const Signal& var() const { return var_; }

  std::size_t dim() const override { return mean_.size(); }
  Signal denoise(SignalView x, double sigma, const Conditioning& cond) const override;
  Signal vjp(SignalView x, double sigma, const Conditioning& cond,
             SignalView v) const override;

 private:
  Signal mean_;
  Signal var_;
};

Signal gaussian_denoise(const GaussianPrior& prior, SignalView x, double sigma);

// Mixture of diagonal Gaussians over the whole vector. Responsibilities use
// N(x; mean_k, diag(var_k + sigma^2)).
class GmmPrior final : public ScoreModel {
 public:
  GmmPrior(std::vector<double> weights, std::vector<Signal> means,
           std::vector<Signal> vars);

  std::size_t components() const { return weights_.size(); }
  std::size_t dim() const override { return means_.front().size(); }
  Signal denoise(SignalView x, double sigma, const Conditioning& cond) const override;
  Signal vjp(SignalView x, double sigma, const Conditioning& cond,
             SignalView v) const override;

  std::vector<double> responsibilities(SignalView x, double sigma) const;

 private:
  std::vector<double> weights_;
  std::vector<Signal> means_;
  std::vector<Signal> vars_;
};

Signal gmm_denoise(const std::vector<double>& weights, const std::vector<Signal>& means,
                   const std::vector<Signal>& vars, SignalView x, double sigma);

}  // namespace dpsep
