#include "dpsep/score_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dpsep {
namespace {

void require_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("denoiser: sigma must be finite and > 0");
  }
}

void require_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != 0 && expected != got) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

}  // namespace

Linearization ScoreModel::linearize(SignalView x, double sigma,
                                    const Conditioning& cond) const {
  Linearization lin;
  lin.value = denoise(x, sigma, cond);
  lin.pullback = [this, xs = Signal(x.begin(), x.end()), sigma, cond](SignalView v) {
    return vjp(xs, sigma, cond, v);
  };
  return lin;
}

Signal score_from_estimate(SignalView estimate, SignalView x, double sigma) {
  require_sigma(sigma);
  require_dim(x.size(), estimate.size(), "score");
  const double inv = 1.0 / (sigma * sigma);
  Signal s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = (estimate[i] - x[i]) * inv;
  return s;
}

Signal score_from_denoiser(const ScoreModel& model, SignalView x, double sigma,
                           const Conditioning& cond) {
  return score_from_estimate(model.denoise(x, sigma, cond), x, sigma);
}

Signal cfg_denoise(const ScoreModel& model, SignalView x, double sigma,
                   const Conditioning& cond, double w) {
  if (w == 0.0) return model.denoise(x, sigma, Conditioning::absent());
  if (!cond.present) {
    throw std::invalid_argument("cfg_denoise: conditioning required when w != 0");
  }
  if (w == 1.0) return model.denoise(x, sigma, cond);
  const Signal uncond = model.denoise(x, sigma, Conditioning::absent());
  const Signal guided = model.denoise(x, sigma, cond);
  Signal out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = uncond[i] + w * (guided[i] - uncond[i]);
  }
  return out;
}

Linearization cfg_linearize(const ScoreModel& model, SignalView x, double sigma,
                            const Conditioning& cond, double w) {
  if (w == 0.0) return model.linearize(x, sigma, Conditioning::absent());
  if (!cond.present) {
    throw std::invalid_argument("cfg_denoise: conditioning required when w != 0");
  }
  if (w == 1.0) return model.linearize(x, sigma, cond);

  Linearization uncond = model.linearize(x, sigma, Conditioning::absent());
  Linearization guided = model.linearize(x, sigma, cond);
  Linearization out;
  out.value.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.value[i] = uncond.value[i] + w * (guided.value[i] - uncond.value[i]);
  }
  out.pullback = [u = std::move(uncond.pullback), g = std::move(guided.pullback),
                  w](SignalView v) {
    Signal a = u(v);
    const Signal b = g(v);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = (1.0 - w) * a[i] + w * b[i];
    return a;
  };
  return out;
}

Signal vjp_finite_diff_oracle(const ScoreModel& model, SignalView x, double sigma,
                              const Conditioning& cond, SignalView v, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd oracle: step must be > 0");
  Signal probe(x.begin(), x.end());
  Signal out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const Signal up = model.denoise(probe, sigma, cond);
    probe[j] = x[j] - h;
    const Signal down = model.denoise(probe, sigma, cond);
    probe[j] = x[j];
    double acc = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) acc += v[i] * (up[i] - down[i]);
    out[j] = acc / (2.0 * h);
  }
  return out;
}

// ---------------------------------------------------------------------------

GaussianPrior::GaussianPrior(Signal mean, Signal var)
    : mean_(std::move(mean)), var_(std::move(var)) {
  if (mean_.empty() || mean_.size() != var_.size()) {
    throw std::invalid_argument("GaussianPrior: mean/var size mismatch");
  }
  for (double v : var_) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("GaussianPrior: variances must be > 0");
    }
  }
}

Signal GaussianPrior::denoise(SignalView x, double sigma, const Conditioning&) const {
  require_sigma(sigma);
  require_dim(dim(), x.size(), "GaussianPrior");
  const double s2 = sigma * sigma;
  Signal out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = mean_[i] + (var_[i] / (var_[i] + s2)) * (x[i] - mean_[i]);
  }
  return out;
}

Signal GaussianPrior::vjp(SignalView x, double sigma, const Conditioning&,
                          SignalView v) const {
  require_sigma(sigma);
  require_dim(dim(), x.size(), "GaussianPrior");
  require_dim(dim(), v.size(), "GaussianPrior vjp");
  const double s2 = sigma * sigma;
  Signal out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (var_[i] / (var_[i] + s2)) * v[i];
  return out;
}

Signal gaussian_denoise(const GaussianPrior& prior, SignalView x, double sigma) {
  return prior.denoise(x, sigma, Conditioning::absent());
}

// ---------------------------------------------------------------------------

GmmPrior::GmmPrior(std::vector<double> weights, std::vector<Signal> means,
                   std::vector<Signal> vars)
    : weights_(std::move(weights)), means_(std::move(means)), vars_(std::move(vars)) {
  if (weights_.empty() || weights_.size() != means_.size() ||
      weights_.size() != vars_.size()) {
    throw std::invalid_argument("GmmPrior: component count mismatch");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0)) throw std::invalid_argument("GmmPrior: weights must be > 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("GmmPrior: weights must sum to 1");
  }
  const std::size_t d = means_.front().size();
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (means_[k].size() != d || vars_[k].size() != d || d == 0) {
      throw std::invalid_argument("GmmPrior: component dimension mismatch");
    }
    for (double v : vars_[k]) {
      if (!(v > 0.0)) throw std::invalid_argument("GmmPrior: variances must be > 0");
    }
  }
}

std::vector<double> GmmPrior::responsibilities(SignalView x, double sigma) const {
  require_sigma(sigma);
  require_dim(dim(), x.size(), "GmmPrior");
  const double s2 = sigma * sigma;
  const std::size_t k_count = weights_.size();
  std::vector<double> logp(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    double acc = std::log(weights_[k]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double var = vars_[k][i] + s2;
      const double diff = x[i] - means_[k][i];
      acc -= 0.5 * (diff * diff / var + std::log(var));
    }
    logp[k] = acc;
  }
  const double top = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  for (double& l : logp) {
    l = std::exp(l - top);
    total += l;
  }
  for (double& l : logp) l /= total;
  return logp;
}

Signal GmmPrior::denoise(SignalView x, double sigma, const Conditioning&) const {
  const auto resp = responsibilities(x, sigma);
  const double s2 = sigma * sigma;
  Signal out(x.size(), 0.0);
  for (std::size_t k = 0; k < resp.size(); ++k) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double shrunk =
          means_[k][i] + (vars_[k][i] / (vars_[k][i] + s2)) * (x[i] - means_[k][i]);
      out[i] += resp[k] * shrunk;
    }
  }
  return out;
}

Signal GmmPrior::vjp(SignalView x, double sigma, const Conditioning&, SignalView v) const {
  require_dim(dim(), v.size(), "GmmPrior vjp");
  const auto resp = responsibilities(x, sigma);
  const double s2 = sigma * sigma;
  const std::size_t d = x.size();
  const std::size_t k_count = resp.size();

  // D = sum_k r_k m_k, with dr_k/dx = r_k (g_k - sum_j r_j g_j) and
  // g_k = -(x - mean_k) / (var_k + sigma^2).
  std::vector<double> m_dot_v(k_count, 0.0);
  std::vector<Signal> grad_logp(k_count, Signal(d));
  Signal mean_grad(d, 0.0);
  Signal out(d, 0.0);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      const double gain = vars_[k][i] / (vars_[k][i] + s2);
      const double m = means_[k][i] + gain * (x[i] - means_[k][i]);
      m_dot_v[k] += m * v[i];
      grad_logp[k][i] = -(x[i] - means_[k][i]) / (vars_[k][i] + s2);
      mean_grad[i] += resp[k] * grad_logp[k][i];
      out[i] += resp[k] * gain * v[i];
    }
  }
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      out[i] += m_dot_v[k] * resp[k] * (grad_logp[k][i] - mean_grad[i]);
    }
  }
  return out;
}

Signal gmm_denoise(const std::vector<double>& weights, const std::vector<Signal>& means,
                   const std::vector<Signal>& vars, SignalView x, double sigma) {
  return GmmPrior(weights, means, vars).denoise(x, sigma, Conditioning::absent());
}

}  // namespace dpsep
