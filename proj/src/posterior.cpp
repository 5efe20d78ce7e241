#include "dpsep/posterior.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dpsep {
namespace {

bool all_finite(SignalView v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

[[noreturn]] void fail_non_finite(const char* what, const JointState& state,
                                  const PosteriorDiagnostics& diag) {
  std::ostringstream msg;
  msg << "posterior_score: non-finite " << what << " at sigma=" << state.sigma
      << " (rec_loss=" << diag.rec_loss << ", zeta_x=" << diag.zeta_x
      << ", zeta_n=" << diag.zeta_n << ", |grad_x|=" << diag.speech_grad_norm
      << ", |grad_n|=" << diag.noise_grad_norm << ")";
  throw NumericalError(msg.str());
}

}  // namespace

void GuidanceConfig::validate() const {
  if (!(zeta >= 0.0) || !std::isfinite(zeta)) {
    throw std::invalid_argument("guidance: zeta must be finite and >= 0");
  }
  if (!(grad_norm_floor > 0.0)) {
    throw std::invalid_argument("guidance: grad_norm_floor must be > 0");
  }
}

double l2_norm(SignalView v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

PosteriorScores posterior_score(const ReconstructionLoss& loss, const JointState& state,
                                const SourcePriors& priors, const GuidanceConfig& gcfg) {
  gcfg.validate();
  const std::size_t d = loss.signal_len();
  const std::size_t k_count = priors.speakers();
  const double sigma = state.sigma;
  if (!(sigma > 0.0)) throw std::invalid_argument("posterior_score: sigma must be > 0");
  if (state.speech.size() != k_count) {
    throw std::invalid_argument("posterior_score: state has " +
                                std::to_string(state.speech.size()) + " speech signals, " +
                                std::to_string(k_count) + " conditionings given");
  }
  if (state.noise.size() != d) throw std::invalid_argument("posterior_score: noise length");
  for (const Signal& x : state.speech) {
    if (x.size() != d) throw std::invalid_argument("posterior_score: speech length");
  }

  PosteriorScores out;
  auto& diag = out.diagnostics;

  // Noise prior.
  Linearization noise_lin = priors.noise.linearize(state.noise, sigma, Conditioning::absent());
  out.noise_score = score_from_estimate(noise_lin.value, state.noise, sigma);

  // Speech priors (classifier-free guided).
  std::vector<Linearization> speech_lin;
  speech_lin.reserve(k_count);
  for (std::size_t i = 0; i < k_count; ++i) {
    speech_lin.push_back(
        cfg_linearize(priors.speech, state.speech[i], sigma, priors.conds[i], priors.cfg_weight));
    out.speech_scores.push_back(score_from_estimate(speech_lin[i].value, state.speech[i], sigma));
  }

  Signal reconstruction(d, 0.0);
  for (const auto& lin : speech_lin) {
    for (std::size_t j = 0; j < d; ++j) reconstruction[j] += lin.value[j];
  }
  for (std::size_t j = 0; j < d; ++j) reconstruction[j] += noise_lin.value[j];

  for (const auto& lin : speech_lin) out.speech_estimates.push_back(lin.value);
  out.noise_estimate = noise_lin.value;

  if (gcfg.zeta == 0.0) {
    diag.rec_loss = loss.value(reconstruction);
    diag.source_grad_norms.assign(k_count, 0.0);
    if (!std::isfinite(diag.rec_loss)) fail_non_finite("reconstruction loss", state, diag);
    for (const auto& s : out.speech_scores) {
      if (!all_finite(s)) fail_non_finite("speech prior score", state, diag);
    }
    if (!all_finite(out.noise_score)) fail_non_finite("noise prior score", state, diag);
    return out;
  }

  Signal grad_sum;
  diag.rec_loss = loss.value_and_grad(reconstruction, grad_sum);
  if (!std::isfinite(diag.rec_loss) || !all_finite(grad_sum)) {
    fail_non_finite("reconstruction loss", state, diag);
  }

  out.noise_loss_grad = noise_lin.pullback(grad_sum);
  diag.noise_grad_norm = l2_norm(out.noise_loss_grad);
  double speech_sq = 0.0;
  for (std::size_t i = 0; i < k_count; ++i) {
    out.speech_loss_grads.push_back(speech_lin[i].pullback(grad_sum));
    const double norm = l2_norm(out.speech_loss_grads.back());
    diag.source_grad_norms.push_back(norm);
    speech_sq += norm * norm;
  }
  diag.speech_grad_norm = std::sqrt(speech_sq);

  const double scale = gcfg.zeta * std::sqrt(static_cast<double>(d)) / sigma;
  diag.zeta_n = scale / std::max(diag.noise_grad_norm, gcfg.grad_norm_floor);
  diag.zeta_x = scale / std::max(diag.speech_grad_norm, gcfg.grad_norm_floor);

  for (std::size_t j = 0; j < d; ++j) {
    out.noise_score[j] -= diag.zeta_n * out.noise_loss_grad[j];
  }
  for (std::size_t i = 0; i < k_count; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.speech_scores[i][j] -= diag.zeta_x * out.speech_loss_grads[i][j];
    }
  }

  if (!all_finite(out.noise_score)) fail_non_finite("noise posterior score", state, diag);
  for (const auto& s : out.speech_scores) {
    if (!all_finite(s)) fail_non_finite("speech posterior score", state, diag);
  }
  return out;
}

PosteriorScores posterior_score(SignalView y, const JointState& state,
                                const SourcePriors& priors, const GuidanceConfig& gcfg,
                                const StftConfig& stft_cfg) {
  const ReconstructionLoss loss(y, stft_cfg);
  return posterior_score(loss, state, priors, gcfg);
}

PosteriorDiagnostics guidance_norms(const PosteriorScores& scores) {
  return scores.diagnostics;
}

}  // namespace dpsep
