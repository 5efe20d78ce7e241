#include "dpsep/mixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dpsep {

double mean_power(SignalView x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

MixResult make_mixture(const std::vector<Signal>& sources, SignalView noise,
                       const MixSpec& spec, const MixOptions& options) {
  if (sources.empty()) throw std::invalid_argument("make_mixture: no sources");
  if (!std::isfinite(spec.sir_db) || !std::isfinite(spec.snr_db)) {
    throw std::invalid_argument("make_mixture: SIR/SNR must be finite");
  }
  const std::size_t d = noise.size();
  for (const Signal& s : sources) {
    if (s.size() != d) throw std::invalid_argument("make_mixture: length mismatch");
  }

  MixResult out;
  const double p_target = mean_power(sources[0]);
  if (!(p_target > 0.0)) throw std::invalid_argument("make_mixture: target has zero energy");
  out.source_gains.push_back(1.0);
  out.sources.push_back(sources[0]);
  double p_low = p_target;
  for (std::size_t i = 1; i < sources.size(); ++i) {
    const double p = mean_power(sources[i]);
    if (!(p > 0.0)) {
      throw std::invalid_argument("make_mixture: source " + std::to_string(i + 1) +
                                  " has zero energy");
    }
    const double gain = std::sqrt(p_target / (p * std::pow(10.0, spec.sir_db / 10.0)));
    Signal scaled(d);
    for (std::size_t j = 0; j < d; ++j) scaled[j] = gain * sources[i][j];
    p_low = std::min(p_low, mean_power(scaled));
    out.source_gains.push_back(gain);
    out.sources.push_back(std::move(scaled));
  }

  const double p_noise = mean_power(noise);
  if (!(p_noise > 0.0)) throw std::invalid_argument("make_mixture: noise has zero energy");
  out.noise_gain = std::sqrt(p_low / (p_noise * std::pow(10.0, spec.snr_db / 10.0)));
  out.noise.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.noise[j] = out.noise_gain * noise[j];

  const double sigma_z = options.sigma_z_rel * std::sqrt(p_target);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Signal clean(d, 0.0);
  for (const Signal& s : out.sources) {
    for (std::size_t j = 0; j < d; ++j) clean[j] += s[j];
  }
  for (std::size_t j = 0; j < d; ++j) clean[j] += out.noise[j];

  auto& obs = out.observation;
  obs.y.resize(d);
  out.z.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    obs.y[j] = clean[j] + sigma_z * normal(rng);
    out.z[j] = obs.y[j] - clean[j];
  }
  obs.sample_rate = options.sample_rate;
  obs.speakers = sources.size();
  obs.sigma_z = sigma_z;
  return out;
}

double si_sdr(SignalView estimate, SignalView reference) {
  if (estimate.size() != reference.size() || reference.empty()) {
    throw std::invalid_argument("si_sdr: length mismatch");
  }
  const auto n = static_cast<double>(reference.size());
  const double mean_e = std::accumulate(estimate.begin(), estimate.end(), 0.0) / n;
  const double mean_r = std::accumulate(reference.begin(), reference.end(), 0.0) / n;
  double rr = 0.0;
  double er = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double r = reference[i] - mean_r;
    rr += r * r;
    er += (estimate[i] - mean_e) * r;
  }
  if (!(rr > 0.0)) throw std::invalid_argument("si_sdr: zero reference");
  const double alpha = er / rr;
  double target = 0.0;
  double residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = alpha * (reference[i] - mean_r);
    const double e = (estimate[i] - mean_e) - s;
    target += s * s;
    residual += e * e;
  }
  if (target == 0.0) return -kSiSdrCap;
  if (residual == 0.0) return kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCap, kSiSdrCap);
}

double RunMetrics::mean_speech_si_sdr() const {
  if (speech_si_sdr.empty()) return 0.0;
  return std::accumulate(speech_si_sdr.begin(), speech_si_sdr.end(), 0.0) /
         static_cast<double>(speech_si_sdr.size());
}

double RunMetrics::mean_speech_si_sdri() const {
  if (speech_si_sdri.empty()) return 0.0;
  return std::accumulate(speech_si_sdri.begin(), speech_si_sdri.end(), 0.0) /
         static_cast<double>(speech_si_sdri.size());
}

RunMetrics evaluate_run(const std::vector<Signal>& speech_estimates, SignalView noise_estimate,
                        const std::vector<Signal>& speech_refs, SignalView noise_ref,
                        SignalView mixture) {
  const std::size_t k = speech_refs.size();
  if (speech_estimates.size() != k) {
    throw std::invalid_argument("evaluate_run: " + std::to_string(speech_estimates.size()) +
                                " speech estimates for " + std::to_string(k) + " references");
  }

  // scores[r][e] = SI-SDR of estimate e against reference r.
  std::vector<std::vector<double>> scores(k, std::vector<double>(k));
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t e = 0; e < k; ++e) scores[r][e] = si_sdr(speech_estimates[e], speech_refs[r]);
  }
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_total = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < k; ++r) total += scores[r][perm[r]];
    if (total > best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  RunMetrics m;
  m.assignment = best;
  for (std::size_t r = 0; r < k; ++r) {
    const double sdr = scores[r][best[r]];
    m.speech_si_sdr.push_back(sdr);
    m.speech_si_sdri.push_back(sdr - si_sdr(mixture, speech_refs[r]));
  }
  m.noise_si_sdr = si_sdr(noise_estimate, noise_ref);
  m.noise_si_sdri = m.noise_si_sdr - si_sdr(mixture, noise_ref);
  return m;
}

}  // namespace dpsep
