#include "dpsep/toy_corpus.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dpsep {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Partials keep this far from the band edges so the envelope sidebands stay
// inside the band.
constexpr double kEdgeMarginHz = 25.0;

void scale_to_rms(Signal& x, double rms) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  const double current = std::sqrt(acc / static_cast<double>(x.size()));
  if (current > 0.0) {
    for (double& v : x) v *= rms / current;
  }
}

double draw_rms(const ToyCorpusSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(std::log(spec.rms_min), std::log(spec.rms_max));
  return std::exp(u(rng));
}

Signal speech_like(const ToyCorpusSpec& spec, const BandClass& band, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(band.f_lo + kEdgeMarginHz,
                                              band.f_hi - kEdgeMarginHz);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> rate(2.0, 5.0);

  const double env_rate = rate(rng);
  const double env_phase = phase(rng);
  Signal x(spec.length, 0.0);
  for (std::size_t k = 0; k < spec.partials; ++k) {
    const double f = freq(rng);
    const double a = amp(rng);
    const double p = phase(rng);
    for (std::size_t n = 0; n < spec.length; ++n) {
      const double t = static_cast<double>(n) / spec.sample_rate;
      x[n] += a * std::sin(kTwoPi * f * t + p);
    }
  }
  for (std::size_t n = 0; n < spec.length; ++n) {
    const double t = static_cast<double>(n) / spec.sample_rate;
    x[n] *= 0.6 + 0.4 * std::sin(kTwoPi * env_rate * t + env_phase);
  }
  scale_to_rms(x, draw_rms(spec, rng));
  return x;
}

// Gaussian noise with a flat spectrum on the DFT grid inside the band,
// multiplied by a floor plus a few Gaussian-shaped bursts.
Signal ambient_noise(const ToyCorpusSpec& spec, std::mt19937_64& rng) {
  const std::size_t len = spec.length;
  const double bin_hz = spec.sample_rate / static_cast<double>(len);
  const auto k_lo = static_cast<std::size_t>(std::ceil(spec.noise_band.f_lo / bin_hz));
  const auto k_hi = static_cast<std::size_t>(std::floor(spec.noise_band.f_hi / bin_hz));
  std::normal_distribution<double> normal(0.0, 1.0);

  Signal x(len, 0.0);
  for (std::size_t k = k_lo; k <= k_hi; ++k) {
    const double a = normal(rng);
    const double b = normal(rng);
    const double w = kTwoPi * static_cast<double>(k) / static_cast<double>(len);
    for (std::size_t n = 0; n < len; ++n) {
      const double arg = w * static_cast<double>(n);
      x[n] += a * std::cos(arg) + b * std::sin(arg);
    }
  }

  std::uniform_int_distribution<int> burst_count(2, 5);
  std::uniform_real_distribution<double> center(0.0, static_cast<double>(len));
  std::uniform_real_distribution<double> width_s(0.015, 0.04);
  std::uniform_real_distribution<double> height(0.5, 1.5);
  Signal env(len, 0.25);
  const int bursts = burst_count(rng);
  for (int b = 0; b < bursts; ++b) {
    const double c = center(rng);
    const double w = width_s(rng) * spec.sample_rate;
    const double h = height(rng);
    for (std::size_t n = 0; n < len; ++n) {
      const double u = (static_cast<double>(n) - c) / w;
      env[n] += h * std::exp(-u * u);
    }
  }
  for (std::size_t n = 0; n < len; ++n) x[n] *= env[n];
  scale_to_rms(x, draw_rms(spec, rng));
  return x;
}

void check_band(const BandClass& band, double nyquist, const std::string& field) {
  if (!(band.f_lo >= 0.0)) throw std::invalid_argument(field + ".f_lo must be >= 0");
  if (!(band.f_hi <= nyquist)) {
    throw std::invalid_argument(field + ".f_hi exceeds the Nyquist frequency");
  }
  if (!(band.f_hi - band.f_lo > 2.0 * kEdgeMarginHz)) {
    throw std::invalid_argument(field + " is narrower than " +
                                std::to_string(2.0 * kEdgeMarginHz) + " Hz");
  }
}

}  // namespace

void ToyCorpusSpec::validate() const {
  if (!(sample_rate > 0.0)) throw std::invalid_argument("corpus.sample_rate must be > 0");
  if (length == 0) throw std::invalid_argument("corpus.length must be > 0");
  if (!(rms_min > 0.0 && rms_min <= rms_max)) {
    throw std::invalid_argument("corpus.rms_min/rms_max must satisfy 0 < min <= max");
  }
  const double nyquist = sample_rate / 2.0;
  for (std::size_t i = 0; i < speech_classes.size(); ++i) {
    check_band(speech_classes[i], nyquist, "corpus.speech_classes[" + std::to_string(i) + "]");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& a = speech_classes[i];
      const auto& b = speech_classes[j];
      if (a.f_lo < b.f_hi && b.f_lo < a.f_hi) {
        throw std::invalid_argument("corpus.speech_classes[" + std::to_string(i) +
                                    "] overlaps class " + std::to_string(j));
      }
    }
  }
  check_band(noise_band, nyquist, "corpus.noise_band");
}

std::vector<double> class_conditioning(std::size_t class_index, std::size_t n_classes) {
  std::vector<double> v(n_classes, 0.0);
  v.at(class_index) = 1.0;
  return v;
}

std::vector<CorpusItem> gen_toy_corpus(const ToyCorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<CorpusItem> items;
  const std::size_t n_classes = spec.speech_classes.size();
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      CorpusItem item;
      item.signal = speech_like(spec, spec.speech_classes[c], rng);
      item.cond = Conditioning::of(class_conditioning(c, n_classes));
      item.label = spec.speech_classes[c].name;
      item.kind = SourceKind::speech;
      item.class_index = c;
      items.push_back(std::move(item));
    }
  }
  for (std::size_t i = 0; i < spec.noise_count; ++i) {
    CorpusItem item;
    item.signal = ambient_noise(spec, rng);
    item.label = spec.noise_band.name;
    item.kind = SourceKind::noise;
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace dpsep
