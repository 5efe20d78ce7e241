#include "dpsep/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dpsep {
namespace {

// Real-input FFT of one length. Plans are made once (planning is not
// thread-safe in FFTW) and executed through the new-array interface, so a
// shared plan can serve concurrent callers with their own buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    const int len = static_cast<int>(n);
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    r2c_ = fftw_plan_dft_r2c_1d(len, in, out, flags);
    c2r_ = fftw_plan_dft_c2r_1d(len, out, in, flags);
    fftw_free(in);
    fftw_free(out);
    if (r2c_ == nullptr || c2r_ == nullptr) {
      throw std::runtime_error("fftw: planning failed for n=" + std::to_string(n));
    }
  }
  ~RealFft() {
    fftw_destroy_plan(r2c_);
    fftw_destroy_plan(c2r_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  static const RealFft& get(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
  }

  std::size_t size() const { return n_; }

  void forward(double* in, Complex* out) const {
    fftw_execute_dft_r2c(r2c_, in, reinterpret_cast<fftw_complex*>(out));
  }
  // Unnormalized; clobbers `in`.
  void inverse(Complex* in, double* out) const {
    fftw_execute_dft_c2r(c2r_, reinterpret_cast<fftw_complex*>(in), out);
  }

 private:
  std::size_t n_;
  fftw_plan r2c_ = nullptr;
  fftw_plan c2r_ = nullptr;
};

std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(len) ? m : period - m);
}

// Maps frame sample n of frame t to a signal index, or -1 for zero padding.
struct Framing {
  const StftConfig& cfg;
  std::size_t len;

  std::ptrdiff_t position(std::size_t t, std::size_t n) const {
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop) -
                       (cfg.centered ? static_cast<std::ptrdiff_t>(cfg.window_len / 2) : 0);
    return start + static_cast<std::ptrdiff_t>(n);
  }
  std::ptrdiff_t source(std::size_t t, std::size_t n) const {
    const std::ptrdiff_t p = position(t, n);
    if (cfg.centered) return static_cast<std::ptrdiff_t>(reflect_index(p, len));
    return (p >= 0 && p < static_cast<std::ptrdiff_t>(len)) ? p : -1;
  }
};

}  // namespace

std::vector<double> StftConfig::window() const {
  std::vector<double> w(window_len);
  if (window_len == 1) {
    w[0] = 1.0;
    return w;
  }
  const double denom = static_cast<double>(window_len - 1);
  for (std::size_t n = 0; n < window_len; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
  }
  // Force exact symmetry.
  for (std::size_t n = 0; n < window_len / 2; ++n) w[window_len - 1 - n] = w[n];
  return w;
}

void StftConfig::validate() const {
  if (window_len < 4) throw std::invalid_argument("stft: window_len must be >= 4");
  if (hop == 0) throw std::invalid_argument("stft: hop must be > 0");
  if (hop >= window_len - 1) {
    throw std::invalid_argument("stft: hop must be < window_len - 1 for full coverage");
  }
}

Spectrogram stft(SignalView signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.empty()) throw std::invalid_argument("stft: empty signal");
  const std::size_t len = signal.size();
  const std::size_t frames = cfg.num_frames(len);
  const std::size_t bins = cfg.n_bins();
  const auto w = cfg.window();
  const RealFft& fft = RealFft::get(cfg.window_len);
  const Framing framing{cfg, len};

  Spectrogram out(frames, bins);
  std::vector<double> buf(cfg.window_len);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < cfg.window_len; ++n) {
      const std::ptrdiff_t src = framing.source(t, n);
      buf[n] = src < 0 ? 0.0 : w[n] * signal[static_cast<std::size_t>(src)];
    }
    fft.forward(buf.data(), &out(t, 0));
  }
  return out;
}

Signal stft_adjoint(const Spectrogram& spec, const StftConfig& cfg,
                    std::size_t signal_len) {
  cfg.validate();
  if (spec.bins != cfg.n_bins() || spec.frames != cfg.num_frames(signal_len)) {
    throw std::invalid_argument("stft_adjoint: spectrogram shape does not match config");
  }
  const std::size_t n_fft = cfg.window_len;
  const std::size_t bins = spec.bins;
  const auto w = cfg.window();
  const RealFft& fft = RealFft::get(n_fft);
  const Framing framing{cfg, signal_len};
  // Bins that appear twice in the Hermitian extension are halved so the c2r
  // transform evaluates sum_k Re(V_k e^{+i 2 pi k n / N}).
  const std::size_t last_single = (n_fft % 2 == 0) ? bins - 1 : bins;

  Signal out(signal_len, 0.0);
  std::vector<Complex> half(bins);
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    half[0] = Complex(spec(t, 0).real(), 0.0);
    for (std::size_t f = 1; f < bins; ++f) {
      half[f] = (f < last_single) ? 0.5 * spec(t, f) : spec(t, f);
    }
    if (n_fft % 2 == 0) half[bins - 1] = Complex(spec(t, bins - 1).real(), 0.0);
    fft.inverse(half.data(), frame.data());
    for (std::size_t n = 0; n < n_fft; ++n) {
      const std::ptrdiff_t src = framing.source(t, n);
      if (src >= 0) out[static_cast<std::size_t>(src)] += w[n] * frame[n];
    }
  }
  return out;
}

Signal istft(const Spectrogram& spec, const StftConfig& cfg, std::size_t out_len) {
  cfg.validate();
  if (out_len == 0) throw std::invalid_argument("istft: out_len must be > 0");
  if (spec.bins != cfg.n_bins() || spec.frames != cfg.num_frames(out_len)) {
    throw std::invalid_argument("istft: spectrogram shape does not match config");
  }
  const std::size_t n_fft = cfg.window_len;
  const std::size_t bins = spec.bins;
  const auto w = cfg.window();
  const RealFft& fft = RealFft::get(n_fft);
  const Framing framing{cfg, out_len};
  const double scale = 1.0 / static_cast<double>(n_fft);

  Signal num(out_len, 0.0);
  Signal den(out_len, 0.0);
  std::vector<Complex> half(bins);
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) half[f] = spec(t, f);
    half[0].imag(0.0);
    if (n_fft % 2 == 0) half[bins - 1].imag(0.0);
    fft.inverse(half.data(), frame.data());
    for (std::size_t n = 0; n < n_fft; ++n) {
      const std::ptrdiff_t p = framing.position(t, n);
      if (p < 0 || p >= static_cast<std::ptrdiff_t>(out_len)) continue;
      const auto i = static_cast<std::size_t>(p);
      num[i] += w[n] * frame[n] * scale;
      den[i] += w[n] * w[n];
    }
  }
  for (std::size_t i = 0; i < out_len; ++i) {
    num[i] = den[i] > 1e-12 ? num[i] / den[i] : 0.0;
  }
  return num;
}

Complex compress_cell(Complex z) {
  const double mag = std::max(std::abs(z), kCompressionFloor);
  return z * std::pow(mag, -1.0 / 3.0);
}

CompressedSpectrogram compress(const Spectrogram& z) {
  CompressedSpectrogram out{Spectrogram(z.frames, z.bins)};
  for (std::size_t i = 0; i < z.values.size(); ++i) {
    out.values.values[i] = compress_cell(z.values[i]);
  }
  return out;
}

ReconstructionLoss::ReconstructionLoss(SignalView mixture, StftConfig cfg)
    : cfg_(cfg), len_(mixture.size()), target_(compress(stft(mixture, cfg_))) {}

void ReconstructionLoss::check_length(SignalView v) const {
  if (v.size() != len_) {
    throw std::invalid_argument("rec_loss: length mismatch (" + std::to_string(v.size()) +
                                " vs mixture " + std::to_string(len_) + ")");
  }
}

double ReconstructionLoss::value(SignalView reconstruction) const {
  check_length(reconstruction);
  const CompressedSpectrogram s = compress(stft(reconstruction, cfg_));
  double loss = 0.0;
  for (std::size_t i = 0; i < s.values.values.size(); ++i) {
    loss += std::norm(s.values.values[i] - target_.values.values[i]);
  }
  return loss;
}

double ReconstructionLoss::value_and_grad(SignalView reconstruction, Signal& grad) const {
  check_length(reconstruction);
  Spectrogram z = stft(reconstruction, cfg_);
  const CompressedSpectrogram s = compress(z);
  double loss = 0.0;
  const double floor_gain = 2.0 * std::pow(kCompressionFloor, -1.0 / 3.0);
  for (std::size_t i = 0; i < z.values.size(); ++i) {
    const Complex e = z.values[i];
    const Complex r = s.values.values[i] - target_.values.values[i];
    loss += std::norm(r);
    const double mag = std::abs(e);
    if (mag >= kCompressionFloor) {
      // d|S|/dE for S(E) = E |E|^(-1/3), with (Re, Im) as independent reals.
      const double radial = (r.real() * e.real() + r.imag() * e.imag()) / (mag * mag);
      z.values[i] = 2.0 * std::pow(mag, -1.0 / 3.0) * (r - (radial / 3.0) * e);
    } else {
      z.values[i] = floor_gain * r;
    }
  }
  grad = stft_adjoint(z, cfg_, len_);
  return loss;
}

Signal sum_signals(std::span<const Signal> signals, std::size_t len) {
  Signal sum(len, 0.0);
  for (const Signal& s : signals) {
    if (s.size() != len) throw std::invalid_argument("sum_signals: length mismatch");
    for (std::size_t i = 0; i < len; ++i) sum[i] += s[i];
  }
  return sum;
}

double rec_loss(SignalView y, std::span<const Signal> estimates, const StftConfig& cfg) {
  const ReconstructionLoss loss(y, cfg);
  return loss.value(sum_signals(estimates, y.size()));
}

Signal rec_loss_grad(SignalView y, std::span<const Signal> estimates,
                     const StftConfig& cfg) {
  const ReconstructionLoss loss(y, cfg);
  Signal grad;
  loss.value_and_grad(sum_signals(estimates, y.size()), grad);
  return grad;
}

}  // namespace dpsep
