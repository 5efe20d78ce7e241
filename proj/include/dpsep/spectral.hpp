#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "dpsep/types.hpp"

namespace dpsep {

using Complex = std::complex<double>;

struct StftConfig {
  std::size_t window_len = 510;
  std::size_t hop = 160;
  // Centered frames use reflection padding of window_len/2 on both sides;
  // otherwise frames start at t*hop and run off the end into zeros.
  bool centered = true;

  std::size_t n_bins() const { return window_len / 2 + 1; }
  std::size_t num_frames(std::size_t signal_len) const {
    return (signal_len + hop - 1) / hop;
  }
  // Symmetric Hann taper, w[n] == w[window_len - 1 - n].
  std::vector<double> window() const;
  void validate() const;

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

// Row-major frames x bins complex matrix.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<Complex> values;

  Spectrogram() = default;
  Spectrogram(std::size_t t, std::size_t f) : frames(t), bins(f), values(t * f) {}

  Complex& operator()(std::size_t t, std::size_t f) { return values[t * bins + f]; }
  const Complex& operator()(std::size_t t, std::size_t f) const {
    return values[t * bins + f];
  }
};

// STFT after the 2/3-power magnitude compression; phase untouched.
struct CompressedSpectrogram {
  Spectrogram values;
};

inline constexpr double kCompressionFloor = 1e-8;

Spectrogram stft(SignalView signal, const StftConfig& cfg);

// Adjoint of stft() under the real inner product that treats each complex
// cell as two real coordinates.
Signal stft_adjoint(const Spectrogram& spec, const StftConfig& cfg,
                    std::size_t signal_len);

// Least-squares overlap-add inverse (window-sum-squared normalization).
Signal istft(const Spectrogram& spec, const StftConfig& cfg, std::size_t out_len);

// Z * max(|Z|, 1e-8)^(-1/3) cellwise.
CompressedSpectrogram compress(const Spectrogram& z);
Complex compress_cell(Complex z);

// Squared distance between compressed spectrograms of a fixed mixture and of
// a candidate reconstruction. Caches S(STFT(y)).
class ReconstructionLoss {
 public:
  ReconstructionLoss(SignalView mixture, StftConfig cfg);

  std::size_t signal_len() const { return len_; }
  const StftConfig& config() const { return cfg_; }
  const CompressedSpectrogram& target() const { return target_; }

  double value(SignalView reconstruction) const;
  // Returns the loss and writes d(loss)/d(reconstruction) into grad.
  double value_and_grad(SignalView reconstruction, Signal& grad) const;

 private:
  void check_length(SignalView v) const;

  StftConfig cfg_;
  std::size_t len_;
  CompressedSpectrogram target_;
};

// ||S(STFT(y)) - S(STFT(sum of estimates))||^2.
double rec_loss(SignalView y, std::span<const Signal> estimates, const StftConfig& cfg);

// Gradient of rec_loss with respect to the summed estimate. Because the loss
// sees the estimates only through their sum, this is also the gradient with
// respect to every individual estimate.
Signal rec_loss_grad(SignalView y, std::span<const Signal> estimates,
                     const StftConfig& cfg);

Signal sum_signals(std::span<const Signal> signals, std::size_t len);

}  // namespace dpsep
