#pragma once

#include <cstdint>
#include <vector>

#include "dpsep/types.hpp"

namespace dpsep {

struct MixtureObservation {
  Signal y;
  double sample_rate = 16000.0;
  std::size_t speakers = 0;
  double sigma_z = 0.0;
};

struct MixSpec {
  double sir_db = 0.0;  // target (speaker 1) over each interferer
  double snr_db = 0.0;  // low-energy speaker over noise
  std::uint64_t seed = 0;
};

struct MixOptions {
  double sample_rate = 16000.0;
  double sigma_z_rel = 1e-4;  // stabilizer std relative to target RMS
};

struct MixResult {
  MixtureObservation observation;
  std::vector<Signal> sources;  // scaled speech ground truths
  Signal noise;                 // scaled noise ground truth
  Signal z;                     // y - (sum of sources + noise), exactly
  std::vector<double> source_gains;
  double noise_gain = 1.0;
};

double mean_power(SignalView x);

// y = sum_i g_i x_i + g_n n + z, with g_1 = 1, g_i (i >= 2) setting
// 10 log10(P_1 / P_i) = sir_db and g_n setting 10 log10(P_low / P_n) = snr_db
// against the lower-power speaker after SIR scaling.
MixResult make_mixture(const std::vector<Signal>& sources, SignalView noise,
                       const MixSpec& spec, const MixOptions& options = {});

inline constexpr double kSiSdrCap = 100.0;

// Scale-invariant SDR in dB on mean-removed signals, clamped to +-100 dB.
double si_sdr(SignalView estimate, SignalView reference);

struct RunMetrics {
  // assignment[r] = index of the speech estimate matched to reference r.
  std::vector<std::size_t> assignment;
  std::vector<double> speech_si_sdr;
  std::vector<double> speech_si_sdri;
  double noise_si_sdr = 0.0;
  double noise_si_sdri = 0.0;

  double mean_speech_si_sdr() const;
  double mean_speech_si_sdri() const;
};

// Speech estimates are matched to references by the permutation with the
// highest mean SI-SDR; the noise estimate is compared to the noise reference.
// Improvements are relative to SI-SDR(mixture, reference).
RunMetrics evaluate_run(const std::vector<Signal>& speech_estimates, SignalView noise_estimate,
                        const std::vector<Signal>& speech_refs, SignalView noise_ref,
                        SignalView mixture);

}  // namespace dpsep
