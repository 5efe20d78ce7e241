#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpsep/score_model.hpp"

namespace dpsep {

struct BandClass {
  std::string name;
  double f_lo = 0.0;
  double f_hi = 0.0;
};

// Desk-scale stand-in for a speech/noise corpus. Each speech class is a band
// of random-phase partials with a slow syllabic envelope; the noise class is
// band-limited Gaussian noise gated by random bursts.
struct ToyCorpusSpec {
  double sample_rate = 16000.0;
  std::size_t length = 4000;
  std::vector<BandClass> speech_classes;
  BandClass noise_band{"noise", 4000.0, 7000.0};
  std::size_t per_class = 32;
  std::size_t noise_count = 32;
  std::size_t partials = 8;
  double rms_min = 0.05;
  double rms_max = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class SourceKind { speech, noise };

struct CorpusItem {
  Signal signal;
  Conditioning cond;  // one-hot speech class, absent for noise
  std::string label;
  SourceKind kind = SourceKind::speech;
  std::size_t class_index = 0;
};

// Speech items first (class by class), then noise. Deterministic per seed.
std::vector<CorpusItem> gen_toy_corpus(const ToyCorpusSpec& spec);

std::vector<double> class_conditioning(std::size_t class_index, std::size_t n_classes);

}  // namespace dpsep
