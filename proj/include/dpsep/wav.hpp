#pragma once

#include <cstdint>
#include <filesystem>

#include "dpsep/types.hpp"

namespace dpsep {

struct WavData {
  Signal samples;  // in [-1, 1]
  std::uint32_t sample_rate = 0;
};

// 16-bit PCM mono RIFF/WAVE.
void write_wav(const std::filesystem::path& path, SignalView samples, std::uint32_t sample_rate);
WavData read_wav(const std::filesystem::path& path);

// Writes signal / scale with scale = max|signal| (1 for silence) and returns
// the scale so the caller can record it; read back with read_wav_scaled.
double write_wav_normalized(const std::filesystem::path& path, SignalView signal,
                            std::uint32_t sample_rate);
Signal read_wav_scaled(const std::filesystem::path& path, double scale,
                       std::uint32_t* sample_rate = nullptr);

}  // namespace dpsep
