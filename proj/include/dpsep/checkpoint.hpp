#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "dpsep/frame_denoiser.hpp"
#include "dpsep/training.hpp"

namespace dpsep {

// Versioned binary container:
//   8 bytes  magic "DPSEPCKP"
//   u32 LE   format version
//   u64 LE   header length
//   header   UTF-8 JSON (architecture, sigma_data, schedule endpoints, tensor table)
//   tensors  float32 LE, column-major, in header order
inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'S', 'E', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string role;  // "speech" or "noise"
  std::size_t signal_len = 0;
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  double rho = 0.0;
  std::size_t n_steps = 0;
};

struct Checkpoint {
  FrameDenoiser model;
  CheckpointMeta meta;
  std::optional<AdamState> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const FrameDenoiser& model,
                     const CheckpointMeta& meta, const AdamState* optimizer = nullptr);

// Throws std::runtime_error on I/O failure, bad magic, version or layout.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dpsep
