#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpsep/frame_denoiser.hpp"
#include "dpsep/posterior.hpp"
#include "dpsep/schedule.hpp"
#include "dpsep/spectral.hpp"
#include "dpsep/toy_corpus.hpp"
#include "dpsep/training.hpp"

namespace dpsep {

// Bad configuration or failed pre-flight check. Raised before any file is
// written.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScheduleParams {
  double sigma_max = 4.0;
  double sigma_min = 1e-5;
  double rho = 10.0;
  std::size_t n_steps = 400;

  SigmaSchedule build() const { return build_schedule(sigma_max, sigma_min, rho, n_steps); }
};

struct MixtureParams {
  std::size_t speakers = 2;
  std::vector<double> sir_db{-5.0, 0.0, 5.0};
  double snr_min_db = -3.0;
  double snr_max_db = 3.0;
  std::size_t count = 60;
  double sigma_z_rel = 1e-4;
};

struct SamplerParams {
  ScheduleParams schedule;
  ChurnConfig churn{30.0};
  bool final_denoise = true;
  // Crop or zero-pad mixtures whose length differs from the checkpoints'.
  bool fit_length = false;
};

struct PathParams {
  std::filesystem::path corpus = "corpus";
  std::filesystem::path mixtures = "mixtures";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path output = "separated";
};

struct RunConfig {
  std::uint64_t seed = 0;
  ToyCorpusSpec corpus = default_corpus();
  FrameDenoiserConfig model;
  TrainConfig train = default_train();
  ScheduleParams train_schedule{10.0, 1e-5, 10.0, 400};
  std::size_t checkpoint_every = 0;  // 0: only at the end
  StftConfig stft;
  GuidanceConfig guidance;
  double cfg_weight = 0.8;
  SamplerParams sampler;
  MixtureParams mixture;
  PathParams paths;

  // Throws ValidationError naming the offending key.
  void validate() const;

  static ToyCorpusSpec default_corpus();
  static TrainConfig default_train();
};

// Full configuration as a JSON text (every key present).
std::string config_to_json(const RunConfig& cfg);

// Defaults, then the optional JSON file, then `key.path=value` overrides in
// order. Values are parsed as JSON, falling back to a plain string. Unknown
// keys and wrong types are ValidationErrors. The result is validated.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides = {});
RunConfig parse_config(const std::string& json_text,
                       const std::vector<std::string>& overrides = {});

// Relative paths resolve against $DPSEP_OUTPUT_ROOT when set.
std::filesystem::path resolve_path(const std::filesystem::path& p);

}  // namespace dpsep
