#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpsep/config.hpp"

namespace dpsep {

enum class Role { speech, noise };

Role parse_role(const std::string& name);
const char* role_name(Role role);

// Files under the configured directories.
struct Layout {
  std::filesystem::path corpus_dir;
  std::filesystem::path mixtures_dir;
  std::filesystem::path checkpoints_dir;
  std::filesystem::path output_dir;

  explicit Layout(const RunConfig& cfg);
  std::filesystem::path corpus_manifest() const { return corpus_dir / "manifest.json"; }
  std::filesystem::path mixture_manifest() const { return mixtures_dir / "manifest.json"; }
  std::filesystem::path checkpoint(Role role) const;
  std::filesystem::path loss_csv(Role role) const;
  std::filesystem::path separation_manifest() const { return output_dir / "separation.json"; }
  std::filesystem::path metrics_csv() const { return output_dir / "metrics.csv"; }
  std::filesystem::path summary_csv() const { return output_dir / "summary.csv"; }
};

struct SynthResult {
  std::size_t corpus_files = 0;
  std::size_t mixtures = 0;
};

// Training corpus (WAVs + manifest) under paths.corpus and the evaluation
// mixtures with their scaled ground truths under paths.mixtures. Held-out
// sources come from a separate seed stream.
SynthResult cmd_synth(const RunConfig& cfg, std::ostream* log = nullptr);

struct TrainResultSummary {
  std::size_t steps_done = 0;   // total optimizer updates in the checkpoint
  std::size_t steps_run = 0;    // updates performed by this call
  double final_loss = 0.0;      // mean plain loss over the last min(100, run) steps
  double baseline_loss = 0.0;   // identity predictor over the training schedule
};

// Trains the speech (conditional) or noise (unconditional) denoiser. With
// `resume`, continues from the existing checkpoint's optimizer state up to
// train.steps updates in total and appends to the loss CSV.
TrainResultSummary cmd_train(const RunConfig& cfg, Role role, bool resume,
                             std::ostream* log = nullptr);

struct SeparateResult {
  std::vector<std::string> ids;
  std::vector<std::filesystem::path> files;  // every WAV written
};

// Separates the listed mixture WAVs, or every mixture in the mixture manifest
// when `inputs` is empty. Files listed in the manifest use its scale and
// speaker classes; other files are read as-is with speaker i assigned class
// i mod n_classes. Writes K+1 WAVs and a trajectory CSV per mixture plus
// separation.json.
SeparateResult cmd_separate(const RunConfig& cfg,
                            const std::vector<std::filesystem::path>& inputs = {},
                            std::ostream* log = nullptr);

struct EvalRow {
  std::string group;  // "sir=<x>" or "overall"
  std::size_t count = 0;
  double si_sdr = 0.0;   // mean over speech sources
  double si_sdri = 0.0;
  double noise_si_sdr = 0.0;
  double noise_si_sdri = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;  // one per SIR bucket (ascending), then overall
  std::size_t mixtures = 0;
};

// Scores separation.json in paths.output against the mixture manifest.
// Missing estimates are listed together in one ValidationError.
EvalResult cmd_eval(const RunConfig& cfg, std::ostream* log = nullptr);

}  // namespace dpsep
