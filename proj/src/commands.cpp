#include "dpsep/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "dpsep/checkpoint.hpp"
#include "dpsep/mixtures.hpp"
#include "dpsep/sampler.hpp"
#include "dpsep/wav.hpp"
#include <nlohmann/json.hpp>

namespace dpsep {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Independent streams from the master seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kEvalCorpusStream = 1;
constexpr std::uint64_t kMixtureStream = 1000;
constexpr std::uint64_t kTrainStream = 2000;
constexpr std::uint64_t kSeparateStream = 1u << 20;

void say(std::ostream* log, const std::string& line) {
  if (log != nullptr) *log << line << '\n';
}

json read_json(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string(what) + " not found: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError(std::string(what) + " is not valid JSON: " + path.string());
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

json wav_entry(const fs::path& dir, const std::string& file, SignalView x, double sample_rate) {
  const double scale = write_wav_normalized(dir / file, x, static_cast<std::uint32_t>(sample_rate));
  return {{"file", file}, {"scale", scale}};
}

Signal read_entry(const fs::path& dir, const json& entry) {
  return read_wav_scaled(dir / entry.at("file").get<std::string>(), entry.at("scale").get<double>());
}

std::string sir_label(double sir) {
  std::ostringstream s;
  s << "sir=" << sir;
  return s.str();
}

Checkpoint load_checked(const fs::path& path, Role role) {
  if (!fs::exists(path)) {
    throw ValidationError(std::string(role_name(role)) + " checkpoint not found: " + path.string());
  }
  Checkpoint ckpt = [&] {
    try {
      return load_checkpoint(path);
    } catch (const std::runtime_error& e) {
      throw ValidationError(e.what());
    }
  }();
  if (ckpt.meta.role != role_name(role)) {
    throw ValidationError(path.string() + " holds a " + ckpt.meta.role + " model, expected " +
                          role_name(role));
  }
  return ckpt;
}

}  // namespace

Role parse_role(const std::string& name) {
  if (name == "speech") return Role::speech;
  if (name == "noise") return Role::noise;
  throw ValidationError("role must be 'speech' or 'noise', got '" + name + "'");
}

const char* role_name(Role role) { return role == Role::speech ? "speech" : "noise"; }

Layout::Layout(const RunConfig& cfg)
    : corpus_dir(resolve_path(cfg.paths.corpus)),
      mixtures_dir(resolve_path(cfg.paths.mixtures)),
      checkpoints_dir(resolve_path(cfg.paths.checkpoints)),
      output_dir(resolve_path(cfg.paths.output)) {}

fs::path Layout::checkpoint(Role role) const {
  return checkpoints_dir / (std::string(role_name(role)) + ".ckpt");
}

fs::path Layout::loss_csv(Role role) const {
  return checkpoints_dir / (std::string(role_name(role)) + "_loss.csv");
}

// ---------------------------------------------------------------- synth

SynthResult cmd_synth(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg);
  const auto& spec = cfg.corpus;
  const std::size_t n_classes = spec.speech_classes.size();
  const std::size_t k = cfg.mixture.speakers;
  if (k > n_classes) {
    throw ValidationError("config: mixture.speakers (" + std::to_string(k) +
                          ") exceeds the number of speech classes (" + std::to_string(n_classes) +
                          ")");
  }

  const auto train_items = gen_toy_corpus(spec);

  // held-out sources: speaker i of mixture m uses class (i + m) mod n_classes
  std::vector<std::size_t> per_class_needed(n_classes, 0);
  for (std::size_t m = 0; m < cfg.mixture.count; ++m) {
    for (std::size_t i = 0; i < k; ++i) ++per_class_needed[(i + m) % n_classes];
  }
  ToyCorpusSpec eval_spec = spec;
  eval_spec.seed = derive_seed(cfg.seed, kEvalCorpusStream);
  eval_spec.per_class = *std::max_element(per_class_needed.begin(), per_class_needed.end());
  eval_spec.noise_count = cfg.mixture.count;
  const auto eval_items = gen_toy_corpus(eval_spec);

  struct Planned {
    MixResult mix;
    MixSpec spec;
    std::vector<std::size_t> classes;
  };
  std::vector<Planned> planned;
  std::vector<std::size_t> next(n_classes, 0);
  for (std::size_t m = 0; m < cfg.mixture.count; ++m) {
    std::mt19937_64 rng(derive_seed(cfg.seed, kMixtureStream + m));
    Planned p;
    p.spec.sir_db = cfg.mixture.sir_db[m % cfg.mixture.sir_db.size()];
    p.spec.snr_db = std::uniform_real_distribution<double>(cfg.mixture.snr_min_db,
                                                           cfg.mixture.snr_max_db)(rng);
    p.spec.seed = rng();
    std::vector<Signal> sources;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t c = (i + m) % n_classes;
      sources.push_back(eval_items[c * eval_spec.per_class + next[c]++].signal);
      p.classes.push_back(c);
    }
    const Signal& noise = eval_items[n_classes * eval_spec.per_class + m].signal;
    p.mix = make_mixture(sources, noise, p.spec, MixOptions{spec.sample_rate, cfg.mixture.sigma_z_rel});
    planned.push_back(std::move(p));
  }

  make_dir(layout.corpus_dir);
  make_dir(layout.mixtures_dir);

  json classes = json::array();
  for (const auto& b : spec.speech_classes) classes.push_back({{"name", b.name}, {"f_lo", b.f_lo}, {"f_hi", b.f_hi}});
  json corpus = {{"sample_rate", spec.sample_rate},
                 {"length", spec.length},
                 {"seed", cfg.seed},
                 {"classes", classes},
                 {"noise_band", {{"name", spec.noise_band.name}, {"f_lo", spec.noise_band.f_lo}, {"f_hi", spec.noise_band.f_hi}}},
                 {"items", json::array()}};
  std::map<std::string, std::size_t> counters;
  for (const auto& item : train_items) {
    const std::string stem = item.kind == SourceKind::speech ? "speech_" + item.label : "noise";
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04zu.wav", stem.c_str(), counters[stem]++);
    json e = wav_entry(layout.corpus_dir, name, item.signal, spec.sample_rate);
    e["kind"] = item.kind == SourceKind::speech ? "speech" : "noise";
    e["label"] = item.label;
    if (item.kind == SourceKind::speech) e["class"] = item.class_index;
    corpus["items"].push_back(std::move(e));
  }
  write_text(layout.corpus_manifest(), corpus.dump(2) + "\n");
  say(log, "synth: " + std::to_string(train_items.size()) + " corpus files in " + layout.corpus_dir.string());

  json mixtures = {{"sample_rate", spec.sample_rate},
                   {"length", spec.length},
                   {"speakers", k},
                   {"classes", classes},
                   {"seed", cfg.seed},
                   {"mixtures", json::array()}};
  for (std::size_t m = 0; m < planned.size(); ++m) {
    const auto& p = planned[m];
    char id[32];
    std::snprintf(id, sizeof id, "mix_%04zu", m);
    const std::string sid(id);
    json e = {{"id", sid},
              {"index", m},
              {"sir_db", p.spec.sir_db},
              {"snr_db", p.spec.snr_db},
              {"seed", p.spec.seed},
              {"sigma_z", p.mix.observation.sigma_z},
              {"classes", p.classes},
              {"mixture", wav_entry(layout.mixtures_dir, sid + ".wav", p.mix.observation.y, spec.sample_rate)},
              {"sources", json::array()},
              {"noise", wav_entry(layout.mixtures_dir, sid + "_noise.wav", p.mix.noise, spec.sample_rate)}};
    for (std::size_t i = 0; i < k; ++i) {
      json s = wav_entry(layout.mixtures_dir, sid + "_s" + std::to_string(i + 1) + ".wav", p.mix.sources[i], spec.sample_rate);
      s["class"] = p.classes[i];
      s["gain"] = p.mix.source_gains[i];
      e["sources"].push_back(std::move(s));
    }
    e["noise"]["gain"] = p.mix.noise_gain;
    mixtures["mixtures"].push_back(std::move(e));
  }
  write_text(layout.mixture_manifest(), mixtures.dump(2) + "\n");
  say(log, "synth: " + std::to_string(planned.size()) + " mixtures in " + layout.mixtures_dir.string());
  return {train_items.size(), planned.size()};
}

// ---------------------------------------------------------------- train

TrainResultSummary cmd_train(const RunConfig& cfg, Role role, bool resume, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg);
  const json corpus = read_json(layout.corpus_manifest(), "corpus manifest");
  const std::size_t length = corpus.at("length").get<std::size_t>();
  const std::size_t n_classes = corpus.at("classes").size();

  std::vector<TrainingExample> data;
  std::vector<std::string> missing;
  for (const auto& item : corpus.at("items")) {
    if (item.at("kind").get<std::string>() != role_name(role)) continue;
    const fs::path file = layout.corpus_dir / item.at("file").get<std::string>();
    if (!fs::exists(file)) {
      missing.push_back(file.string());
      continue;
    }
    TrainingExample ex;
    ex.signal = read_entry(layout.corpus_dir, item);
    if (role == Role::speech) {
      ex.cond = Conditioning::of(class_conditioning(item.at("class").get<std::size_t>(), n_classes));
    }
    data.push_back(std::move(ex));
  }
  if (!missing.empty()) {
    std::string msg = "corpus files missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ValidationError(msg);
  }
  if (data.empty()) {
    throw ValidationError(std::string("corpus has no ") + role_name(role) + " items: " +
                          layout.corpus_manifest().string());
  }
  if (cfg.train.crop_len > length) {
    throw ValidationError("config: train.crop_len exceeds the corpus length " + std::to_string(length));
  }

  const SigmaSchedule schedule = cfg.train_schedule.build();
  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(cfg.seed, kTrainStream + static_cast<std::uint64_t>(role));
  if (role == Role::noise) tcfg.cond_dropout = 0.0;

  std::optional<FrameDenoiser> model;
  AdamState adam;
  if (resume) {
    Checkpoint ckpt = load_checked(layout.checkpoint(role), role);
    if (!ckpt.optimizer) {
      throw ValidationError(layout.checkpoint(role).string() + " has no optimizer state to resume from");
    }
    if (ckpt.meta.signal_len != length) {
      throw ValidationError(layout.checkpoint(role).string() + " was trained on length " +
                            std::to_string(ckpt.meta.signal_len) + ", corpus has " + std::to_string(length));
    }
    model.emplace(std::move(ckpt.model));
    adam = std::move(*ckpt.optimizer);
  } else {
    FrameDenoiserConfig arch = cfg.model;
    arch.cond_dim = role == Role::speech ? n_classes : 0;
    std::mt19937_64 init_rng(tcfg.seed);
    model.emplace(arch, estimate_sigma_data(data), init_rng);
  }

  make_dir(layout.checkpoints_dir);
  const CheckpointMeta meta{role_name(role), length, cfg.train_schedule.sigma_max,
                            cfg.train_schedule.sigma_min, cfg.train_schedule.rho,
                            cfg.train_schedule.n_steps};
  const bool append = resume && fs::exists(layout.loss_csv(role));
  std::ofstream csv(layout.loss_csv(role), append ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open " + layout.loss_csv(role).string());
  if (!append) csv << "step,loss,weighted_loss\n";
  csv.precision(10);

  DenoiserTrainer trainer(std::move(*model), tcfg, schedule, std::move(adam));
  TrainResultSummary out;
  out.baseline_loss = identity_baseline_loss(schedule);
  const std::size_t start = trainer.optimizer().step;
  const std::size_t target = std::max(start, cfg.train.steps);
  std::vector<double> recent;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.optimizer().step < target) {
    const std::size_t left = target - trainer.optimizer().step;
    const std::size_t chunk = cfg.checkpoint_every > 0 ? std::min(left, cfg.checkpoint_every) : left;
    const auto entries = trainer.run(data, chunk);
    for (const auto& e : entries) {
      csv << e.step << ',' << e.loss << ',' << e.weighted_loss << '\n';
      recent.push_back(e.loss);
    }
    csv.flush();
    save_checkpoint(layout.checkpoint(role), trainer.model(), meta, &trainer.optimizer());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << "train " << role_name(role) << ": step " << trainer.optimizer().step << "/" << target
         << " loss " << entries.back().loss << " (" << secs << " s)";
    say(log, line.str());
  }
  if (trainer.optimizer().step == start) {
    // nothing to do, but leave a checkpoint in place for a fresh run
    if (!resume) save_checkpoint(layout.checkpoint(role), trainer.model(), meta, &trainer.optimizer());
  }

  out.steps_done = trainer.optimizer().step;
  out.steps_run = out.steps_done - start;
  const std::size_t tail = std::min<std::size_t>(100, recent.size());
  for (std::size_t i = recent.size() - tail; i < recent.size(); ++i) out.final_loss += recent[i];
  if (tail > 0) out.final_loss /= static_cast<double>(tail);
  return out;
}

// ---------------------------------------------------------------- separate

SeparateResult cmd_separate(const RunConfig& cfg, const std::vector<fs::path>& inputs,
                            std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg);

  json manifest;
  const bool have_manifest = fs::exists(layout.mixture_manifest());
  if (have_manifest) manifest = read_json(layout.mixture_manifest(), "mixture manifest");
  if (inputs.empty() && !have_manifest) {
    throw ValidationError("mixture manifest not found: " + layout.mixture_manifest().string());
  }

  const Checkpoint speech = load_checked(layout.checkpoint(Role::speech), Role::speech);
  const Checkpoint noise = load_checked(layout.checkpoint(Role::noise), Role::noise);
  const std::size_t d = speech.meta.signal_len;
  if (noise.meta.signal_len != d) {
    throw ValidationError("checkpoint lengths differ: speech " + std::to_string(d) + ", noise " +
                          std::to_string(noise.meta.signal_len));
  }
  const std::size_t cond_dim = speech.model.config().cond_dim;
  if (cfg.cfg_weight != 0.0 && cond_dim == 0) {
    throw ValidationError("guidance.cfg_weight is nonzero but the speech model is unconditional");
  }
  if (cfg.stft.window_len / 2 >= d) {
    throw ValidationError("stft.window " + std::to_string(cfg.stft.window_len) +
                          " is too long for checkpoint length " + std::to_string(d));
  }

  struct Job {
    std::string id;
    std::uint64_t index;
    fs::path file;
    double scale = 1.0;
    std::vector<std::size_t> classes;
  };
  std::vector<Job> jobs;
  const std::size_t k = cfg.mixture.speakers;
  std::map<std::string, const json*> by_file;
  if (have_manifest) {
    for (const auto& m : manifest.at("mixtures")) by_file[m.at("mixture").at("file").get<std::string>()] = &m;
  }
  auto add_manifest_job = [&](const json& m) {
    Job j;
    j.id = m.at("id").get<std::string>();
    j.index = m.at("index").get<std::uint64_t>();
    j.file = layout.mixtures_dir / m.at("mixture").at("file").get<std::string>();
    j.scale = m.at("mixture").at("scale").get<double>();
    j.classes = m.at("classes").get<std::vector<std::size_t>>();
    jobs.push_back(std::move(j));
  };
  if (inputs.empty()) {
    for (const auto& m : manifest.at("mixtures")) add_manifest_job(m);
  } else {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const fs::path in = inputs[i];
      const auto hit = by_file.find(in.filename().string());
      if (hit != by_file.end() && fs::equivalent(in, layout.mixtures_dir / hit->first)) {
        add_manifest_job(*hit->second);
        continue;
      }
      Job j;
      j.id = in.stem().string();
      j.index = kSeparateStream + i;
      j.file = in;
      for (std::size_t s = 0; s < k; ++s) j.classes.push_back(s % std::max<std::size_t>(cond_dim, 1));
      jobs.push_back(std::move(j));
    }
  }

  // pre-flight: every input readable with the right length and classes
  std::vector<Signal> mixtures;
  std::vector<std::string> problems;
  for (const auto& j : jobs) {
    if (!fs::exists(j.file)) {
      problems.push_back(j.file.string() + ": not found");
      mixtures.emplace_back();
      continue;
    }
    Signal y;
    try {
      y = read_wav_scaled(j.file, j.scale);
    } catch (const std::runtime_error& e) {
      problems.push_back(e.what());
      mixtures.emplace_back();
      continue;
    }
    if (y.size() != d) {
      if (!cfg.sampler.fit_length) {
        problems.push_back(j.file.string() + ": length " + std::to_string(y.size()) +
                           " does not match checkpoint length " + std::to_string(d));
      }
      y.resize(d, 0.0);
    }
    if (j.classes.size() != k) {
      problems.push_back(j.id + ": " + std::to_string(j.classes.size()) + " speakers, config has " +
                         std::to_string(k));
    }
    for (std::size_t c : j.classes) {
      if (cond_dim > 0 && c >= cond_dim) {
        problems.push_back(j.id + ": class " + std::to_string(c) + " outside the speech model's " +
                           std::to_string(cond_dim) + " classes");
      }
    }
    mixtures.push_back(std::move(y));
  }
  if (!problems.empty()) {
    std::string msg = "separate: pre-flight failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }

  make_dir(layout.output_dir);
  SamplerConfig scfg{cfg.sampler.schedule.build(), cfg.sampler.churn, 0};
  scfg.final_denoise = cfg.sampler.final_denoise;
  const double sr = have_manifest ? manifest.at("sample_rate").get<double>() : cfg.corpus.sample_rate;

  json out = {{"zeta", cfg.guidance.zeta},
              {"cfg_weight", cfg.cfg_weight},
              {"seed", cfg.seed},
              {"steps", cfg.sampler.schedule.n_steps},
              {"mixtures", json::array()}};
  SeparateResult result;
  for (std::size_t n = 0; n < jobs.size(); ++n) {
    const Job& j = jobs[n];
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Conditioning> conds;
    for (std::size_t c : j.classes) {
      conds.push_back(cond_dim > 0 ? Conditioning::of(class_conditioning(c, cond_dim)) : Conditioning::absent());
    }
    const SourcePriors priors{speech.model, noise.model, conds, cfg.cfg_weight};
    scfg.seed = derive_seed(cfg.seed, kSeparateStream * 2 + j.index);
    const SeparationResult sep = sample_posterior(mixtures[n], priors, scfg, cfg.guidance, cfg.stft);

    const fs::path dir = layout.output_dir / j.id;
    make_dir(dir);
    json entry = {{"id", j.id}, {"seed", scfg.seed}, {"speech", json::array()}};
    for (std::size_t i = 0; i < sep.speech.size(); ++i) {
      const std::string name = "speech_" + std::to_string(i + 1) + ".wav";
      json e = wav_entry(dir, name, sep.speech[i], sr);
      e["file"] = j.id + "/" + name;
      e["class"] = j.classes[i];
      entry["speech"].push_back(std::move(e));
      result.files.push_back(dir / name);
    }
    json ne = wav_entry(dir, "noise.wav", sep.noise, sr);
    ne["file"] = j.id + "/noise.wav";
    entry["noise"] = std::move(ne);
    result.files.push_back(dir / "noise.wav");

    std::ostringstream traj;
    write_trajectory_csv(traj, sep.trajectory);
    write_text(dir / "trajectory.csv", traj.str());
    entry["trajectory"] = j.id + "/trajectory.csv";
    out["mixtures"].push_back(std::move(entry));
    result.ids.push_back(j.id);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << "separate: " << j.id << " (" << n + 1 << "/" << jobs.size() << ", " << secs << " s)";
    say(log, line.str());
  }
  write_text(layout.separation_manifest(), out.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------- eval

EvalResult cmd_eval(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg);
  const json manifest = read_json(layout.mixture_manifest(), "mixture manifest");
  const json sep = read_json(layout.separation_manifest(), "separation manifest");

  std::map<std::string, const json*> estimates;
  for (const auto& e : sep.at("mixtures")) estimates[e.at("id").get<std::string>()] = &e;

  std::vector<std::string> missing;
  for (const auto& m : manifest.at("mixtures")) {
    const std::string id = m.at("id").get<std::string>();
    const auto it = estimates.find(id);
    if (it == estimates.end()) {
      missing.push_back(id + ": no estimates");
      continue;
    }
    const json& e = *it->second;
    if (e.at("speech").size() != m.at("sources").size()) {
      missing.push_back(id + ": " + std::to_string(e.at("speech").size()) + " speech estimates for " +
                        std::to_string(m.at("sources").size()) + " references");
    }
    for (const auto& s : e.at("speech")) {
      const fs::path f = layout.output_dir / s.at("file").get<std::string>();
      if (!fs::exists(f)) missing.push_back(id + ": " + f.string());
    }
    const fs::path nf = layout.output_dir / e.at("noise").at("file").get<std::string>();
    if (!fs::exists(nf)) missing.push_back(id + ": " + nf.string());
    for (const json* ref : {&m.at("mixture"), &m.at("noise")}) {
      const fs::path f = layout.mixtures_dir / ref->at("file").get<std::string>();
      if (!fs::exists(f)) missing.push_back(id + ": " + f.string());
    }
    for (const auto& s : m.at("sources")) {
      const fs::path f = layout.mixtures_dir / s.at("file").get<std::string>();
      if (!fs::exists(f)) missing.push_back(id + ": " + f.string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "eval: missing estimate/reference pairs:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ValidationError(msg);
  }

  struct Acc {
    std::size_t n = 0;
    double sdr = 0.0, sdri = 0.0, nsdr = 0.0, nsdri = 0.0;
  };
  std::map<double, Acc> buckets;
  Acc overall;
  std::ostringstream rows;
  rows.precision(10);
  const std::size_t k = manifest.at("speakers").get<std::size_t>();
  rows << "id,sir_db,snr_db";
  for (std::size_t i = 1; i <= k; ++i) rows << ",si_sdr_" << i;
  for (std::size_t i = 1; i <= k; ++i) rows << ",si_sdri_" << i;
  rows << ",noise_si_sdr,noise_si_sdri,mean_si_sdri,assignment\n";

  for (const auto& m : manifest.at("mixtures")) {
    const std::string id = m.at("id").get<std::string>();
    const json& e = *estimates.at(id);
    const Signal y = read_entry(layout.mixtures_dir, m.at("mixture"));
    std::vector<Signal> refs, est;
    for (const auto& s : m.at("sources")) refs.push_back(read_entry(layout.mixtures_dir, s));
    for (const auto& s : e.at("speech")) est.push_back(read_entry(layout.output_dir, s));
    const Signal noise_ref = read_entry(layout.mixtures_dir, m.at("noise"));
    const Signal noise_est = read_entry(layout.output_dir, e.at("noise"));
    for (const auto& s : est) {
      if (s.size() != y.size()) {
        throw ValidationError("eval: " + id + " estimates have length " + std::to_string(s.size()) +
                              ", references " + std::to_string(y.size()));
      }
    }
    if (noise_est.size() != y.size()) {
      throw ValidationError("eval: " + id + " noise estimate has the wrong length");
    }
    const RunMetrics r = evaluate_run(est, noise_est, refs, noise_ref, y);

    const double sir = m.at("sir_db").get<double>();
    rows << id << ',' << sir << ',' << m.at("snr_db").get<double>();
    for (double v : r.speech_si_sdr) rows << ',' << v;
    for (double v : r.speech_si_sdri) rows << ',' << v;
    rows << ',' << r.noise_si_sdr << ',' << r.noise_si_sdri << ',' << r.mean_speech_si_sdri() << ',';
    for (std::size_t i = 0; i < r.assignment.size(); ++i) rows << (i ? " " : "") << r.assignment[i];
    rows << '\n';

    for (Acc* a : {&buckets[sir], &overall}) {
      ++a->n;
      a->sdr += r.mean_speech_si_sdr();
      a->sdri += r.mean_speech_si_sdri();
      a->nsdr += r.noise_si_sdr;
      a->nsdri += r.noise_si_sdri;
    }
  }

  EvalResult result;
  result.mixtures = overall.n;
  auto row = [](const std::string& group, const Acc& a) {
    const double n = static_cast<double>(a.n);
    return EvalRow{group, a.n, a.sdr / n, a.sdri / n, a.nsdr / n, a.nsdri / n};
  };
  for (const auto& [sir, acc] : buckets) result.rows.push_back(row(sir_label(sir), acc));
  result.rows.push_back(row("overall", overall));

  std::ostringstream summary;
  summary.precision(10);
  summary << "group,count,si_sdr,si_sdri,noise_si_sdr,noise_si_sdri\n";
  for (const auto& r : result.rows) {
    summary << r.group << ',' << r.count << ',' << r.si_sdr << ',' << r.si_sdri << ','
            << r.noise_si_sdr << ',' << r.noise_si_sdri << '\n';
  }
  write_text(layout.metrics_csv(), rows.str());
  write_text(layout.summary_csv(), summary.str());
  say(log, "eval: " + std::to_string(overall.n) + " mixtures, metrics in " + layout.metrics_csv().string());
  return result;
}

}  // namespace dpsep
