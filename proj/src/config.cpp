#include "dpsep/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dpsep {
namespace {

using json = nlohmann::json;

json band_json(const BandClass& b) { return {{"name", b.name}, {"f_lo", b.f_lo}, {"f_hi", b.f_hi}}; }

json schedule_json(const ScheduleParams& s) {
  return {{"sigma_max", s.sigma_max}, {"sigma_min", s.sigma_min}, {"rho", s.rho}, {"n_steps", s.n_steps}};
}

json to_json(const RunConfig& c) {
  json classes = json::array();
  for (const auto& b : c.corpus.speech_classes) classes.push_back(band_json(b));
  return {
      {"seed", c.seed},
      {"corpus",
       {{"sample_rate", c.corpus.sample_rate},
        {"length", c.corpus.length},
        {"speech_classes", classes},
        {"noise_band", band_json(c.corpus.noise_band)},
        {"per_class", c.corpus.per_class},
        {"noise_count", c.corpus.noise_count},
        {"partials", c.corpus.partials},
        {"rms_min", c.corpus.rms_min},
        {"rms_max", c.corpus.rms_max}}},
      {"model",
       {{"frame_len", c.model.frame_len},
        {"hidden", c.model.hidden},
        {"res_blocks", c.model.res_blocks},
        {"emb_hidden", c.model.emb_hidden},
        {"fourier", c.model.fourier}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"cond_dropout", c.train.cond_dropout},
        {"crop_len", c.train.crop_len},
        {"checkpoint_every", c.checkpoint_every},
        {"schedule", schedule_json(c.train_schedule)}}},
      {"stft", {{"window", c.stft.window_len}, {"hop", c.stft.hop}}},
      {"guidance",
       {{"zeta", c.guidance.zeta},
        {"grad_norm_floor", c.guidance.grad_norm_floor},
        {"cfg_weight", c.cfg_weight}}},
      {"sampler",
       {{"schedule", schedule_json(c.sampler.schedule)},
        {"s_churn", c.sampler.churn.s_churn},
        {"s_tmin", c.sampler.churn.s_tmin},
        {"s_tmax", std::isinf(c.sampler.churn.s_tmax) ? json(nullptr) : json(c.sampler.churn.s_tmax)},
        {"s_noise", c.sampler.churn.s_noise},
        {"final_denoise", c.sampler.final_denoise},
        {"fit_length", c.sampler.fit_length}}},
      {"mixture",
       {{"speakers", c.mixture.speakers},
        {"sir_db", c.mixture.sir_db},
        {"snr_db", {c.mixture.snr_min_db, c.mixture.snr_max_db}},
        {"count", c.mixture.count},
        {"sigma_z_rel", c.mixture.sigma_z_rel}}},
      {"paths",
       {{"corpus", c.paths.corpus.string()},
        {"mixtures", c.paths.mixtures.string()},
        {"checkpoints", c.paths.checkpoints.string()},
        {"output", c.paths.output.string()}}},
  };
}

// Copies `patch` onto `base`; every key must already exist in `base`.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) {
    throw ValidationError("config: " + (where.empty() ? std::string("top level") : where) +
                          " must be an object");
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      overlay(slot, value, path);
    } else {
      slot = value;
    }
  }
}

template <typename T>
T get(const json& j, const std::string& path) {
  try {
    const json* node = &j;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      node = &node->at(path.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!node->is_number_integer() || node->get<long long>() < 0) {
        throw ValidationError("config: " + path + " must be a non-negative integer");
      }
    }
    if constexpr (std::is_same_v<T, double>) {
      if (!node->is_number()) throw ValidationError("config: " + path + " must be a number");
    }
    return node->get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: " + path + " has the wrong type");
  }
}

BandClass band_from(const json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError("config: " + path + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "f_lo" && key != "f_hi") {
      throw ValidationError("config: unknown key '" + path + "." + key + "'");
    }
  }
  for (const char* key : {"name", "f_lo", "f_hi"}) {
    if (!j.contains(key)) throw ValidationError("config: " + path + "." + key + " is required");
  }
  BandClass b;
  b.name = get<std::string>(j, "name");
  b.f_lo = get<double>(j, "f_lo");
  b.f_hi = get<double>(j, "f_hi");
  return b;
}

ScheduleParams schedule_from(const json& j, const std::string& prefix) {
  return {get<double>(j, prefix + ".sigma_max"), get<double>(j, prefix + ".sigma_min"),
          get<double>(j, prefix + ".rho"), get<std::size_t>(j, prefix + ".n_steps")};
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed");

  c.corpus.sample_rate = get<double>(j, "corpus.sample_rate");
  c.corpus.length = get<std::size_t>(j, "corpus.length");
  const json classes = get<json>(j, "corpus.speech_classes");
  if (!classes.is_array()) throw ValidationError("config: corpus.speech_classes must be an array");
  c.corpus.speech_classes.clear();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    c.corpus.speech_classes.push_back(
        band_from(classes[i], "corpus.speech_classes[" + std::to_string(i) + "]"));
  }
  c.corpus.noise_band = band_from(get<json>(j, "corpus.noise_band"), "corpus.noise_band");
  c.corpus.per_class = get<std::size_t>(j, "corpus.per_class");
  c.corpus.noise_count = get<std::size_t>(j, "corpus.noise_count");
  c.corpus.partials = get<std::size_t>(j, "corpus.partials");
  c.corpus.rms_min = get<double>(j, "corpus.rms_min");
  c.corpus.rms_max = get<double>(j, "corpus.rms_max");
  c.corpus.seed = c.seed;

  c.model.frame_len = get<std::size_t>(j, "model.frame_len");
  c.model.hidden = get<std::size_t>(j, "model.hidden");
  c.model.res_blocks = get<std::size_t>(j, "model.res_blocks");
  c.model.emb_hidden = get<std::size_t>(j, "model.emb_hidden");
  c.model.fourier = get<std::size_t>(j, "model.fourier");

  c.train.steps = get<std::size_t>(j, "train.steps");
  c.train.batch = get<std::size_t>(j, "train.batch");
  c.train.lr = get<double>(j, "train.lr");
  c.train.cond_dropout = get<double>(j, "train.cond_dropout");
  c.train.crop_len = get<std::size_t>(j, "train.crop_len");
  c.checkpoint_every = get<std::size_t>(j, "train.checkpoint_every");
  c.train_schedule = schedule_from(j, "train.schedule");

  c.stft.window_len = get<std::size_t>(j, "stft.window");
  c.stft.hop = get<std::size_t>(j, "stft.hop");

  c.guidance.zeta = get<double>(j, "guidance.zeta");
  c.guidance.grad_norm_floor = get<double>(j, "guidance.grad_norm_floor");
  c.cfg_weight = get<double>(j, "guidance.cfg_weight");

  c.sampler.schedule = schedule_from(j, "sampler.schedule");
  c.sampler.churn.s_churn = get<double>(j, "sampler.s_churn");
  c.sampler.churn.s_tmin = get<double>(j, "sampler.s_tmin");
  c.sampler.churn.s_tmax = get<json>(j, "sampler.s_tmax").is_null()
                               ? std::numeric_limits<double>::infinity()
                               : get<double>(j, "sampler.s_tmax");
  c.sampler.churn.s_noise = get<double>(j, "sampler.s_noise");
  c.sampler.final_denoise = get<bool>(j, "sampler.final_denoise");
  c.sampler.fit_length = get<bool>(j, "sampler.fit_length");

  c.mixture.speakers = get<std::size_t>(j, "mixture.speakers");
  c.mixture.sir_db = get<std::vector<double>>(j, "mixture.sir_db");
  const auto snr = get<std::vector<double>>(j, "mixture.snr_db");
  if (snr.size() != 2) throw ValidationError("config: mixture.snr_db must be [min, max]");
  c.mixture.snr_min_db = snr[0];
  c.mixture.snr_max_db = snr[1];
  c.mixture.count = get<std::size_t>(j, "mixture.count");
  c.mixture.sigma_z_rel = get<double>(j, "mixture.sigma_z_rel");

  c.paths.corpus = get<std::string>(j, "paths.corpus");
  c.paths.mixtures = get<std::string>(j, "paths.mixtures");
  c.paths.checkpoints = get<std::string>(j, "paths.checkpoints");
  c.paths.output = get<std::string>(j, "paths.output");
  return c;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("config: override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  // build {"a": {"b": value}} and overlay it so unknown keys are caught
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = rest.find('.', start);
    parts.push_back(rest.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ValidationError("config: malformed key '" + key + "'");
    patch = json{{*it, patch}};
  }
  overlay(tree, patch, "");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError("config: " + message);
}

void validate_schedule(const ScheduleParams& s, const std::string& prefix) {
  require(std::isfinite(s.sigma_max) && std::isfinite(s.sigma_min) && s.sigma_min > 0.0 &&
              s.sigma_max > s.sigma_min,
          prefix + ".sigma_max/sigma_min must satisfy sigma_max > sigma_min > 0");
  require(std::isfinite(s.rho) && s.rho >= 1.0, prefix + ".rho must be >= 1");
  require(s.n_steps >= 2, prefix + ".n_steps must be >= 2");
}

}  // namespace

ToyCorpusSpec RunConfig::default_corpus() {
  ToyCorpusSpec s;
  s.length = 4000;
  s.speech_classes = {{"low", 300.0, 1000.0}, {"high", 1500.0, 3000.0}};
  s.noise_band = {"noise", 4000.0, 7000.0};
  s.per_class = 64;
  s.noise_count = 64;
  return s;
}

TrainConfig RunConfig::default_train() {
  TrainConfig t;
  t.steps = 2000;
  t.batch = 16;
  t.lr = 1e-3;
  t.cond_dropout = 0.1;
  t.crop_len = 1024;
  return t;
}

void RunConfig::validate() const {
  try {
    corpus.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  require(!corpus.speech_classes.empty(), "corpus.speech_classes must not be empty");
  require(corpus.per_class >= 1, "corpus.per_class must be >= 1");
  require(corpus.noise_count >= 1, "corpus.noise_count must be >= 1");
  require(corpus.partials >= 1, "corpus.partials must be >= 1");

  require(model.frame_len >= 4 && model.frame_len % 2 == 0,
          "model.frame_len must be even and >= 4");
  require(model.hidden >= 1, "model.hidden must be >= 1");
  require(model.emb_hidden >= 1, "model.emb_hidden must be >= 1");

  require(train.batch >= 1, "train.batch must be >= 1");
  require(std::isfinite(train.lr) && train.lr > 0.0, "train.lr must be > 0");
  require(train.cond_dropout >= 0.0 && train.cond_dropout <= 1.0,
          "train.cond_dropout must lie in [0, 1]");
  require(train.crop_len >= model.frame_len, "train.crop_len must be >= model.frame_len");
  validate_schedule(train_schedule, "train.schedule");

  require(stft.window_len >= 4, "stft.window must be >= 4");
  require(stft.hop >= 1 && stft.hop < stft.window_len - 1, "stft.hop must lie in [1, window - 2]");
  require(stft.window_len / 2 < corpus.length, "stft.window must be shorter than twice corpus.length");

  require(std::isfinite(guidance.zeta) && guidance.zeta >= 0.0, "guidance.zeta must be >= 0");
  require(guidance.grad_norm_floor > 0.0, "guidance.grad_norm_floor must be > 0");
  require(std::isfinite(cfg_weight) && cfg_weight >= 0.0, "guidance.cfg_weight must be >= 0");

  validate_schedule(sampler.schedule, "sampler.schedule");
  require(std::isfinite(sampler.churn.s_churn) && sampler.churn.s_churn >= 0.0,
          "sampler.s_churn must be >= 0");
  require(sampler.churn.s_tmin <= sampler.churn.s_tmax, "sampler.s_tmin must be <= s_tmax");
  require(sampler.churn.s_noise > 0.0, "sampler.s_noise must be > 0");

  require(mixture.speakers >= 1, "mixture.speakers must be >= 1");
  require(!mixture.sir_db.empty(), "mixture.sir_db must not be empty");
  for (double v : mixture.sir_db) require(std::isfinite(v), "mixture.sir_db entries must be finite");
  require(std::isfinite(mixture.snr_min_db) && std::isfinite(mixture.snr_max_db) &&
              mixture.snr_min_db <= mixture.snr_max_db,
          "mixture.snr_db must be a finite [min, max] range");
  require(mixture.count >= 1, "mixture.count must be >= 1");
  require(mixture.sigma_z_rel >= 0.0, "mixture.sigma_z_rel must be >= 0");

  for (const auto& [name, p] : {std::pair{"paths.corpus", &paths.corpus},
                                {"paths.mixtures", &paths.mixtures},
                                {"paths.checkpoints", &paths.checkpoints},
                                {"paths.output", &paths.output}}) {
    require(!p->empty(), std::string(name) + " must not be empty");
  }
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

RunConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json tree = to_json(RunConfig{});
  if (!json_text.empty()) {
    const json user = json::parse(json_text, nullptr, false);
    if (user.is_discarded()) throw ValidationError("config: not valid JSON");
    overlay(tree, user, "");
  }
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig cfg = from_json(tree);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides) {
  std::string text;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ValidationError("config: cannot read " + file->string());
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) text.clear();
  }
  return parse_config(text, overrides);
}

std::filesystem::path resolve_path(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  const char* root = std::getenv("DPSEP_OUTPUT_ROOT");
  if (root != nullptr && *root != '\0') return std::filesystem::path(root) / p;
  return p;
}

}  // namespace dpsep
