#include "dpsep/training.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dpsep {

void TrainConfig::validate() const {
  if (batch == 0) throw std::invalid_argument("training: batch must be > 0");
  if (!(lr > 0.0)) throw std::invalid_argument("training: lr must be > 0");
  if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) {
    throw std::invalid_argument("training: cond_dropout must be in [0, 1]");
  }
  if (crop_len == 0) throw std::invalid_argument("training: crop_len must be > 0");
}

double estimate_sigma_data(const std::vector<TrainingExample>& data) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    for (double v : data[k].signal) {
      if (!std::isfinite(v)) {
        throw NumericalError("training: example " + std::to_string(k) +
                             " contains non-finite samples");
      }
      acc += v * v;
    }
    count += data[k].signal.size();
  }
  if (count == 0) throw std::invalid_argument("training: empty dataset");
  return std::max(std::sqrt(acc / static_cast<double>(count)), 1e-3);
}

double identity_baseline_loss(const SigmaSchedule& schedule) {
  double acc = 0.0;
  for (double s : schedule.levels()) acc += s * s;
  return acc / static_cast<double>(schedule.size());
}

DenoiserTrainer::DenoiserTrainer(FrameDenoiser model, TrainConfig cfg, SigmaSchedule schedule,
                                 AdamState state)
    : model_(std::move(model)), cfg_(cfg), schedule_(std::move(schedule)),
      adam_(std::move(state)) {
  cfg_.validate();
  const auto& params = model_.params();
  if (adam_.m.empty()) {
    for (const auto& p : params) {
      adam_.m.push_back(FrameDenoiser::Matrix::Zero(p.rows(), p.cols()));
      adam_.v.push_back(FrameDenoiser::Matrix::Zero(p.rows(), p.cols()));
    }
  } else if (adam_.m.size() != params.size() || adam_.v.size() != params.size()) {
    throw std::invalid_argument("training: optimizer state does not match the model");
  }
}

std::vector<TrainLogEntry> DenoiserTrainer::run(
    const std::vector<TrainingExample>& data, std::size_t steps,
    const std::function<void(const TrainLogEntry&)>& on_step) {
  if (data.empty()) throw std::invalid_argument("training: empty dataset");
  for (const auto& ex : data) {
    if (ex.signal.empty()) throw std::invalid_argument("training: empty example");
  }
  std::vector<TrainLogEntry> log;
  log.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    // keyed by the update count so a resumed run continues the same stream
    std::mt19937_64 rng(cfg_.seed ^ (0x9E3779B97F4A7C15ULL * (adam_.step + 1)));
    log.push_back(step(data, rng));
    if (on_step) on_step(log.back());
  }
  return log;
}

TrainLogEntry DenoiserTrainer::step(const std::vector<TrainingExample>& data,
                                    std::mt19937_64& rng) {
  using Matrix = FrameDenoiser::Matrix;
  const std::size_t batch = cfg_.batch;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::bernoulli_distribution drop(cfg_.cond_dropout);
  std::normal_distribution<double> normal(0.0, 1.0);

  struct Sample {
    Signal clean;
    Signal noisy;
    double sigma;
    Preconditioning pre;
    std::size_t col0;
  };
  std::vector<Sample> samples(batch);
  Matrix emb_inputs(static_cast<Eigen::Index>(model_.config().emb_inputs()),
                    static_cast<Eigen::Index>(batch));
  std::vector<FrameDenoiser::Segment> segments;
  std::size_t total_frames = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const TrainingExample& ex = data[pick(rng)];
    const std::size_t len = std::min(cfg_.crop_len, ex.signal.size());
    std::uniform_int_distribution<std::size_t> offset(0, ex.signal.size() - len);
    const std::size_t start = offset(rng);
    Sample& s = samples[b];
    s.clean.assign(ex.signal.begin() + static_cast<std::ptrdiff_t>(start),
                   ex.signal.begin() + static_cast<std::ptrdiff_t>(start + len));
    s.sigma = sample_training_sigma(schedule_, rng);
    s.pre = Preconditioning::at(s.sigma, model_.sigma_data());
    s.noisy.resize(len);
    for (std::size_t i = 0; i < len; ++i) s.noisy[i] = s.clean[i] + s.sigma * normal(rng);
    const Conditioning cond = drop(rng) ? Conditioning::absent() : ex.cond;
    emb_inputs.col(static_cast<Eigen::Index>(b)) = model_.embedding_input(s.sigma, cond);
    s.col0 = total_frames;
    const std::size_t count = model_.frame_count(len);
    segments.push_back({total_frames, total_frames + count});
    total_frames += count;
  }

  Matrix frames(static_cast<Eigen::Index>(model_.config().frame_len),
                static_cast<Eigen::Index>(total_frames));
  for (const Sample& s : samples) model_.extract_frames(s.noisy, s.pre.c_in, frames, s.col0);

  FrameDenoiser::Tape tape;
  model_.forward(frames, emb_inputs, std::move(segments), tape);

  Matrix d_out(tape.out.rows(), tape.out.cols());
  double loss = 0.0;
  double weighted = 0.0;
  for (const Sample& s : samples) {
    const std::size_t len = s.clean.size();
    Signal denoised(len);
    for (std::size_t i = 0; i < len; ++i) denoised[i] = s.pre.c_skip * s.noisy[i];
    model_.overlap_add(tape.out, s.col0, len, s.pre.c_out, denoised);

    const double lambda = cfg_.edm_weighting ? 1.0 / (s.pre.c_out * s.pre.c_out) : 1.0;
    const double norm = 1.0 / static_cast<double>(batch * len);
    double err = 0.0;
    Signal d_denoised(len);
    for (std::size_t i = 0; i < len; ++i) {
      const double diff = denoised[i] - s.clean[i];
      err += diff * diff;
      d_denoised[i] = 2.0 * lambda * norm * diff;
    }
    loss += err * norm;
    weighted += lambda * err * norm;
    model_.overlap_add_adjoint(d_denoised, s.pre.c_out, d_out, s.col0);
  }

  if (!std::isfinite(loss) || !std::isfinite(weighted)) {
    std::ostringstream msg;
    msg << "training diverged at step " << adam_.step + 1 << ": loss=" << loss
        << " sigmas=[";
    for (const Sample& s : samples) msg << ' ' << s.sigma;
    msg << " ]";
    throw NumericalError(msg.str());
  }

  auto& params = model_.params();
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(Matrix::Zero(p.rows(), p.cols()));
  Matrix d_frames;
  model_.backward(tape, d_out, d_frames, &grads);

  adam_.step += 1;
  const double t = static_cast<double>(adam_.step);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam_.m[k] = cfg_.beta1 * adam_.m[k] + (1.0 - cfg_.beta1) * grads[k];
    adam_.v[k] = cfg_.beta2 * adam_.v[k] + (1.0 - cfg_.beta2) * grads[k].cwiseAbs2();
    params[k].array() -= cfg_.lr * (adam_.m[k].array() / bc1) /
                         ((adam_.v[k].array() / bc2).sqrt() + cfg_.eps);
  }
  return {adam_.step, loss, weighted};
}

TrainResult train_denoiser(const std::vector<TrainingExample>& data,
                           const SigmaSchedule& schedule, const FrameDenoiserConfig& arch,
                           const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("training: empty dataset");
  std::mt19937_64 init_rng(cfg.seed);
  FrameDenoiser model(arch, estimate_sigma_data(data), init_rng);
  DenoiserTrainer trainer(std::move(model), cfg, schedule);
  auto log = trainer.run(data, cfg.steps);
  return {trainer.model(), trainer.optimizer(), std::move(log)};
}

}  // namespace dpsep
