#include "dpsep/frame_denoiser.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dpsep {
namespace {

using Matrix = FrameDenoiser::Matrix;
using Vector = FrameDenoiser::Vector;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix silu(const Matrix& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_grad(const Matrix& x) {
  return x.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s + v * s * (1.0 - s);
  });
}

Matrix glorot(std::size_t rows, std::size_t cols, double gain, std::mt19937_64& rng) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  }
  return m;
}

// Expands per-segment columns to per-frame columns.
Matrix expand(const Matrix& per_segment, const std::vector<FrameDenoiser::Segment>& segs,
              Eigen::Index frames) {
  Matrix out(per_segment.rows(), frames);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    for (std::size_t c = segs[s].col_begin; c < segs[s].col_end; ++c) {
      out.col(static_cast<Eigen::Index>(c)) = per_segment.col(static_cast<Eigen::Index>(s));
    }
  }
  return out;
}

Matrix reduce(const Matrix& per_frame, const std::vector<FrameDenoiser::Segment>& segs) {
  Matrix out = Matrix::Zero(per_frame.rows(), static_cast<Eigen::Index>(segs.size()));
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto b = static_cast<Eigen::Index>(segs[s].col_begin);
    const auto n = static_cast<Eigen::Index>(segs[s].col_end - segs[s].col_begin);
    out.col(static_cast<Eigen::Index>(s)) = per_frame.middleCols(b, n).rowwise().sum();
  }
  return out;
}

}  // namespace

void FrameDenoiserConfig::validate() const {
  if (frame_len < 4 || frame_len % 2 != 0) {
    throw std::invalid_argument("network: frame_len must be even and >= 4");
  }
  if (hidden == 0 || emb_hidden == 0) {
    throw std::invalid_argument("network: hidden sizes must be > 0");
  }
}

Preconditioning Preconditioning::at(double sigma, double sigma_data) {
  const double s2 = sigma * sigma;
  const double d2 = sigma_data * sigma_data;
  const double norm = std::sqrt(s2 + d2);
  return {d2 / (s2 + d2), sigma * sigma_data / norm, 1.0 / norm, 0.25 * std::log(sigma)};
}

FrameDenoiser::FrameDenoiser(FrameDenoiserConfig cfg, double sigma_data,
                             std::mt19937_64& rng)
    : cfg_(cfg), sigma_data_(sigma_data) {
  cfg_.validate();
  if (!(sigma_data > 0.0)) throw std::invalid_argument("network: sigma_data must be > 0");
  const std::size_t h = cfg_.hidden;
  const std::size_t he = cfg_.emb_hidden;
  const std::size_t l = cfg_.frame_len;

  // conditioning columns start at zero
  Matrix emb = glorot(he, cfg_.emb_inputs(), 1.0, rng);
  const auto noise_cols = static_cast<Eigen::Index>(1 + 2 * cfg_.fourier);
  emb.rightCols(emb.cols() - noise_cols).setZero();
  params_.push_back(std::move(emb));
  params_.push_back(Matrix::Zero(he, 1));
  for (std::size_t k = 0; k <= cfg_.res_blocks; ++k) {
    params_.push_back(Matrix::Zero(2 * h, he));
    params_.push_back(Matrix::Zero(2 * h, 1));
  }
  params_.push_back(glorot(h, l, 1.0, rng));
  params_.push_back(Matrix::Zero(h, 1));
  for (std::size_t k = 1; k <= cfg_.res_blocks; ++k) {
    params_.push_back(glorot(h, h, 0.5, rng));
    params_.push_back(Matrix::Zero(h, 1));
  }
  params_.push_back(glorot(l, h, 0.1, rng));
  params_.push_back(Matrix::Zero(l, 1));
  params_.push_back(Matrix::Zero(l, l));
  params_.push_back(Matrix::Zero(l, he));
  params_.push_back(Matrix::Zero(l, 1));
  init_names();
}

FrameDenoiser::FrameDenoiser(FrameDenoiserConfig cfg, double sigma_data,
                             std::vector<Matrix> params)
    : cfg_(cfg), sigma_data_(sigma_data), params_(std::move(params)) {
  cfg_.validate();
  init_names();
  if (params_.size() != names_.size()) {
    throw std::invalid_argument("network: expected " + std::to_string(names_.size()) +
                                " parameter tensors, got " + std::to_string(params_.size()));
  }
  std::mt19937_64 dummy(0);
  const FrameDenoiser shape_ref(cfg_, 1.0, dummy);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].rows() != shape_ref.params_[i].rows() ||
        params_[i].cols() != shape_ref.params_[i].cols()) {
      throw std::invalid_argument("network: tensor " + names_[i] + " has wrong shape");
    }
  }
}

void FrameDenoiser::init_names() {
  names_ = {"emb.w", "emb.b"};
  for (std::size_t k = 0; k <= cfg_.res_blocks; ++k) {
    names_.push_back("film" + std::to_string(k) + ".w");
    names_.push_back("film" + std::to_string(k) + ".b");
  }
  for (std::size_t k = 0; k <= cfg_.res_blocks; ++k) {
    names_.push_back("layer" + std::to_string(k) + ".w");
    names_.push_back("layer" + std::to_string(k) + ".b");
  }
  names_.push_back("out.w");
  names_.push_back("out.b");
  names_.push_back("lin.w");
  names_.push_back("linfilm.w");
  names_.push_back("linfilm.b");

  window_.resize(cfg_.frame_len);
  for (std::size_t j = 0; j < cfg_.frame_len; ++j) {
    window_[j] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(j) /
                                      static_cast<double>(cfg_.frame_len));
  }
}

std::size_t FrameDenoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

void FrameDenoiser::check_cond(const Conditioning& cond) const {
  if (cond.present && cond.values.size() != cfg_.cond_dim) {
    throw std::invalid_argument("network: conditioning has " +
                                std::to_string(cond.values.size()) + " values, model expects " +
                                std::to_string(cfg_.cond_dim));
  }
}

std::size_t FrameDenoiser::frame_count(std::size_t len) const {
  const std::size_t hop = cfg_.hop();
  return (len + hop - 1) / hop + 1;
}

// Frame f covers samples [f*hop - hop, f*hop + hop).
void FrameDenoiser::extract_frames(SignalView x, double scale, Matrix& frames,
                                   std::size_t col0) const {
  const auto hop = static_cast<std::ptrdiff_t>(cfg_.hop());
  const auto len = static_cast<std::ptrdiff_t>(x.size());
  const std::size_t count = frame_count(x.size());
  for (std::size_t f = 0; f < count; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) * hop - hop;
    auto col = frames.col(static_cast<Eigen::Index>(col0 + f));
    for (std::size_t j = 0; j < cfg_.frame_len; ++j) {
      const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
      col(static_cast<Eigen::Index>(j)) =
          (p >= 0 && p < len) ? scale * x[static_cast<std::size_t>(p)] : 0.0;
    }
  }
}

void FrameDenoiser::overlap_add(const Matrix& out, std::size_t col0, std::size_t len,
                                double scale, Signal& dst) const {
  const auto hop = static_cast<std::ptrdiff_t>(cfg_.hop());
  const std::size_t count = frame_count(len);
  for (std::size_t f = 0; f < count; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) * hop - hop;
    for (std::size_t j = 0; j < cfg_.frame_len; ++j) {
      const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
      if (p < 0 || p >= static_cast<std::ptrdiff_t>(len)) continue;
      dst[static_cast<std::size_t>(p)] +=
          scale * window_[j] *
          out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(col0 + f));
    }
  }
}

void FrameDenoiser::overlap_add_adjoint(SignalView v, double scale, Matrix& d_out,
                                        std::size_t col0) const {
  const auto hop = static_cast<std::ptrdiff_t>(cfg_.hop());
  const std::size_t count = frame_count(v.size());
  for (std::size_t f = 0; f < count; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) * hop - hop;
    for (std::size_t j = 0; j < cfg_.frame_len; ++j) {
      const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
      d_out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(col0 + f)) =
          (p >= 0 && p < static_cast<std::ptrdiff_t>(v.size()))
              ? scale * window_[j] * v[static_cast<std::size_t>(p)]
              : 0.0;
    }
  }
}

void FrameDenoiser::frames_adjoint(const Matrix& d_frames, std::size_t col0, double scale,
                                   Signal& dst) const {
  const auto hop = static_cast<std::ptrdiff_t>(cfg_.hop());
  const std::size_t count = frame_count(dst.size());
  for (std::size_t f = 0; f < count; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) * hop - hop;
    for (std::size_t j = 0; j < cfg_.frame_len; ++j) {
      const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
      if (p < 0 || p >= static_cast<std::ptrdiff_t>(dst.size())) continue;
      dst[static_cast<std::size_t>(p)] +=
          scale * d_frames(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(col0 + f));
    }
  }
}

Vector FrameDenoiser::embedding_input(double sigma, const Conditioning& cond) const {
  check_cond(cond);
  const double c_noise = Preconditioning::at(sigma, sigma_data_).c_noise;
  Vector e = Vector::Zero(static_cast<Eigen::Index>(cfg_.emb_inputs()));
  Eigen::Index k = 0;
  e(k++) = c_noise;
  for (std::size_t j = 0; j < cfg_.fourier; ++j) {
    const double freq = std::ldexp(1.0, static_cast<int>(j) - 2);
    e(k++) = std::sin(freq * c_noise);
    e(k++) = std::cos(freq * c_noise);
  }
  for (std::size_t j = 0; j < cfg_.cond_dim; ++j) {
    e(k++) = cond.present ? cond.values[j] : 0.0;
  }
  e(k) = cond.present ? 1.0 : 0.0;
  return e;
}

void FrameDenoiser::forward(const Matrix& frames, const Matrix& emb_inputs,
                            std::vector<Segment> segments, Tape& tape) const {
  const std::size_t h = cfg_.hidden;
  const Eigen::Index n_frames = frames.cols();
  tape.segments = std::move(segments);
  tape.emb_in = emb_inputs;
  tape.emb_pre = (params_[emb_w()] * emb_inputs).colwise() + params_[emb_b()].col(0);
  tape.emb = silu(tape.emb_pre);

  const std::size_t layers = cfg_.res_blocks + 1;
  tape.gamma.resize(layers);
  tape.beta.resize(layers);
  tape.z.resize(layers);
  tape.u.resize(layers);
  tape.a.resize(layers);
  tape.frames = frames;

  const auto hh = static_cast<Eigen::Index>(h);
  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix film = (params_[film_w(l)] * tape.emb).colwise() + params_[film_b(l)].col(0);
    tape.gamma[l] = film.topRows(hh);
    tape.beta[l] = film.bottomRows(hh);

    const Matrix& input = l == 0 ? frames : tape.a[l - 1];
    tape.z[l] = (params_[layer_w(l)] * input).colwise() + params_[layer_b(l)].col(0);
    const Matrix scale = expand(tape.gamma[l], tape.segments, n_frames).array() + 1.0;
    const Matrix shift = expand(tape.beta[l], tape.segments, n_frames);
    tape.u[l] = tape.z[l].cwiseProduct(scale) + shift;
    tape.a[l] = silu(tape.u[l]);
    if (l > 0) tape.a[l] += tape.a[l - 1];
  }
  tape.out = (params_[out_w()] * tape.a.back()).colwise() + params_[out_b()].col(0);

  tape.lin = params_[lin_w()] * frames;
  tape.lin_gamma = (params_[lin_film_w()] * tape.emb).colwise() + params_[lin_film_b()].col(0);
  const Matrix lin_scale = expand(tape.lin_gamma, tape.segments, n_frames).array() + 1.0;
  tape.out += tape.lin.cwiseProduct(lin_scale);
}

void FrameDenoiser::backward(const Tape& tape, const Matrix& d_out, Matrix& d_frames,
                             std::vector<Matrix>* grads) const {
  const std::size_t layers = cfg_.res_blocks + 1;
  const Eigen::Index n_frames = d_out.cols();
  const auto hh = static_cast<Eigen::Index>(cfg_.hidden);

  if (grads != nullptr) {
    (*grads)[out_w()].noalias() += d_out * tape.a.back().transpose();
    (*grads)[out_b()] += d_out.rowwise().sum();
  }
  Matrix d_a = params_[out_w()].transpose() * d_out;
  Matrix d_emb = Matrix::Zero(tape.emb.rows(), tape.emb.cols());

  const Matrix lin_scale = expand(tape.lin_gamma, tape.segments, n_frames).array() + 1.0;
  const Matrix d_lin = d_out.cwiseProduct(lin_scale);
  Matrix d_frames_lin = params_[lin_w()].transpose() * d_lin;
  if (grads != nullptr) {
    (*grads)[lin_w()].noalias() += d_lin * tape.frames.transpose();
    const Matrix d_lin_gamma = reduce(d_out.cwiseProduct(tape.lin), tape.segments);
    (*grads)[lin_film_w()].noalias() += d_lin_gamma * tape.emb.transpose();
    (*grads)[lin_film_b()] += d_lin_gamma.rowwise().sum();
    d_emb.noalias() += params_[lin_film_w()].transpose() * d_lin_gamma;
  }

  for (std::size_t l = layers; l-- > 0;) {
    const Matrix d_u = d_a.cwiseProduct(silu_grad(tape.u[l]));
    const Matrix scale = expand(tape.gamma[l], tape.segments, n_frames).array() + 1.0;
    const Matrix d_z = d_u.cwiseProduct(scale);

    const Matrix& input = l == 0 ? tape.frames : tape.a[l - 1];
    if (grads != nullptr) {
      Matrix d_film(2 * hh, static_cast<Eigen::Index>(tape.segments.size()));
      d_film.topRows(hh) = reduce(d_u.cwiseProduct(tape.z[l]), tape.segments);
      d_film.bottomRows(hh) = reduce(d_u, tape.segments);
      d_emb.noalias() += params_[film_w(l)].transpose() * d_film;
      (*grads)[film_w(l)].noalias() += d_film * tape.emb.transpose();
      (*grads)[film_b(l)] += d_film.rowwise().sum();
      (*grads)[layer_w(l)].noalias() += d_z * input.transpose();
      (*grads)[layer_b(l)] += d_z.rowwise().sum();
    }
    Matrix d_input = params_[layer_w(l)].transpose() * d_z;
    if (l > 0) {
      d_a += d_input;  // residual path
    } else {
      d_frames = d_input + d_frames_lin;
    }
  }

  if (grads != nullptr) {
    const Matrix d_pre = d_emb.cwiseProduct(silu_grad(tape.emb_pre));
    (*grads)[emb_w()].noalias() += d_pre * tape.emb_in.transpose();
    (*grads)[emb_b()] += d_pre.rowwise().sum();
  }
}

Signal FrameDenoiser::denoise(SignalView x, double sigma, const Conditioning& cond) const {
  return linearize(x, sigma, cond).value;
}

Signal FrameDenoiser::vjp(SignalView x, double sigma, const Conditioning& cond,
                          SignalView v) const {
  return linearize(x, sigma, cond).pullback(v);
}

Linearization FrameDenoiser::linearize(SignalView x, double sigma,
                                       const Conditioning& cond) const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("denoiser: sigma must be finite and > 0");
  }
  if (x.empty()) throw std::invalid_argument("denoiser: empty input");
  const auto pre = Preconditioning::at(sigma, sigma_data_);
  const std::size_t len = x.size();
  const std::size_t count = frame_count(len);

  Matrix frames(static_cast<Eigen::Index>(cfg_.frame_len), static_cast<Eigen::Index>(count));
  extract_frames(x, pre.c_in, frames, 0);
  auto tape = std::make_shared<Tape>();
  forward(frames, embedding_input(sigma, cond), {{0, count}}, *tape);

  Linearization lin;
  lin.value.resize(len);
  for (std::size_t i = 0; i < len; ++i) lin.value[i] = pre.c_skip * x[i];
  overlap_add(tape->out, 0, len, pre.c_out, lin.value);

  lin.pullback = [this, tape, pre, len](SignalView v) {
    if (v.size() != len) throw std::invalid_argument("denoiser vjp: length mismatch");
    Matrix d_out(tape->out.rows(), tape->out.cols());
    overlap_add_adjoint(v, pre.c_out, d_out, 0);
    Matrix d_frames;
    backward(*tape, d_out, d_frames, nullptr);
    Signal g(len);
    for (std::size_t i = 0; i < len; ++i) g[i] = pre.c_skip * v[i];
    frames_adjoint(d_frames, 0, pre.c_in, g);
    return g;
  };
  return lin;
}

}  // namespace dpsep
