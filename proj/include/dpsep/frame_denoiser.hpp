#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dpsep/score_model.hpp"

namespace dpsep {

struct FrameDenoiserConfig {
  std::size_t frame_len = 64;  // hop is frame_len / 2
  std::size_t hidden = 128;
  std::size_t res_blocks = 2;
  std::size_t emb_hidden = 64;
  std::size_t fourier = 8;
  std::size_t cond_dim = 0;

  std::size_t hop() const { return frame_len / 2; }
  std::size_t emb_inputs() const { return 2 + 2 * fourier + cond_dim; }
  void validate() const;
};

// EDM preconditioning scalars for one noise level.
struct Preconditioning {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;

  static Preconditioning at(double sigma, double sigma_data);
};

// Time-domain denoiser: the (c_in-scaled) signal is cut into half-overlapping
// frames, each frame goes through a residual MLP whose hidden layers are
// FiLM-modulated by an embedding of (sigma, conditioning), and the outputs are
// overlap-added with a periodic Hann window (which sums to one at hop
// frame_len/2). A linear frame-to-frame path, scaled per noise level, runs
// alongside the MLP. D = c_skip x + c_out * OLA(F(c_in x)).
class FrameDenoiser final : public ScoreModel {
 public:
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;

  // One contiguous block of frame columns sharing a single embedding.
  struct Segment {
    std::size_t col_begin;
    std::size_t col_end;
  };

  // Activations kept for the reverse pass.
  struct Tape {
    std::vector<Segment> segments;
    Matrix emb_in;              // E x S
    Matrix emb_pre;             // He x S
    Matrix emb;                 // He x S
    std::vector<Matrix> gamma;  // per layer, H x S
    std::vector<Matrix> beta;
    Matrix frames;              // L x F
    std::vector<Matrix> z;      // pre-FiLM
    std::vector<Matrix> u;      // post-FiLM
    std::vector<Matrix> a;      // layer outputs
    Matrix lin;                 // linear path before scaling, L x F
    Matrix lin_gamma;           // L x S
    Matrix out;                 // L x F
  };

  FrameDenoiser(FrameDenoiserConfig cfg, double sigma_data, std::mt19937_64& rng);
  FrameDenoiser(FrameDenoiserConfig cfg, double sigma_data, std::vector<Matrix> params);

  const FrameDenoiserConfig& config() const { return cfg_; }
  double sigma_data() const { return sigma_data_; }
  std::size_t signal_len() const { return signal_len_; }
  void set_signal_len(std::size_t d) { signal_len_ = d; }

  std::vector<Matrix>& params() { return params_; }
  const std::vector<Matrix>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  std::size_t parameter_count() const;

  std::size_t dim() const override { return 0; }
  Signal denoise(SignalView x, double sigma, const Conditioning& cond) const override;
  Signal vjp(SignalView x, double sigma, const Conditioning& cond,
             SignalView v) const override;
  Linearization linearize(SignalView x, double sigma,
                          const Conditioning& cond) const override;

  // Frame layout helpers shared with the trainer.
  std::size_t frame_count(std::size_t len) const;
  void extract_frames(SignalView x, double scale, Matrix& frames, std::size_t col0) const;
  void overlap_add(const Matrix& out, std::size_t col0, std::size_t len, double scale,
                   Signal& dst) const;
  void overlap_add_adjoint(SignalView v, double scale, Matrix& d_out,
                           std::size_t col0) const;
  void frames_adjoint(const Matrix& d_frames, std::size_t col0, double scale,
                      Signal& dst) const;

  Vector embedding_input(double sigma, const Conditioning& cond) const;

  // Network pass over frame columns; emb_inputs has one column per segment.
  void forward(const Matrix& frames, const Matrix& emb_inputs,
               std::vector<Segment> segments, Tape& tape) const;
  // Reverse pass. d_frames receives dL/dframes; param_grads (same layout as
  // params()) is accumulated into when non-null.
  void backward(const Tape& tape, const Matrix& d_out, Matrix& d_frames,
                std::vector<Matrix>* param_grads) const;

 private:
  void init_names();
  void check_cond(const Conditioning& cond) const;

  // Parameter slots.
  std::size_t emb_w() const { return 0; }
  std::size_t emb_b() const { return 1; }
  std::size_t film_w(std::size_t l) const { return 2 + 2 * l; }
  std::size_t film_b(std::size_t l) const { return 3 + 2 * l; }
  std::size_t layer_w(std::size_t l) const { return 2 + 2 * (cfg_.res_blocks + 1) + 2 * l; }
  std::size_t layer_b(std::size_t l) const { return layer_w(l) + 1; }
  std::size_t out_w() const { return layer_w(cfg_.res_blocks + 1); }
  std::size_t out_b() const { return out_w() + 1; }
  std::size_t lin_w() const { return out_w() + 2; }
  std::size_t lin_film_w() const { return out_w() + 3; }
  std::size_t lin_film_b() const { return out_w() + 4; }

  FrameDenoiserConfig cfg_;
  double sigma_data_;
  std::size_t signal_len_ = 0;
  std::vector<double> window_;
  std::vector<Matrix> params_;
  std::vector<std::string> names_;
};

}  // namespace dpsep
