#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpsep/sampler.hpp"
#include "test_util.hpp"

using dpsep::ChurnConfig;
using dpsep::Conditioning;
using dpsep::GaussianPrior;
using dpsep::GmmPrior;
using dpsep::GuidanceConfig;
using dpsep::SamplerConfig;
using dpsep::Signal;
using dpsep::SignalView;
using dpsep::SourcePriors;
using dpsep::StftConfig;

namespace {

const StftConfig kSmall{16, 4, true};

SamplerConfig make_cfg(double sigma_max, double sigma_min, std::size_t n, double s_churn,
                       std::uint64_t seed, bool final_denoise = true) {
  SamplerConfig c{dpsep::build_schedule(sigma_max, sigma_min, 7.0, n), ChurnConfig{}, seed};
  c.churn.s_churn = s_churn;
  c.final_denoise = final_denoise;
  return c;
}

// Gaussian whose mean and variance are picked by a one-hot conditioning.
class ClassGaussian final : public dpsep::ScoreModel {
 public:
  ClassGaussian(std::vector<GaussianPrior> classes, GaussianPrior pooled)
      : classes_(std::move(classes)), pooled_(std::move(pooled)) {}
  std::size_t dim() const override { return pooled_.dim(); }
  Signal denoise(SignalView x, double sigma, const Conditioning& c) const override {
    return pick(c).denoise(x, sigma, c);
  }
  Signal vjp(SignalView x, double sigma, const Conditioning& c, SignalView v) const override {
    return pick(c).vjp(x, sigma, c, v);
  }

 private:
  const GaussianPrior& pick(const Conditioning& c) const {
    if (!c.present) return pooled_;
    const auto it = std::max_element(c.values.begin(), c.values.end());
    return classes_[std::size_t(it - c.values.begin())];
  }
  std::vector<GaussianPrior> classes_;
  GaussianPrior pooled_;
};

class NanModel final : public dpsep::ScoreModel {
 public:
  std::size_t dim() const override { return 0; }
  Signal denoise(SignalView x, double sigma, const Conditioning&) const override {
    Signal out(x.begin(), x.end());
    if (sigma < 1.0) out[0] = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  Signal vjp(SignalView, double, const Conditioning&, SignalView v) const override {
    return Signal(v.begin(), v.end());
  }
};

double compressed_residual(SignalView y, const std::vector<Signal>& est) {
  const std::vector<Signal> zero{Signal(y.size(), 0.0)};
  return std::sqrt(dpsep::rec_loss(y, est, kSmall) / dpsep::rec_loss(y, zero, kSmall));
}

// Terminal map of the probability-flow ODE for a diagonal Gaussian prior:
// x - mu scales by sqrt(v + sigma^2) along the flow.
Signal exact_flow(const GaussianPrior& p, SignalView x0, double s0, double s1) {
  Signal out(x0.size());
  for (std::size_t j = 0; j < x0.size(); ++j) {
    const double v = p.var()[j];
    out[j] = p.mean()[j] + (x0[j] - p.mean()[j]) * std::sqrt((v + s1 * s1) / (v + s0 * s0));
  }
  return out;
}

}  // namespace

TEST_CASE("init_state draws K+1 vectors at sigma_max") {
  std::mt19937_64 a(11), b(11);
  const auto s = dpsep::init_state(2, 64000, 4.0, a);
  REQUIRE(s.speech.size() == 2);
  CHECK(s.speech[0].size() == 64000);
  CHECK(s.speech[1].size() == 64000);
  CHECK(s.noise.size() == 64000);
  CHECK(s.sigma == 4.0);
  const auto t = dpsep::init_state(2, 64000, 4.0, b);
  CHECK(s.speech == t.speech);
  CHECK(s.noise == t.noise);

  std::mt19937_64 rng(12);
  const auto u = dpsep::init_state(1, 10000, 2.5, rng);
  for (const Signal* v : {&u.speech[0], &u.noise}) {
    double m = 0.0, q = 0.0;
    for (double x : *v) m += x;
    m /= double(v->size());
    for (double x : *v) q += (x - m) * (x - m);
    const double sd = std::sqrt(q / double(v->size() - 1));
    CHECK(std::abs(sd / 2.5 - 1.0) < 0.03);
    CHECK(std::abs(m) < 3.0 * 2.5 / 100.0);
  }
}

TEST_CASE("churn raises the noise level to sigma_hat in distribution") {
  std::mt19937_64 rng(13);
  const double sigma = 1.5, sigma_hat = 1.5 * 1.3;
  dpsep::StackedState u{testutil::randn(50000, rng, sigma), testutil::randn(50000, rng, sigma)};
  dpsep::apply_churn(u, sigma, sigma_hat, 1.0, rng);
  for (const auto& v : u) {
    const double sd = testutil::norm2(v) / std::sqrt(double(v.size()));
    // standard error of a sample std is sd / sqrt(2n)
    CHECK(std::abs(sd - sigma_hat) < 4.0 * sigma_hat / std::sqrt(2.0 * 50000.0));
  }
  // no increase leaves the state alone apart from a zero-scaled draw
  dpsep::StackedState w{Signal{1.0, 2.0}};
  dpsep::apply_churn(w, 1.0, 1.0, 1.0, rng);
  CHECK(w[0] == Signal{1.0, 2.0});
}

TEST_CASE("unconditional sampling reproduces gaussian moments") {
  const double mu = 1.5, var = 0.6;
  const GaussianPrior prior({mu}, {var});
  const auto cfg = make_cfg(80.0, 1e-3, 100, 0.0, 0);
  std::mt19937_64 rng(14);
  const int draws = 2000;
  double m = 0.0, q = 0.0;
  std::vector<double> xs;
  for (int k = 0; k < draws; ++k) xs.push_back(dpsep::unconditional_sample(prior, 1, cfg, {}, rng)[0]);
  for (double x : xs) m += x;
  m /= draws;
  for (double x : xs) q += (x - m) * (x - m);
  q /= draws - 1;
  CAPTURE(m);
  CAPTURE(q);
  CHECK(std::abs(m - mu) < 0.05 * mu);
  CHECK(std::abs(q - var) < 0.10 * var);
}

TEST_CASE("heun solution converges to the exact gaussian flow map") {
  std::mt19937_64 rng(15);
  const std::size_t d = 8;
  Signal mean = testutil::randn(d, rng), var(d);
  for (double& v : var) v = testutil::log_uniform(rng, 0.05, 2.0);
  const GaussianPrior prior(mean, var);
  const double smax = 80.0, smin = 1e-3;
  const auto x0 = testutil::randn(d, rng, smax);
  const auto exact = exact_flow(prior, x0, smax, smin);

  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {50, 100, 200, 400}) {
    const auto cfg = make_cfg(smax, smin, n, 0.0, 0, false);
    dpsep::StackedState u{x0};
    std::mt19937_64 unused(0);
    dpsep::heun_solve(u, cfg.schedule, cfg.churn, unused, [&](const dpsep::StackedState& v, double s) {
      return dpsep::StackedState{dpsep::score_from_denoiser(prior, v[0], s, {})};
    });
    Signal diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = u[0][j] - exact[j];
    const double err = testutil::norm2(diff) / testutil::norm2(exact);
    CAPTURE(n);
    CAPTURE(err);
    CHECK(err < prev);
    if (n == 400) CHECK(err < 1e-3);
    prev = err;
  }
}

TEST_CASE("two-component mixture occupancy matches the weights") {
  const double w0 = 0.3;
  const GmmPrior prior({w0, 1.0 - w0}, {{-4.0}, {4.0}}, {{0.25}, {0.25}});
  const auto cfg = make_cfg(80.0, 1e-3, 60, 0.0, 0);
  std::mt19937_64 rng(16);
  const int draws = 5000;
  int left = 0;
  for (int k = 0; k < draws; ++k) left += dpsep::unconditional_sample(prior, 1, cfg, {}, rng)[0] < 0.0;
  const double sd = std::sqrt(draws * w0 * (1.0 - w0));
  CAPTURE(left);
  CHECK(std::abs(left - draws * w0) < 3.0 * sd);
}

TEST_CASE("sampler runs are deterministic") {
  std::mt19937_64 rng(17);
  const std::size_t d = 40;
  const GaussianPrior speech(testutil::randn(d, rng), Signal(d, 0.3));
  const GaussianPrior noise(testutil::randn(d, rng), Signal(d, 0.3));
  const SourcePriors pr{speech, noise, std::vector<Conditioning>(2), 0.0};
  const auto y = testutil::randn(d, rng);

  const auto cfg = make_cfg(4.0, 1e-5, 40, 30.0, 99);
  const auto a = dpsep::sample_posterior(y, pr, cfg, GuidanceConfig{}, kSmall);
  const auto b = dpsep::sample_posterior(y, pr, cfg, GuidanceConfig{}, kSmall);
  CHECK(a.speech == b.speech);
  CHECK(a.noise == b.noise);
  auto other = cfg;
  other.seed = 100;
  CHECK(dpsep::sample_posterior(y, pr, other, GuidanceConfig{}, kSmall).noise != a.noise);

  // without churn the seed only enters through the initial state
  const auto still = make_cfg(4.0, 1e-5, 40, 0.0, 5);
  std::mt19937_64 init_rng(5);
  const auto init = dpsep::init_state(2, d, 4.0, init_rng);
  dpsep::StackedState u = init.speech;
  u.push_back(init.noise);
  const dpsep::ReconstructionLoss loss(y, kSmall);
  std::mt19937_64 unused(12345);
  dpsep::heun_solve(u, still.schedule, still.churn, unused, [&](const dpsep::StackedState& v, double s) {
    const dpsep::JointState st{{v[0], v[1]}, v[2], s};
    auto p = dpsep::posterior_score(loss, st, pr, GuidanceConfig{});
    dpsep::StackedState out = p.speech_scores;
    out.push_back(p.noise_score);
    return out;
  });
  auto raw = still;
  raw.final_denoise = false;
  const auto res = dpsep::sample_posterior(y, pr, raw, GuidanceConfig{}, kSmall);
  CHECK(res.speech[0] == u[0]);
  CHECK(res.speech[1] == u[1]);
  CHECK(res.noise == u[2]);
}

TEST_CASE("terminal projection applies the denoiser at sigma_min") {
  std::mt19937_64 rng(18);
  const std::size_t d = 24;
  const GaussianPrior speech(testutil::randn(d, rng), Signal(d, 0.5));
  const GaussianPrior noise(testutil::randn(d, rng), Signal(d, 0.5));
  const SourcePriors pr{speech, noise, {Conditioning::absent()}, 0.0};
  const auto y = testutil::randn(d, rng);
  auto cfg = make_cfg(4.0, 1e-2, 30, 0.0, 3, false);
  const auto raw = dpsep::sample_posterior(y, pr, cfg, GuidanceConfig{}, kSmall);
  cfg.final_denoise = true;
  const auto proj = dpsep::sample_posterior(y, pr, cfg, GuidanceConfig{}, kSmall);
  CHECK(proj.speech[0] == dpsep::gaussian_denoise(speech, raw.speech[0], 1e-2));
  CHECK(proj.noise == dpsep::gaussian_denoise(noise, raw.noise, 1e-2));
}

TEST_CASE("guided sampling reproduces the mixture") {
  std::mt19937_64 rng(19);
  const std::size_t d = 64;
  // disjoint supports: each class lives on its own half of the coordinates
  auto half = [&](std::size_t lo) {
    Signal m(d, 0.0), v(d, 1e-4);
    for (std::size_t j = lo; j < lo + d / 2; ++j) {
      m[j] = testutil::uniform(rng, -1.0, 1.0);
      v[j] = 1e-3;
    }
    return GaussianPrior(m, v);
  };
  const auto a = half(0), b = half(d / 2);
  Signal pooled_m(d), pooled_v(d);
  for (std::size_t j = 0; j < d; ++j) {
    pooled_m[j] = a.mean()[j] + b.mean()[j];
    pooled_v[j] = a.var()[j] + b.var()[j];
  }
  const ClassGaussian speech({a, b}, GaussianPrior(pooled_m, pooled_v));
  const GaussianPrior noise(testutil::randn(d, rng, 0.1), Signal(d, 1e-4));
  const SourcePriors pr{speech, noise, {Conditioning::of({1.0, 0.0}), Conditioning::of({0.0, 1.0})}, 1.0};

  Signal y(d);
  for (std::size_t j = 0; j < d; ++j) y[j] = a.mean()[j] + b.mean()[j] + noise.mean()[j];

  const auto cfg = make_cfg(4.0, 1e-5, 400, 30.0, 7);
  const auto res = dpsep::sample_posterior(y, pr, cfg, GuidanceConfig{0.5}, kSmall);
  std::vector<Signal> all = res.speech;
  all.push_back(res.noise);
  const double r = compressed_residual(y, all);
  CAPTURE(r);
  CHECK(r < 1e-2);

  // without guidance the draws scatter around the prior means
  const auto free = dpsep::sample_posterior(y, pr, cfg, GuidanceConfig{0.0}, kSmall);
  std::vector<Signal> free_all = free.speech;
  free_all.push_back(free.noise);
  CHECK(compressed_residual(y, free_all) > 3.0 * r);

  // trajectory: one row per step, sigmas on the ladder
  REQUIRE(res.trajectory.size() == cfg.schedule.size() - 1);
  for (std::size_t i = 0; i < res.trajectory.size(); ++i) {
    const auto& row = res.trajectory[i];
    CHECK(row.step == i);
    CHECK(row.sigma == cfg.schedule[i]);
    CHECK(row.sigma_hat >= row.sigma);
    CHECK(std::isfinite(row.diagnostics.rec_loss));
    CHECK(std::isfinite(row.state_norm));
  }
  std::ostringstream csv;
  dpsep::write_trajectory_csv(csv, res.trajectory);
  const std::string text = csv.str();
  CHECK(text.rfind("step,sigma,sigma_hat,rec_loss,zeta_x,zeta_n,speech_grad_norm,noise_grad_norm,state_norm\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == long(res.trajectory.size() + 1));

  auto quiet = cfg;
  quiet.capture_trajectory = false;
  CHECK(dpsep::sample_posterior(y, pr, quiet, GuidanceConfig{0.5}, kSmall).trajectory.empty());
}

TEST_CASE("sampler argument and numerical errors") {
  std::mt19937_64 rng(20);
  const GaussianPrior g8(Signal(8, 0.0), Signal(8, 1.0));
  const SourcePriors pr{g8, g8, {Conditioning::absent()}, 0.0};
  const auto cfg = make_cfg(4.0, 1e-5, 10, 0.0, 0);
  CHECK_THROWS_AS(dpsep::sample_posterior(Signal{}, pr, cfg, {}, kSmall), std::invalid_argument);
  CHECK_THROWS_AS(dpsep::sample_posterior(testutil::randn(12, rng), pr, cfg, {}, kSmall),
                  std::invalid_argument);
  auto bad = cfg;
  bad.churn.s_churn = -1.0;
  CHECK_THROWS_AS(dpsep::sample_posterior(testutil::randn(8, rng), pr, bad, {}, kSmall),
                  std::invalid_argument);
  CHECK_THROWS_AS(dpsep::unconditional_sample(g8, 0, cfg, {}, rng), std::invalid_argument);

  const NanModel nan;
  const SourcePriors broken{nan, g8, {Conditioning::absent()}, 0.0};
  CHECK_THROWS_AS(dpsep::sample_posterior(testutil::randn(8, rng), broken, cfg, {}, kSmall),
                  dpsep::NumericalError);
  dpsep::StackedState u{Signal(4, 1.0)};
  try {
    dpsep::heun_solve(u, cfg.schedule, cfg.churn, rng, [](const dpsep::StackedState& v, double s) {
      Signal out(v[0].size(), 0.0);
      if (s < 1.0) out[0] = std::numeric_limits<double>::infinity();
      return dpsep::StackedState{out};
    });
    FAIL("expected a numerical error");
  } catch (const dpsep::NumericalError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
