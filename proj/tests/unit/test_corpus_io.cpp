#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpsep/toy_corpus.hpp"
#include "dpsep/wav.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using dpsep::Signal;
using dpsep::ToyCorpusSpec;

namespace {

// Hann-windowed periodogram by direct DFT, bins 0..n/2.
std::vector<double> periodogram(const Signal& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(t) / double(n));
      const double arg = 2.0 * std::numbers::pi * double(k * t % n) / double(n);
      re += w * x[t] * std::cos(arg);
      im -= w * x[t] * std::sin(arg);
    }
    p[k] = re * re + im * im;
  }
  return p;
}

double band_fraction(const std::vector<double>& p, double sr, std::size_t n, double lo, double hi) {
  double in = 0.0, all = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double f = double(k) * sr / double(n);
    all += p[k];
    if (f >= lo && f <= hi) in += p[k];
  }
  return in / all;
}

std::vector<double> normalized(std::vector<double> p) {
  double s = 0.0;
  for (double v : p) s += v;
  for (double& v : p) v /= s;
  return p;
}

ToyCorpusSpec small_spec() {
  ToyCorpusSpec s;
  s.length = 1600;
  s.per_class = 4;
  s.noise_count = 4;
  s.speech_classes = {{"low", 500.0, 1000.0}, {"high", 1500.0, 3000.0}};
  s.seed = 7;
  return s;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dpsep_unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("toy corpus layout and conditioning") {
  const auto spec = small_spec();
  const auto items = dpsep::gen_toy_corpus(spec);
  REQUIRE(items.size() == 12);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    CHECK(it.signal.size() == 1600);
    if (i < 8) {
      CHECK(it.kind == dpsep::SourceKind::speech);
      CHECK(it.class_index == i / 4);
      CHECK(it.label == spec.speech_classes[i / 4].name);
      REQUIRE(it.cond.present);
      CHECK(it.cond.values == dpsep::class_conditioning(i / 4, 2));
    } else {
      CHECK(it.kind == dpsep::SourceKind::noise);
      CHECK_FALSE(it.cond.present);
    }
    const double rms = testutil::norm2(it.signal) / std::sqrt(1600.0);
    CHECK(rms >= spec.rms_min * (1 - 1e-12));
    CHECK(rms <= spec.rms_max * (1 + 1e-12));
  }
  CHECK(dpsep::class_conditioning(1, 3) == std::vector<double>{0.0, 1.0, 0.0});
  CHECK_THROWS_AS(dpsep::class_conditioning(3, 3), std::out_of_range);
}

TEST_CASE("toy corpus is deterministic per seed") {
  auto spec = small_spec();
  const auto a = dpsep::gen_toy_corpus(spec);
  const auto b = dpsep::gen_toy_corpus(spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].signal == b[i].signal);
  spec.seed = 8;
  CHECK(dpsep::gen_toy_corpus(spec)[0].signal != a[0].signal);
}

TEST_CASE("class energy stays inside its band") {
  const auto spec = small_spec();
  const auto items = dpsep::gen_toy_corpus(spec);
  std::vector<std::vector<double>> class_avg(2, std::vector<double>(801, 0.0));
  for (const auto& it : items) {
    const auto p = periodogram(it.signal);
    const auto& band = it.kind == dpsep::SourceKind::speech ? spec.speech_classes[it.class_index]
                                                           : spec.noise_band;
    const double frac = band_fraction(p, spec.sample_rate, spec.length, band.f_lo, band.f_hi);
    CAPTURE(it.label);
    CHECK(frac > 0.95);
    if (it.kind == dpsep::SourceKind::speech) {
      const auto pn = normalized(p);
      for (std::size_t k = 0; k < pn.size(); ++k) class_avg[it.class_index][k] += pn[k] / 4.0;
    }
  }
  // overlap of the two class spectra as shared probability mass
  double overlap = 0.0;
  for (std::size_t k = 0; k < 801; ++k) overlap += std::min(class_avg[0][k], class_avg[1][k]);
  CHECK(overlap < 0.05);
}

TEST_CASE("corpus spec validation names the field") {
  auto s = small_spec();
  s.speech_classes[1].f_hi = 9000.0;
  CHECK_THROWS_WITH_AS(dpsep::gen_toy_corpus(s), doctest::Contains("corpus.speech_classes[1].f_hi"),
                       std::invalid_argument);
  s = small_spec();
  s.speech_classes[1] = {"clash", 900.0, 1200.0};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("overlaps"), std::invalid_argument);
  s = small_spec();
  s.noise_band.f_lo = -1.0;
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("corpus.noise_band.f_lo"), std::invalid_argument);
  s = small_spec();
  s.length = 0;
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("corpus.length"), std::invalid_argument);
  s = small_spec();
  s.rms_min = 0.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = small_spec();
  s.speech_classes[0] = {"thin", 500.0, 520.0};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("wav round trip and header layout") {
  std::mt19937_64 rng(9);
  Signal x(1001);
  for (double& v : x) v = testutil::uniform(rng, -1.0, 1.0);
  x[0] = 1.0;
  x[1] = -1.0;
  x[2] = 0.0;
  const auto path = temp_path("round.wav");
  dpsep::write_wav(path, x, 16000);

  CHECK(fs::file_size(path) == 44 + 2 * 1001);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto u16 = [&](std::size_t o) { return unsigned(b[o]) | unsigned(b[o + 1]) << 8; };
  auto u32 = [&](std::size_t o) { return u16(o) | u16(o + 2) << 16; };
  CHECK(std::string(b.begin(), b.begin() + 4) == "RIFF");
  CHECK(u32(4) == 36 + 2 * 1001);
  CHECK(std::string(b.begin() + 8, b.begin() + 16) == "WAVEfmt ");
  CHECK(u16(20) == 1);
  CHECK(u16(22) == 1);
  CHECK(u32(24) == 16000);
  CHECK(u32(28) == 32000);
  CHECK(u16(34) == 16);
  CHECK(std::string(b.begin() + 36, b.begin() + 40) == "data");

  const auto back = dpsep::read_wav(path);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == x.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back.samples[i] - x[i]));
  CHECK(worst <= 0.5 / 32767.0 + 1e-15);
  CHECK(back.samples[0] == 1.0);
  CHECK(back.samples[1] == -1.0);
  CHECK(back.samples[2] == 0.0);

  // out-of-range samples clip
  dpsep::write_wav(path, Signal{2.0, -3.0}, 8000);
  CHECK(dpsep::read_wav(path).samples == Signal{1.0, -1.0});
}

TEST_CASE("normalized wav keeps the recorded scale") {
  std::mt19937_64 rng(10);
  const auto x = testutil::randn(500, rng, 3.0);
  const auto path = temp_path("scaled.wav");
  const double scale = dpsep::write_wav_normalized(path, x, 16000);
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  CHECK(scale == peak);
  std::uint32_t sr = 0;
  const auto back = dpsep::read_wav_scaled(path, scale, &sr);
  CHECK(sr == 16000);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) <= scale * 0.5 / 32767.0 + 1e-12);
  CHECK(dpsep::write_wav_normalized(path, Signal(10, 0.0), 16000) == 1.0);

  const auto a = temp_path("a.wav"), b = temp_path("b.wav");
  dpsep::write_wav(a, x, 16000);
  dpsep::write_wav(b, x, 16000);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {}));
}

TEST_CASE("malformed wav files are rejected") {
  const auto missing = temp_path("missing.wav");
  fs::remove(missing);
  CHECK_THROWS_WITH_AS(dpsep::read_wav(missing), doctest::Contains("missing.wav"), std::runtime_error);

  const auto junk = temp_path("junk.wav");
  std::ofstream(junk, std::ios::binary) << "not a wave file at all";
  CHECK_THROWS_WITH_AS(dpsep::read_wav(junk), doctest::Contains("RIFF"), std::runtime_error);

  const auto path = temp_path("trunc.wav");
  dpsep::write_wav(path, Signal(100, 0.5), 16000);
  fs::resize_file(path, 60);
  CHECK_THROWS_WITH_AS(dpsep::read_wav(path), doctest::Contains("truncated"), std::runtime_error);

  // stereo header
  dpsep::write_wav(path, Signal(100, 0.5), 16000);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(22);
    f.put(2);
  }
  CHECK_THROWS_WITH_AS(dpsep::read_wav(path), doctest::Contains("16-bit PCM mono"), std::runtime_error);
}
