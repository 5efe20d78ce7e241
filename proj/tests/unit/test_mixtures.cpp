#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "dpsep/mixtures.hpp"
#include "test_util.hpp"

using dpsep::MixSpec;
using dpsep::Signal;

namespace {

double power(const Signal& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / double(x.size());
}

double db(double ratio) { return 10.0 * std::log10(ratio); }

Signal scaled(const Signal& x, double a) {
  Signal out(x);
  for (double& v : out) v *= a;
  return out;
}

Signal unit_power(std::size_t n, std::mt19937_64& rng) {
  auto x = testutil::randn(n, rng);
  return scaled(x, 1.0 / std::sqrt(power(x)));
}

// Reference SI-SDR written from the projection definition, no clamping.
double si_sdr_ref(const Signal& e, const Signal& r) {
  const double n = double(r.size());
  const double me = std::accumulate(e.begin(), e.end(), 0.0) / n;
  const double mr = std::accumulate(r.begin(), r.end(), 0.0) / n;
  Signal ec(e.size()), rc(r.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    ec[i] = e[i] - me;
    rc[i] = r[i] - mr;
  }
  const double a = testutil::dot(ec, rc) / testutil::dot(rc, rc);
  Signal s = scaled(rc, a), res(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) res[i] = ec[i] - s[i];
  return db(testutil::dot(s, s) / testutil::dot(res, res));
}

}  // namespace

TEST_CASE("make_mixture gains") {
  std::mt19937_64 rng(1);
  const auto a = unit_power(1000, rng), b = unit_power(1000, rng), n = unit_power(1000, rng);

  SUBCASE("0 dB between equal-power sources leaves the interferer alone") {
    const auto m = dpsep::make_mixture({a, b}, n, MixSpec{0.0, 0.0, 1});
    CHECK(m.source_gains[0] == 1.0);
    CHECK(m.source_gains[1] == doctest::Approx(1.0).epsilon(1e-14));
    // noise power equals the low-energy speaker's power
    CHECK(power(m.noise) == doctest::Approx(std::min(power(m.sources[0]), power(m.sources[1]))).epsilon(1e-13));
  }
  SUBCASE("-5 dB makes the interferer about 3.162 times the target power") {
    const auto m = dpsep::make_mixture({a, b}, n, MixSpec{-5.0, 0.0, 1});
    CHECK(power(m.sources[1]) / power(m.sources[0]) ==
          doctest::Approx(3.162277660168379332).epsilon(1e-13));
    // the target is now the quieter speaker and anchors the noise
    CHECK(power(m.noise) == doctest::Approx(power(m.sources[0])).epsilon(1e-13));
  }
  SUBCASE("+5 dB anchors the noise to the interferer") {
    const auto m = dpsep::make_mixture({a, b}, n, MixSpec{5.0, 3.0, 1});
    CHECK(db(power(m.sources[1]) / power(m.noise)) == doctest::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("make_mixture reproduces the requested SIR and SNR") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 4;
    const std::size_t d = 50 + rng() % 2000;
    std::vector<Signal> src;
    for (std::size_t i = 0; i < k; ++i) src.push_back(testutil::randn(d, rng, testutil::log_uniform(rng, 1e-3, 10.0)));
    const auto noise = testutil::randn(d, rng, testutil::log_uniform(rng, 1e-3, 10.0));
    const MixSpec spec{testutil::uniform(rng, -10.0, 10.0), testutil::uniform(rng, -5.0, 5.0), rng()};
    const auto m = dpsep::make_mixture(src, noise, spec);

    double p_low = power(m.sources[0]);
    for (std::size_t i = 1; i < k; ++i) {
      CHECK(std::abs(db(power(m.sources[0]) / power(m.sources[i])) - spec.sir_db) < 1e-9);
      p_low = std::min(p_low, power(m.sources[i]));
    }
    CHECK(std::abs(db(p_low / power(m.noise)) - spec.snr_db) < 1e-9);

    // y - sum of ground truths is exactly z
    const auto& y = m.observation.y;
    bool exact = true;
    for (std::size_t j = 0; j < d; ++j) {
      double clean = 0.0;
      for (const auto& s : m.sources) clean += s[j];
      clean += m.noise[j];
      exact = exact && (y[j] - clean == m.z[j]);
    }
    CHECK(exact);
    CHECK(m.observation.speakers == k);
    CHECK(m.observation.sigma_z == doctest::Approx(1e-4 * std::sqrt(power(src[0]))));
    CHECK(std::sqrt(power(m.z)) < 2.0 * m.observation.sigma_z);
  }
}

TEST_CASE("make_mixture is deterministic and rejects silent inputs") {
  std::mt19937_64 rng(3);
  const auto a = unit_power(300, rng), b = unit_power(300, rng), n = unit_power(300, rng);
  CHECK(dpsep::make_mixture({a, b}, n, {2.0, -1.0, 9}).observation.y ==
        dpsep::make_mixture({a, b}, n, {2.0, -1.0, 9}).observation.y);

  const Signal zero(300, 0.0);
  CHECK_THROWS_WITH_AS(dpsep::make_mixture({zero, b}, n, {}), doctest::Contains("target"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(dpsep::make_mixture({a, zero}, n, {}), doctest::Contains("source 2"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(dpsep::make_mixture({a, b}, zero, {}), doctest::Contains("noise"),
                       std::invalid_argument);
  CHECK_THROWS_AS(dpsep::make_mixture({a, Signal(299, 1.0)}, n, {}), std::invalid_argument);
  CHECK_THROWS_AS(dpsep::make_mixture({}, n, {}), std::invalid_argument);
  CHECK_THROWS_AS(dpsep::make_mixture({a}, n, {NAN, 0.0, 0}), std::invalid_argument);
}

TEST_CASE("si_sdr reference cases") {
  std::mt19937_64 rng(4);
  const auto r = testutil::randn(4000, rng);

  CHECK(dpsep::si_sdr(scaled(r, 3.7), r) == dpsep::kSiSdrCap);
  CHECK(dpsep::si_sdr(r, r) == dpsep::kSiSdrCap);

  // q orthogonal to r (after mean removal) with the same norm
  auto q = testutil::randn(4000, rng);
  const double mq = std::accumulate(q.begin(), q.end(), 0.0) / 4000.0;
  const double mr = std::accumulate(r.begin(), r.end(), 0.0) / 4000.0;
  Signal rc(r);
  for (double& v : rc) v -= mr;
  for (double& v : q) v -= mq;
  const double proj = testutil::dot(q, rc) / testutil::dot(rc, rc);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] -= proj * rc[i];
  q = scaled(q, testutil::norm2(rc) / testutil::norm2(q));

  Signal e(r);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += 0.1 * q[i];
  CHECK(dpsep::si_sdr(e, r) == doctest::Approx(20.0).epsilon(1e-10));
  CHECK(dpsep::si_sdr(q, r) == -dpsep::kSiSdrCap);
  CHECK(dpsep::si_sdr(Signal(4000, 0.0), r) == -dpsep::kSiSdrCap);

  // DC offsets are ignored
  Signal shifted(e);
  for (double& v : shifted) v += 5.0;
  CHECK(dpsep::si_sdr(shifted, r) == doctest::Approx(20.0).epsilon(1e-10));

  CHECK_THROWS_AS(dpsep::si_sdr(r, Signal(4000, 2.0)), std::invalid_argument);
  CHECK_THROWS_AS(dpsep::si_sdr(Signal(3, 1.0), Signal(4, 1.0)), std::invalid_argument);
}

TEST_CASE("si_sdr matches the projection definition and is scale invariant") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 16 + rng() % 3000;
    const auto r = testutil::randn(d, rng, testutil::log_uniform(rng, 1e-2, 10.0));
    Signal e(r);
    const double noise = testutil::log_uniform(rng, 1e-3, 10.0);
    const auto n = testutil::randn(d, rng, noise * testutil::norm2(r) / std::sqrt(double(d)));
    for (std::size_t i = 0; i < d; ++i) e[i] += n[i];
    const double base = dpsep::si_sdr(e, r);
    CHECK(std::abs(base - si_sdr_ref(e, r)) < 1e-9);
    for (double s : {0.1, 1.0, 10.0, 1e-3, 250.0}) CHECK(std::abs(dpsep::si_sdr(scaled(e, s), r) - base) < 1e-9);
  }
}

TEST_CASE("evaluate_run matches references by the best permutation") {
  std::mt19937_64 rng(6);
  const std::size_t d = 800;
  const auto r1 = testutil::randn(d, rng), r2 = testutil::randn(d, rng), nref = testutil::randn(d, rng);
  Signal y(d);
  for (std::size_t j = 0; j < d; ++j) y[j] = r1[j] + r2[j] + nref[j];

  SUBCASE("perfect estimates reach the cap") {
    const auto m = dpsep::evaluate_run({r1, r2}, nref, {r1, r2}, nref, y);
    CHECK(m.assignment == std::vector<std::size_t>{0, 1});
    CHECK(m.speech_si_sdr == std::vector<double>{dpsep::kSiSdrCap, dpsep::kSiSdrCap});
    CHECK(m.noise_si_sdr == dpsep::kSiSdrCap);
    CHECK(m.speech_si_sdri[0] == doctest::Approx(dpsep::kSiSdrCap - dpsep::si_sdr(y, r1)));
  }
  SUBCASE("swapped estimates are recovered") {
    const auto a = dpsep::evaluate_run({r1, r2}, nref, {r1, r2}, nref, y);
    const auto b = dpsep::evaluate_run({r2, r1}, nref, {r1, r2}, nref, y);
    CHECK(b.assignment == std::vector<std::size_t>{1, 0});
    CHECK(a.speech_si_sdr == b.speech_si_sdr);
    CHECK(a.speech_si_sdri == b.speech_si_sdri);
  }
  SUBCASE("two speakers: assignment equals the exhaustive argmax") {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Signal> est;
      for (int k = 0; k < 2; ++k) {
        Signal e(d);
        const double a = testutil::uniform(rng, 0.0, 1.0), b = testutil::uniform(rng, 0.0, 1.0);
        const auto n = testutil::randn(d, rng, testutil::uniform(rng, 0.1, 2.0));
        for (std::size_t j = 0; j < d; ++j) e[j] = a * r1[j] + b * r2[j] + n[j];
        est.push_back(e);
      }
      const double keep = si_sdr_ref(est[0], r1) + si_sdr_ref(est[1], r2);
      const double swap = si_sdr_ref(est[1], r1) + si_sdr_ref(est[0], r2);
      const std::vector<std::size_t> expected = keep >= swap ? std::vector<std::size_t>{0, 1}
                                                             : std::vector<std::size_t>{1, 0};
      const auto m = dpsep::evaluate_run(est, nref, {r1, r2}, nref, y);
      CHECK(m.assignment == expected);
      CHECK(m.mean_speech_si_sdr() == doctest::Approx(std::max(keep, swap) / 2.0).epsilon(1e-10));
    }
  }
  SUBCASE("order of supplied estimates does not change the metrics") {
    const auto r3 = testutil::randn(d, rng);
    std::vector<Signal> est;
    for (const auto* r : {&r1, &r2, &r3}) {
      Signal e(*r);
      const auto n = testutil::randn(d, rng, 0.7);
      for (std::size_t j = 0; j < d; ++j) e[j] += n[j];
      est.push_back(e);
    }
    const auto base = dpsep::evaluate_run(est, nref, {r1, r2, r3}, nref, y);
    std::vector<std::size_t> order{0, 1, 2};
    while (std::next_permutation(order.begin(), order.end())) {
      std::vector<Signal> shuffled;
      for (auto i : order) shuffled.push_back(est[i]);
      const auto m = dpsep::evaluate_run(shuffled, nref, {r1, r2, r3}, nref, y);
      CHECK(m.speech_si_sdr == base.speech_si_sdr);
      for (std::size_t r = 0; r < 3; ++r) CHECK(order[m.assignment[r]] == base.assignment[r]);
    }
  }
  SUBCASE("count mismatch") {
    CHECK_THROWS_AS(dpsep::evaluate_run({r1}, nref, {r1, r2}, nref, y), std::invalid_argument);
  }
}
