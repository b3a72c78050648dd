// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "imfp/linksim.hpp"

using namespace imfp;

namespace {

constexpr double kLambda = kSpeedOfLight / 60e9;

Codebook small_codebook(int n) {
  return build_codebook(ArrayConfig::half_wavelength(n, n, kLambda), FieldOfView::hemisphere());
}

ChannelInstance sample_channel(std::uint64_t seed) {
  Rng rng(seed);
  auto s = generate_scene({}, {}, 30.0, 2.5, rng);
  return trace_rays(s, 2);
}

}  // namespace

TEST(Pulse, RaisedCosineZerosAndPeak) {
  PulseConfig p;
  const double T = p.symbol_period();
  EXPECT_DOUBLE_EQ(raised_cosine(0.0, p), 1.0);
  for (int k = 1; k < 20; ++k) {
    EXPECT_NEAR(raised_cosine(k * T, p), 0.0, 1e-12);
    EXPECT_NEAR(raised_cosine(-k * T, p), 0.0, 1e-12);
  }
  EXPECT_NEAR(raised_cosine(0.5 * T, p), sinc(0.5) * std::cos(kPi * 0.05) / (1.0 - 0.01), 1e-14);
}

TEST(Pulse, SingularPointTakesLimit) {
  PulseConfig p;
  p.rolloff = 0.3;
  const double T = p.symbol_period();
  const double ts = T / (2.0 * p.rolloff);
  const double limit = (kPi / 4.0) * sinc(1.0 / (2.0 * p.rolloff));
  EXPECT_DOUBLE_EQ(raised_cosine(ts, p), limit);
  EXPECT_DOUBLE_EQ(raised_cosine(-ts, p), limit);
  EXPECT_NEAR(raised_cosine(ts * (1.0 + 1e-6), p), limit, 1e-6);
}

TEST(Pulse, ZeroRolloffIsSinc) {
  PulseConfig p;
  p.rolloff = 0.0;
  EXPECT_NEAR(raised_cosine(0.37 * p.symbol_period(), p), sinc(0.37), 1e-15);
}

TEST(Pulse, WindowTruncates) {
  PulseConfig p;
  const double T = p.symbol_period();
  EXPECT_EQ(windowed_pulse(8.5 * T, p), 0.0);
  EXPECT_EQ(windowed_pulse(7.5 * T, p), raised_cosine(7.5 * T, p));
}

TEST(Budget, NoiseAndEirp) {
  EXPECT_NEAR(noise_power_dbm(1760e6), -174.0 + 10.0 * std::log10(1760e6), 1e-12);
  EXPECT_NEAR(noise_power_dbm(1760e6), -81.5448, 1e-4);
  EXPECT_NEAR(tx_power_for_eirp(24.0, 256), 24.0 - 10.0 * std::log10(256.0), 1e-12);
  EXPECT_THROW(noise_power_dbm(0.0), Error);
}

TEST(PairIndex, RowMajorBijection) {
  const std::size_t nr = 7, nt = 5;
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t t = 0; t < nt; ++t) {
      const auto p = BeamPairIndex::from_beams(r, t, nr, nt);
      EXPECT_EQ(p.pair_id, r * nt + t);
      const auto q = BeamPairIndex::from_id(p.pair_id, nr, nt);
      EXPECT_EQ(q.rx_beam, r);
      EXPECT_EQ(q.tx_beam, t);
    }
  }
  EXPECT_THROW(BeamPairIndex::from_id(nr * nt, nr, nt), Error);
}

TEST(EffectiveChannel, MatchedSingleRay) {
  const auto W = small_codebook(4);
  const auto F = small_codebook(4);
  const std::size_t r = 3, t = 5;
  ChannelInstance ch;
  ch.rays.push_back({cplx(2e-4, -1e-4), 1e-7, W.directions[r], F.directions[t], 0});
  const auto eff = effective_channel(ch, BeamPairIndex::from_beams(r, t, W.size(), F.size()), W, F, PulseConfig{});
  const double expected = std::norm(ch.rays[0].gain) * 16.0 * 16.0;
  EXPECT_NEAR(std::norm(eff.taps[0]), expected, 1e-9 * expected);
  EXPECT_NEAR(eff.power(), expected, 1e-9 * expected);
}

TEST(EffectiveChannel, HalfSampleOffset) {
  const auto W = small_codebook(2);
  const auto F = small_codebook(2);
  PulseConfig p;
  const double T = p.symbol_period();
  ChannelInstance ch;
  ch.rays.push_back({cplx(1.0, 0.0), 0.0, W.directions[0], F.directions[0], 0});
  ch.rays.push_back({cplx(0.0, 0.5), 0.5 * T, W.directions[0], F.directions[0], 1});
  const auto eff = effective_channel(ch, BeamPairIndex::from_beams(0, 0, W.size(), F.size()), W, F, p);
  const double scale = 4.0;  // sqrt(N_r N_t) with matched beams
  for (int n = 0; n < 12; ++n) {
    const cplx expected = (n == 0 ? cplx(scale, 0.0) : cplx(0.0, 0.0)) +
                          windowed_pulse((n - 0.5) * T, p) * cplx(0.0, 0.5) * scale;
    EXPECT_NEAR(std::abs(eff.taps[static_cast<std::size_t>(n)] - expected), 0.0, 1e-12) << n;
  }
}

TEST(EffectiveChannel, LinearInRays) {
  const auto W = small_codebook(4);
  const auto F = small_codebook(4);
  const auto ch = sample_channel(21);
  ASSERT_GE(ch.rays.size(), 3u);
  // Split the rays; the earliest ray stays in both halves (zeroed in one) so
  // the delay reference is shared.
  std::size_t first = 0;
  for (std::size_t l = 1; l < ch.rays.size(); ++l) {
    if (ch.rays[l].delay < ch.rays[first].delay) first = l;
  }
  ChannelInstance a, b;
  for (std::size_t l = 0; l < ch.rays.size(); ++l) {
    Ray ray = ch.rays[l];
    if (l == first) {
      a.rays.push_back(ray);
      ray.gain = 0.0;
      b.rays.push_back(ray);
    } else {
      (l % 2 ? a : b).rays.push_back(ray);
    }
  }
  const auto pair = BeamPairIndex::from_beams(2, 7, W.size(), F.size());
  const auto full = effective_channel(ch, pair, W, F, PulseConfig{});
  const auto ea = effective_channel(a, pair, W, F, PulseConfig{});
  const auto eb = effective_channel(b, pair, W, F, PulseConfig{});
  for (std::size_t n = 0; n < full.taps.size(); ++n) {
    EXPECT_NEAR(std::abs(full.taps[n] - ea.taps[n] - eb.taps[n]), 0.0, 1e-18);
  }
}

TEST(EffectiveChannel, EmptyChannelIsZero) {
  const auto W = small_codebook(2);
  const auto eff = effective_channel(ChannelInstance{}, BeamPairIndex::from_beams(0, 0, W.size(), W.size()), W, W,
                                     PulseConfig{});
  EXPECT_EQ(eff.power(), 0.0);
  EXPECT_THROW(effective_channel(ChannelInstance{}, {0, W.size(), 0}, W, W, PulseConfig{}), Error);
}

TEST(Measurement, NoiselessIsExact) {
  EffectiveChannel eff{{cplx(1.0, 2.0), cplx(-0.5, 0.0)}, {}};
  Rng rng(1);
  EXPECT_DOUBLE_EQ(measure_pair(eff, TrainingConfig{}, rng), 5.25);
}

TEST(Measurement, NoiseMeanAndVariance) {
  // ||h + e||^2 with L taps of CN(0, s2) noise: mean gamma + L s2,
  // variance L s2^2 + 2 gamma s2.
  PulseConfig p;
  p.channel_length = 16;
  TrainingConfig trn{16, 4.0, 0.0};
  const double s2 = trn.tap_error_variance();
  ASSERT_DOUBLE_EQ(s2, 0.25);
  EffectiveChannel eff{CVector(16), {}};
  eff.taps[0] = {1.0, 1.0};
  const double gamma = eff.power();
  const int n = 100000;
  double s = 0.0, ss = 0.0, d = 0.0, dd = 0.0;
  Rng rng(2), rng2(3);
  for (int i = 0; i < n; ++i) {
    const double x = measure_pair(eff, trn, rng);
    s += x;
    ss += x * x;
    const double y = BeamspaceChannel::noisy_draw(gamma, 16, s2, rng2);
    d += y;
    dd += y * y;
  }
  const double mean = gamma + 16 * s2;
  const double var = 16 * s2 * s2 + 2 * gamma * s2;
  EXPECT_NEAR(s / n, mean, 0.01 * mean);
  EXPECT_NEAR(ss / n - (s / n) * (s / n), var, 0.03 * var);
  EXPECT_NEAR(d / n, mean, 0.01 * mean);
  EXPECT_NEAR(dd / n - (d / n) * (d / n), var, 0.03 * var);
}

TEST(Measurement, ChuLeastSquaresErrorVariance) {
  const std::size_t K = 64, L = 8;
  const double sv2 = 0.5;
  CVector s(K);
  for (std::size_t k = 0; k < K; ++k) s[k] = std::polar(1.0, kPi * static_cast<double>(k * k) / K);
  CVector h(L);
  Rng rng(4);
  for (auto& x : h) x = complex_normal(rng, 1.0);
  std::vector<double> err(L, 0.0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    CVector y(K);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t n = 0; n < L; ++n) y[k] += h[n] * s[(k + K - n) % K];
      y[k] += complex_normal(rng, sv2);
    }
    const auto est = least_squares_taps(y, s, L);
    for (std::size_t n = 0; n < L; ++n) err[n] += std::norm(est[n] - h[n]);
  }
  for (std::size_t n = 0; n < L; ++n) EXPECT_NEAR(err[n] / draws, sv2 / K, 0.05 * sv2 / K) << n;
}

TEST(Measurement, ChuNoiselessRecoversTaps) {
  const std::size_t K = 32;
  CVector s(K);
  for (std::size_t k = 0; k < K; ++k) s[k] = std::polar(1.0, kPi * static_cast<double>(k * k) / K);
  const CVector h{{1.0, 0.5}, {0.0, -0.25}, {0.125, 0.0}};
  CVector y(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t n = 0; n < h.size(); ++n) y[k] += h[n] * s[(k + K - n) % K];
  }
  const auto est = least_squares_taps(y, s, 5);
  for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(std::abs(est[n] - (n < 3 ? h[n] : cplx{})), 0.0, 1e-12);
  EXPECT_THROW(least_squares_taps(y, s, K + 1), Error);
}

TEST(Sweep, FastMatchesReferenceNoiseless) {
  const auto W = small_codebook(4);
  const auto F = small_codebook(4);
  const PulseConfig pulse;
  TrainingConfig trn;
  trn.tx_power_dbm = 3.0;
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    const auto ch = sample_channel(seed);
    const auto ref = exhaustive_sweep(ch, W, F, pulse, trn, 5);
    const auto fast = fast_sweep(BeamspaceChannel(ch, W, F, pulse), trn, 5);
    ASSERT_EQ(ref.size(), fast.size());
    EXPECT_EQ(ref.pair_space_hash, fast.pair_space_hash);
    const double peak = *std::max_element(ref.power_mw.begin(), ref.power_mw.end());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fast.power_mw[i], ref.power_mw[i], 1e-9 * peak);
  }
}

TEST(Sweep, FastMatchesReferenceInDistribution) {
  const auto W = small_codebook(2);
  const PulseConfig pulse;
  TrainingConfig trn{512, 1e-12, 0.0};
  const auto ch = sample_channel(41);
  const BeamspaceChannel bs(ch, W, W, pulse);
  double ref = 0.0, fast = 0.0;
  const int reps = 400;
  for (int k = 0; k < reps; ++k) {
    const auto a = exhaustive_sweep(ch, W, W, pulse, trn, 100 + k);
    const auto b = fast_sweep(bs, trn, 100 + k);
    ref += std::accumulate(a.power_mw.begin(), a.power_mw.end(), 0.0);
    fast += std::accumulate(b.power_mw.begin(), b.power_mw.end(), 0.0);
  }
  EXPECT_NEAR(fast / ref, 1.0, 0.02);
}

TEST(Sweep, SeedDeterminism) {
  const auto W = small_codebook(2);
  TrainingConfig trn{512, 1e-12, 0.0};
  const auto bs = BeamspaceChannel(sample_channel(51), W, W, PulseConfig{});
  EXPECT_EQ(fast_sweep(bs, trn, 9).power_mw, fast_sweep(bs, trn, 9).power_mw);
  EXPECT_NE(fast_sweep(bs, trn, 9).power_mw, fast_sweep(bs, trn, 10).power_mw);
}

TEST(Sweep, CsvRoundTrip) {
  const auto W = small_codebook(2);
  const auto sweep = fast_sweep(BeamspaceChannel(sample_channel(61), W, W, PulseConfig{}), TrainingConfig{}, 0);
  std::stringstream ss;
  write_sweep_csv(ss, sweep, {"config_hash=x"});
  const auto rows = read_sweep_csv(ss, sweep.n_tx);
  ASSERT_EQ(rows.size(), sweep.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].pair_id, i);
    EXPECT_NEAR(rows[i].power_mw, sweep.power_mw[i], 1e-12 * sweep.power_mw[i]);
  }
  std::stringstream bad("pair_id,rx_beam,tx_beam,power_dbm\n5,0,1,-60\n");
  EXPECT_THROW(read_sweep_csv(bad, sweep.n_tx), Error);
  std::stringstream noheader("1,0,1,-60\n");
  EXPECT_THROW(read_sweep_csv(noheader), Error);
}

TEST(Training, Validation) {
  PulseConfig p;
  TrainingConfig trn;
  trn.seq_length = 100;
  EXPECT_THROW(trn.validate(p), Error);
  p.rolloff = 1.5;
  EXPECT_THROW(p.validate(), Error);
}
