// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "imfp/arrays.hpp"

using namespace imfp;

namespace {

constexpr double kLambda = 0.005;

ArrayConfig upa(int n) { return ArrayConfig::half_wavelength(n, n, kLambda); }

/// Best normalized gain in dB over all beams toward (theta, phi).
double coverage_db(const Codebook& cb, double theta, double phi) {
  const CVector a = steering_vector(cb.array, theta, phi);
  double g = 0.0;
  for (const auto& w : cb.beams) g = std::max(g, beam_gain(w, a));
  return linear_to_db(g);
}

}  // namespace

TEST(SteeringVector, SingleElementIsOne) {
  const auto a = steering_vector(ArrayConfig::half_wavelength(1, 1, kLambda), 0.7, -1.3);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_NEAR(a[0].real(), 1.0, 1e-15);
  EXPECT_NEAR(a[0].imag(), 0.0, 1e-15);
}

TEST(SteeringVector, BroadsideIsUniform) {
  const auto cfg = ArrayConfig::half_wavelength(4, 3, kLambda);
  for (const auto& x : steering_vector(cfg, 0.0, 0.0)) {
    EXPECT_NEAR(x.real(), 1.0 / std::sqrt(12.0), 1e-15);
    EXPECT_NEAR(x.imag(), 0.0, 1e-15);
  }
}

TEST(SteeringVector, TwoElementEndfire) {
  const auto a = steering_vector(ArrayConfig::half_wavelength(2, 1, kLambda), kPi / 2.0, 0.0);
  ASSERT_EQ(a.size(), 2u);
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(a[0].real(), s, 1e-12);
  EXPECT_NEAR(a[1].real(), -s, 1e-12);
  EXPECT_NEAR(a[1].imag(), 0.0, 1e-12);
}

TEST(SteeringVector, YIndexIsOuter) {
  // phi = pi/2 steers along y only: entries within one y-row share a phase.
  const auto cfg = ArrayConfig::half_wavelength(3, 2, kLambda);
  const auto a = steering_vector(cfg, kPi / 2.0, kPi / 2.0);
  for (int n = 1; n < 3; ++n) EXPECT_NEAR(std::abs(a[n] - a[0]), 0.0, 1e-12);
  EXPECT_NEAR(std::arg(a[3] / a[0]), kPi, 1e-9);
}

TEST(SteeringVector, NormIsOneProperty) {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> n(1, 20);
  std::uniform_real_distribution<double> ang(-2.0 * kPi, 2.0 * kPi);
  for (int i = 0; i < 10000; ++i) {
    const auto cfg = ArrayConfig::half_wavelength(n(gen), n(gen), kLambda);
    EXPECT_NEAR(vector_norm(steering_vector(cfg, ang(gen), ang(gen))), 1.0, 1e-10);
  }
}

TEST(SteeringVector, MatchedBeamGain) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> th(0.0, kPi / 2.0), ph(-kPi, kPi);
  const auto rx = upa(8);
  const auto tx = upa(4);
  for (int i = 0; i < 200; ++i) {
    const auto ar = steering_vector(rx, th(gen), ph(gen));
    const auto at = steering_vector(tx, th(gen), ph(gen));
    EXPECT_NEAR(std::abs(inner(ar, ar)), 1.0, 1e-12);
    const double g = rx.size() * tx.size() * beam_gain(ar, ar) * beam_gain(at, at);
    EXPECT_NEAR(g, rx.size() * tx.size(), 1e-9);
  }
}

TEST(Beamwidth, UlaApproximation) {
  EXPECT_NEAR(ula_beamwidth(256), 0.110750, 1e-6);
  EXPECT_NEAR(ula_beamwidth(1024), 0.055375, 1e-6);
  EXPECT_NEAR(ula_beamwidth(1), 1.772, 1e-12);
  EXPECT_THROW(ula_beamwidth(0), Error);
}

TEST(Codebook, SingleElementHasOneBeam) {
  const auto cb = build_codebook(ArrayConfig::half_wavelength(1, 1, kLambda), FieldOfView::hemisphere());
  EXPECT_EQ(cb.size(), 1u);
}

TEST(Codebook, BeamCountsNearReference) {
  const std::vector<std::pair<int, double>> ref{{8, 87}, {16, 271}, {24, 641}, {32, 1047}};
  for (const auto& [n, count] : ref) {
    const auto cb = build_codebook(upa(n), FieldOfView::hemisphere());
    EXPECT_GE(cb.size(), 0.85 * count) << n << "x" << n;
    EXPECT_LE(cb.size(), 1.15 * count) << n << "x" << n;
  }
}

TEST(Codebook, EmptyFieldOfViewRejected) {
  EXPECT_THROW(build_codebook(upa(4), {0.5, 0.4, -1.0, 1.0}), Error);
  EXPECT_THROW(build_codebook(upa(4), {0.5, 0.5, 1.0, 1.0}), Error);
}

TEST(Codebook, BeamsAreUnitNormAndRowMajor) {
  const auto cb = build_codebook(upa(16), FieldOfView::hemisphere());
  for (std::size_t b = 0; b < cb.size(); ++b) {
    EXPECT_NEAR(vector_norm(cb.beams[b]), 1.0, 1e-12);
    if (b > 0) {
      EXPECT_GE(cb.row_of_beam[b], cb.row_of_beam[b - 1]);
      if (cb.row_of_beam[b] == cb.row_of_beam[b - 1]) EXPECT_GT(cb.directions[b].phi, cb.directions[b - 1].phi);
      else EXPECT_GT(cb.directions[b].theta, cb.directions[b - 1].theta);
    }
  }
}

TEST(Codebook, AdjacentMainlobesOneBeamwidthApart) {
  const auto cb = build_codebook(upa(16), FieldOfView::hemisphere());
  for (std::size_t b = 1; b < cb.size(); ++b) {
    const auto& bw = cb.half_power_beamwidths[b];
    if (cb.row_of_beam[b] == cb.row_of_beam[b - 1]) {
      const double step = cb.directions[b].phi - cb.directions[b - 1].phi;
      EXPECT_LE(step, bw.azimuth + 1e-9);
      EXPECT_GE(step, 0.8 * bw.azimuth);
    } else {
      const double step = cb.directions[b].theta - cb.directions[b - 1].theta;
      EXPECT_LE(step, cb.half_power_beamwidths[b - 1].elevation + 1e-9);
    }
  }
}

TEST(Codebook, RowCutsStayWithinThreeAndHalfDb) {
  for (int n : {8, 16}) {
    const auto cb = build_codebook(upa(n), FieldOfView::hemisphere());
    std::set<double> rows;
    for (const auto& d : cb.directions) rows.insert(d.theta);
    double worst = 0.0;
    for (double theta : rows) {
      for (int i = 0; i <= 1440; ++i) worst = std::min(worst, coverage_db(cb, theta, -kPi + i * kPi / 720.0));
    }
    EXPECT_GE(worst, -3.5) << n << "x" << n;
  }
}

// Dense sweep over the whole field of view. Rows tiled at a full half-power
// beamwidth leave gaps between rows deeper than 3.5 dB, so this fails for
// the reference beam counts; see README "Known limitations".
TEST(Codebook, TwoDimensionalCoverageWithinThreeAndHalfDb) {
  const auto cb = build_codebook(upa(16), FieldOfView::hemisphere());
  double worst = 0.0;
  for (int i = 0; i <= 90; ++i) {
    for (int j = 0; j < 180; ++j) {
      worst = std::min(worst, coverage_db(cb, i * kPi / 180.0, -kPi + j * kPi / 90.0));
    }
  }
  EXPECT_GE(worst, -3.5);
}

TEST(Codebook, BestBeamMatchesOwnDirection) {
  const auto cb = build_codebook(upa(8), FieldOfView::hemisphere());
  for (std::size_t b = 0; b < cb.size(); ++b) EXPECT_EQ(cb.best_beam(cb.directions[b]), b);
}

TEST(Codebook, JsonRoundTripKeepsHash) {
  const auto cb = build_codebook(upa(4), FieldOfView::hemisphere());
  const auto back = codebook_from_json(to_json(cb));
  EXPECT_EQ(back.hash, cb.hash);
  ASSERT_EQ(back.size(), cb.size());
  for (std::size_t b = 0; b < cb.size(); ++b) {
    for (std::size_t e = 0; e < cb.beams[b].size(); ++e) EXPECT_EQ(back.beams[b][e], cb.beams[b][e]);
  }
  auto j = to_json(cb);
  j["beams"][0]["theta"] = 0.123;
  EXPECT_THROW(codebook_from_json(j), Error);
}

TEST(Codebook, HashDistinguishesArrays) {
  const auto a = build_codebook(upa(4), FieldOfView::hemisphere());
  const auto b = build_codebook(upa(8), FieldOfView::hemisphere());
  EXPECT_NE(a.hash, b.hash);
  EXPECT_NE(pair_space_hash(a, b), pair_space_hash(b, a));
}
