// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "imfp/selection.hpp"

using namespace imfp;

namespace {

const LocationBin kBin{0, 30.0, 2.5};

double mw(double dbm) { return db_to_linear(dbm); }

FingerprintDbA db_from_rows(const std::vector<std::vector<double>>& rows, std::size_t m_kept = 1000) {
  FingerprintDbA db;
  db.m_kept = m_kept;
  for (const auto& r : rows) ingest_sweep_a(db, kBin, SweepTable{1, r.size(), r, "h"});
  return db;
}

FingerprintDbA toy_db_a() {
  FingerprintDbA db;
  db.m_kept = 3;
  db.codebook_hash = "h";
  db.num_pairs = 400;
  auto& b = db.bins[0];
  b.bin = kBin;
  b.observations.push_back({{{5, mw(-64.5)}, {159, mw(-69.2)}, {346, mw(-95.8)}}, 1});
  b.observations.push_back({{{159, mw(-70.4)}, {263, mw(-72.6)}, {354, mw(-97.1)}}, 2});
  b.observations.push_back({{{5, mw(-66.4)}, {258, mw(-68.1)}, {2, mw(-82.6)}}, 3});
  return db;
}

/// Dense power matrix [n][pair] with unrecorded entries zero.
std::vector<std::vector<double>> dense(const FingerprintDbA& db) {
  const auto& bin = db.bin(0);
  std::vector<std::vector<double>> g(bin.observations.size(), std::vector<double>(db.num_pairs, 0.0));
  for (std::size_t n = 0; n < g.size(); ++n) {
    for (const auto& e : bin.observations[n].entries) g[n][e.pair_id] = e.power_mw;
  }
  return g;
}

/// Independence score by direct nested loops over observations and pairs.
double independence_oracle(const FingerprintDbA& db, std::size_t i) {
  const auto g = dense(db);
  const std::size_t N = g.size();
  std::set<std::size_t> recorded;
  for (const auto& o : db.bin(0).observations) {
    for (const auto& e : o.entries) recorded.insert(e.pair_id);
  }
  double s = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double prod = 1.0;
    for (std::size_t k : recorded) {
      if (k == i) continue;
      double f = 0.0;
      for (std::size_t m = 0; m < N; ++m) f += g[n][i] > g[m][k] ? 1.0 : 0.0;
      prod *= f / static_cast<double>(N);
    }
    s += prod;
  }
  return s / static_cast<double>(N);
}

}  // namespace

TEST(AvgPow, TypeBExample) {
  FingerprintDbB db;
  ingest_partial_b(db, kBin, {{1, mw(-92.3)}, {2, mw(-73.5)}}, "h", 10);
  const auto rc = avgpow_select(db, 0, 1);
  ASSERT_EQ(rc.pairs.size(), 1u);
  EXPECT_EQ(rc.pairs[0], 2u);
  EXPECT_EQ(rc.tiers[0], Tier::correlated);
}

TEST(AvgPow, AllStoredSortedThenTiesAndPadding) {
  FingerprintDbB db;
  ingest_partial_b(db, kBin, {{7, 1.0}, {3, 2.0}, {4, 1.0}}, "h", 10);
  const auto all = avgpow_select(db, 0, 3);
  EXPECT_EQ(all.pairs, (std::vector<std::size_t>{3, 4, 7}));
  const auto padded = avgpow_select(db, 0, 6);
  EXPECT_EQ(padded.pairs, (std::vector<std::size_t>{3, 4, 7, 0, 1, 2}));
  EXPECT_EQ(padded.tiers[3], Tier::padding);
  EXPECT_THROW(avgpow_select(db, 0, 0), Error);
  EXPECT_THROW(avgpow_select(db, 0, 11), Error);
  EXPECT_THROW(avgpow_select(db, 1, 1), Error);
}

TEST(AvgPow, NestedPrefixes) {
  Rng rng(2);
  FingerprintDbB db;
  for (int k = 0; k < 300; ++k) {
    ingest_partial_b(db, kBin, {{static_cast<std::size_t>(k % 40), std::floor(uniform01(rng) * 5.0)}}, "h", 60);
  }
  auto prev = avgpow_select(db, 0, 1).pairs;
  for (std::size_t n = 2; n <= 60; ++n) {
    const auto cur = avgpow_select(db, 0, n).pairs;
    ASSERT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin())) << n;
    EXPECT_EQ(std::set<std::size_t>(cur.begin(), cur.end()).size(), n);
    prev = cur;
  }
}

TEST(POpt, ToyTableCounts) {
  const auto p = p_opt_empirical(toy_db_a(), 0);
  EXPECT_EQ(p.size(), 2u);
  EXPECT_DOUBLE_EQ(p.at(5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.at(159), 1.0 / 3.0);
  const auto rc = minmisprob_select(toy_db_a(), 0, 2);
  EXPECT_EQ(rc.pairs, (std::vector<std::size_t>{5, 159}));
}

TEST(POpt, SumsToOneAndSingleObservation) {
  Rng rng(3);
  std::vector<std::vector<double>> rows;
  for (int n = 0; n < 30; ++n) {
    std::vector<double> r(20);
    for (auto& x : r) x = uniform01(rng);
    rows.push_back(r);
  }
  double total = 0.0;
  for (const auto& [id, p] : p_opt_empirical(db_from_rows(rows), 0)) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);

  const auto one = p_opt_empirical(db_from_rows({{0.1, 0.9, 0.2}}), 0);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one.at(1), 1.0);
}

TEST(Independence, SimpleCases) {
  // Pair 0 always beats every sample of pair 1.
  const auto a = p_opt_independent(db_from_rows({{5.0, 1.0}, {6.0, 2.0}}), 0);
  EXPECT_DOUBLE_EQ(a.at(0), 1.0);
  const auto b = p_opt_independent(db_from_rows({{1.0, 3.0}}), 0);
  EXPECT_DOUBLE_EQ(b.at(1), 1.0);
  EXPECT_DOUBLE_EQ(b.at(0), 0.0);
}

TEST(Independence, MatchesNestedLoopOracle) {
  const auto hand = db_from_rows({{3.0, 2.0, 1.0}, {1.5, 2.5, 4.0}});
  for (const auto& [i, s] : p_opt_independent(hand, 0)) EXPECT_NEAR(s, independence_oracle(hand, i), 1e-12) << i;

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> rows;
    const int n_obs = 2 + trial % 7;
    for (int n = 0; n < n_obs; ++n) {
      std::vector<double> r(12);
      for (auto& x : r) x = std::floor(uniform01(rng) * 6.0) + 1.0;  // ties included
      rows.push_back(r);
    }
    const auto db = db_from_rows(rows, 4);
    for (const auto& [i, s] : p_opt_independent(db, 0)) {
      EXPECT_NEAR(s, independence_oracle(db, i), 1e-12) << trial << " pair " << i;
    }
  }
}

TEST(MinMisProb, ModalPairFirst) {
  const auto db = db_from_rows({{1, 5, 2}, {1, 5, 2}, {6, 5, 2}});
  EXPECT_EQ(minmisprob_select(db, 0, 1).pairs, (std::vector<std::size_t>{1}));
  const auto rc = minmisprob_select(db, 0, 3);
  EXPECT_EQ(rc.tiers[0], Tier::correlated);
  EXPECT_EQ(rc.tiers[1], Tier::correlated);
  EXPECT_EQ(rc.tiers[2], Tier::independence);
}

TEST(MinMisProb, MatchesBruteForceSubsets) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> rows;
    for (int n = 0; n < 6; ++n) {
      std::vector<double> r(8);
      for (auto& x : r) x = uniform01(rng);
      rows.push_back(r);
    }
    const auto db = db_from_rows(rows);
    const auto& bin = db.bin(0);
    double best = 1.0;
    for (std::size_t a = 0; a < 8; ++a) {
      for (std::size_t b = a + 1; b < 8; ++b) {
        for (std::size_t c = b + 1; c < 8; ++c) best = std::min(best, empirical_misalignment(bin, {a, b, c}));
      }
    }
    const auto rc = minmisprob_select(db, 0, 3);
    const std::set<std::size_t> chosen(rc.pairs.begin(), rc.pairs.end());
    ASSERT_EQ(chosen.size(), 3u);
    EXPECT_DOUBLE_EQ(empirical_misalignment(bin, chosen), best);
  }
}

TEST(MinMisProb, ModularityIdentity) {
  Rng rng(6);
  std::vector<std::vector<double>> rows;
  for (int n = 0; n < 40; ++n) {
    std::vector<double> r(15);
    for (auto& x : r) x = uniform01(rng);
    rows.push_back(r);
  }
  const auto db = db_from_rows(rows);
  const auto p = p_opt_empirical(db, 0);
  const auto rc = minmisprob_select(db, 0, 15);
  std::set<std::size_t> s;
  double covered = 0.0;
  double prev = 1.0;
  for (auto id : rc.pairs) {
    s.insert(id);
    covered += p.count(id) ? p.at(id) : 0.0;
    const double miss = empirical_misalignment(db.bin(0), s);
    EXPECT_NEAR(miss, 1.0 - covered, 1e-12);
    EXPECT_LE(miss, prev);
    prev = miss;
  }
}

TEST(Greedy, TopSetPrefixAndUniform) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 30;
    std::vector<double> p(n);
    for (auto& x : p) x = std::floor(uniform01(rng) * 4.0);
    auto prev = greedy_select(p, 1);
    for (std::size_t k = 2; k <= n; ++k) {
      const auto cur = greedy_select(p, k);
      ASSERT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
      prev = cur;
    }
    // Set equals the top-k by (value desc, index asc).
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
    const std::size_t k = 1 + trial % n;
    const auto g = greedy_select(p, k);
    EXPECT_EQ(std::set<std::size_t>(g.begin(), g.end()), std::set<std::size_t>(order.begin(), order.begin() + k));
  }
  EXPECT_EQ(greedy_select(std::vector<double>(6, 0.25), 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Greedy, OptimalForSmallSpaces) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + trial % 8;
    std::vector<double> p(n);
    double total = 0.0;
    for (auto& x : p) total += (x = uniform01(rng));
    for (auto& x : p) x /= total;
    for (std::size_t k = 1; k <= 4; ++k) {
      double best = 0.0;
      for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (mask >> i) & 1u ? p[i] : 0.0;
        best = std::max(best, s);
      }
      double got = 0.0;
      for (auto i : greedy_select(p, k)) got += p[i];
      EXPECT_NEAR(got, best, 1e-12);
    }
  }
}

TEST(PositionOnly, MatchesSweepForSingleRay) {
  const double lambda = kSpeedOfLight / 60e9;
  const auto W = build_codebook(ArrayConfig::half_wavelength(4, 4, lambda), FieldOfView::hemisphere());
  const auto F = build_codebook(ArrayConfig::half_wavelength(4, 4, lambda), FieldOfView::hemisphere());
  Rng rng(9);
  for (int k = 0; k < 20; ++k) {
    Scene s;
    s.rsu_pos = Vec3{0.0, -6.0, 7.0};
    s.cv_pos = Vec3{10.0 + 40.0 * uniform01(rng), 3.5 * uniform01(rng) - 1.75, 1.5};
    const auto ch = trace_rays(s, 2);
    ASSERT_EQ(ch.rays.size(), 1u);
    const auto g = BeamspaceChannel(ch, W, F, PulseConfig{}).gains();
    const auto argmax = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
    EXPECT_EQ(position_only_select(s, W, F).pair_id, argmax);
  }
}

TEST(PositionOnly, IgnoresBlockage) {
  const double lambda = kSpeedOfLight / 60e9;
  const auto W = build_codebook(ArrayConfig::half_wavelength(4, 4, lambda), FieldOfView::hemisphere());
  Scene s;
  s.rsu_pos = Vec3{0.0, -6.0, 7.0};
  s.cv_pos = Vec3{30.0, 1.75, 1.5};
  const auto open = position_only_select(s, W, W);
  s.vehicles.push_back({{{10.0, -3.0, 0.0}, {22.0, 0.5, 3.8}}, VehicleType::truck});
  EXPECT_TRUE(trace_rays(s, 0).los_blocked);
  EXPECT_EQ(position_only_select(s, W, W).pair_id, open.pair_id);
  EXPECT_THROW(position_only_select(Scene{}, W, W), Error);
}
