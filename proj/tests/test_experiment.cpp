// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "imfp/experiment.hpp"

using namespace imfp;

namespace {

ExperimentConfig small_config(std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"arrays.rsu.n_x=4", "arrays.rsu.n_y=4", "arrays.cv.n_x=4", "arrays.cv.n_y=4",
                             "instances_per_bin=60", "evaluation.folds=3", "evaluation.n_b_max=12"};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_config(std::nullopt, o);
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = load_config(std::nullopt);
  EXPECT_EQ(c.rsu_array.size(), 256);
  EXPECT_EQ(c.traffic.kappa, 6);
  EXPECT_DOUBLE_EQ(c.traffic.mu_zeta, 0.209);
  EXPECT_EQ(c.m_kept, 100u);
  EXPECT_EQ(c.folds, 10u);
  EXPECT_EQ(c.instances_per_bin, 500u);
  EXPECT_EQ(c.schedules.size(), 3u);
  EXPECT_NEAR(c.noise_power_dbm_value(), noise_power_dbm(1.76e9), 1e-9);
  EXPECT_NEAR(c.mobility.alpha, kPi / 3.0, 1e-15);
}

TEST(Config, UnknownFieldNamesPath) {
  try {
    load_config(nlohmann::json{{"traffic", {{"kapa", 3}}}});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("traffic.kapa"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config(std::nullopt, {"traffic.mu_zeta=-1"}), Error);
  EXPECT_THROW(load_config(std::nullopt, {"nope=1"}), Error);
  EXPECT_THROW(load_config(std::nullopt, {"novalue"}), Error);
}

TEST(Config, OverridesAndHash) {
  const auto a = load_config(std::nullopt);
  const auto b = load_config(std::nullopt, {"traffic.mu_zeta=0.0536", "bins.0.center=40"});
  EXPECT_DOUBLE_EQ(b.traffic.mu_zeta, 0.0536);
  EXPECT_DOUBLE_EQ(b.bins.at(0).center, 40.0);
  EXPECT_NE(a.hash(), b.hash());
  const auto again = load_config(b.doc);
  EXPECT_EQ(again.hash(), b.hash());
  EXPECT_EQ(load_config(std::nullopt).hash(), a.hash());
}

TEST(Channels, DeterministicAndSeedSensitive) {
  const auto c = small_config();
  const auto a = generate_channels(c, c.traffic, c.bins[0], 10, 1);
  const auto b = generate_channels(c, c.traffic, c.bins[0], 10, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_json(a[i]).dump(), to_json(b[i]).dump());
  const auto d = generate_channels(load_config(std::nullopt, {"seed=2"}), c.traffic, c.bins[0], 10);
  EXPECT_NE(to_json(a[0]).dump(), to_json(d[0]).dump());
}

TEST(Evaluate, NestedBudgetsAreMonotone) {
  const auto c = small_config();
  const auto w = make_world(c);
  const auto data = generate_channels(c, c.traffic, c.bins[0], c.instances_per_bin);
  const auto ev = evaluate_cv(c, w, c.bins[0], data, {{}, {{true, 0.0}}, {"avgpow", "minmisprob"}});
  for (std::size_t m = 0; m < 2; ++m) {
    double prev = 1.0;
    for (std::size_t b = 0; b < ev.n_b.size(); ++b) {
      const double p = estimate_ppl(ev.losses(0, m, b), 1.0);
      EXPECT_LE(p, prev);
      EXPECT_GE(p, estimate_ppl(ev.losses(0, m, b), db_to_linear(3.0)));
      prev = p;
    }
  }
}

TEST(Evaluate, FullBudgetAchievesPerfectRate) {
  const auto c = small_config({"evaluation.include_full_budget=true", "evaluation.n_b_max=2"});
  const auto w = make_world(c);
  const auto data = generate_channels(c, c.traffic, c.bins[0], 30);
  const auto ev = evaluate_cv(c, w, c.bins[0], data, {{}, {{true, 0.0}}, {"avgpow", "minmisprob"}});
  const auto full = ev.budget_index(w.num_pairs());
  for (std::size_t m = 0; m < 2; ++m) {
    for (double xi : ev.losses(0, m, full)) EXPECT_EQ(xi, 1.0);
  }
}

TEST(Evaluate, NoiselessNoWorseThanNoisy) {
  // Low EIRP on a small array so that noise flips some winners.
  std::vector<double> diff;
  for (int rep = 0; rep < 20; ++rep) {
    const auto c = small_config({fmt::format("seed={}", 100 + rep), "instances_per_bin=30"});
    const auto w = make_world(c);
    const auto data = generate_channels(c, c.traffic, c.bins[0], c.instances_per_bin);
    const auto ev = evaluate_cv(c, w, c.bins[0], data, {{8}, {{true, 0.0}, {false, -10.0}}, {"avgpow"}});
    diff.push_back(estimate_ppl(ev.losses(1, 0, 0), 1.0) - estimate_ppl(ev.losses(0, 0, 0), 1.0));
  }
  const auto ms = mean_se(diff);
  EXPECT_GE(ms.mean + 2.0 * ms.se, 0.0) << ms.mean << " +- " << ms.se;
}

TEST(Overhead, DefaultTableRow) {
  const auto c = load_config(std::nullopt);
  const auto rows = overhead_table(c);
  const auto it = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.n_a == 256 && r.speed == 20.0; });
  ASSERT_NE(it, rows.end());
  EXPECT_NEAR(it->t_11ad * 1e6, 2035.2, 1e-9);
  EXPECT_EQ(it->n_fp, 30u);
  EXPECT_NEAR(it->t_fp * 1e6, 150.0, 1e-9);
  EXPECT_NEAR(it->t_b * 1e3, 38.36, 0.01);
  EXPECT_EQ(scaled_n_fp(c, 1024), 120u);
  EXPECT_EQ(scaled_n_fp(c, 64), 8u);
}

TEST(Online, RunsAreReproducible) {
  const auto c = small_config({"online.n_b=8", "online.keep=20", "online.n_init=2",
                               "online.schedules.1.n_exploit=4", "online.schedules.2.n_exploit=8"});
  const auto w = make_world(c);
  const auto pool = generate_channels(c, c.traffic, c.bins[0], 25);
  const auto a = run_online(c, w, c.bins[0], pool, 3, 1);
  const auto b = run_online(c, w, c.bins[0], pool, 3, 2);
  EXPECT_EQ(a.horizon, 23u);
  EXPECT_EQ(a.chosen, b.chosen);
  for (std::size_t s = 0; s < a.loss_db.size(); ++s) {
    for (const auto& run : a.loss_db[s]) {
      for (double x : run) EXPECT_GE(x, -1e-9);
    }
  }
}
