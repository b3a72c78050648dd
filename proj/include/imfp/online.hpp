// SPDX-License-Identifier: Apache-2.0
//
// Online Type B collection: each vehicle measures n_b pairs, some chosen by
// AvgPow on the current database (exploit) and the rest drawn at random from
// the database's other known pairs (explore), and every measurement updates
// the database. The exploration share decays linearly to a floor.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "imfp/fingerprints.hpp"
#include "imfp/selection.hpp"

namespace imfp {

struct OnlineSchedule {
  double r_init = 0.4;
  double decay = 0.0003;  // exploration ratio lost per step
  double eps = 0.2;
  std::size_t n_b = 50;

  /// Constant split with `n_exploit` exploitation pairs per vehicle.
  static OnlineSchedule fixed_exploit(std::size_t n_exploit, std::size_t n_b) {
    if (n_exploit > n_b) throw Error("fixed_exploit: n_exploit exceeds n_b");
    const double r = 1.0 - static_cast<double>(n_exploit) / static_cast<double>(n_b);
    return {r, 0.0, r, n_b};
  }

  void validate() const {
    if (!(eps >= 0.0 && eps <= r_init && r_init <= 1.0)) throw Error("online schedule: need 0 <= eps <= r_init <= 1");
    if (!(decay >= 0.0)) throw Error("online schedule: decay must be >= 0");
    if (n_b < 1) throw Error("online schedule: n_b must be >= 1");
  }
};

/// ceil((r_init - decay t) n_b) while the ratio stays at or above eps, else
/// ceil(eps n_b). Products within 1e-9 of an integer count as that integer.
inline std::size_t n_explore(const OnlineSchedule& s, std::size_t t) {
  const double ratio = s.r_init - s.decay * static_cast<double>(t);
  const double r = ratio >= s.eps ? ratio : s.eps;
  const double x = r * static_cast<double>(s.n_b);
  const auto n = static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9)));
  return std::min(n, s.n_b);
}

/// Initial database from full sweeps: the top `keep` pairs of each sweep are
/// averaged into the bin (pairs enter on first appearance).
inline FingerprintDbB bootstrap_db(const std::vector<SweepTable>& sweeps, const LocationBin& bin,
                                   std::size_t keep = 200) {
  if (sweeps.empty()) throw Error("bootstrap_db: need at least one sweep");
  FingerprintDbB db;
  for (const auto& s : sweeps) ingest_partial_b(db, bin, top_m(s.power_mw, keep), s.pair_space_hash, s.size());
  return db;
}

struct OnlineStep {
  std::size_t n_explore = 0;
  std::vector<std::size_t> exploit;
  std::vector<std::size_t> explore;
  std::size_t chosen_pair = 0;      // measured best of the exploit set
  double chosen_measured_mw = 0.0;
};

/// One vehicle. `measure(pair_id)` returns the measured power in mW. The
/// chosen pair is the measured best among the exploit pairs, or among the
/// explored pairs when nothing is exploited.
inline OnlineStep online_step(FingerprintDbB& db, int bin_id, const OnlineSchedule& sched, std::size_t t,
                              const std::function<double(std::size_t)>& measure, Rng& rng) {
  sched.validate();
  const BinB& bin = db.bin(bin_id);
  if (db.num_pairs < sched.n_b) throw Error("online_step: n_b exceeds the pair space");
  OnlineStep step;
  step.n_explore = n_explore(sched, t);
  const std::size_t n_exploit = sched.n_b - step.n_explore;

  std::vector<bool> used(db.num_pairs, false);
  if (n_exploit > 0) {
    step.exploit = avgpow_select(db, bin_id, n_exploit).pairs;
    for (auto id : step.exploit) used[id] = true;
  }

  std::vector<std::size_t> pool;
  for (const auto& [pair, stat] : bin.pairs) {
    if (!used[pair]) pool.push_back(pair);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t j = 0; j < pool.size() && step.explore.size() < step.n_explore; ++j) {
    step.explore.push_back(pool[j]);
    used[pool[j]] = true;
  }
  if (step.explore.size() < step.n_explore) {
    std::vector<std::size_t> unknown;
    for (std::size_t id = 0; id < db.num_pairs; ++id) {
      if (!used[id]) unknown.push_back(id);
    }
    std::shuffle(unknown.begin(), unknown.end(), rng);
    for (std::size_t j = 0; step.explore.size() < step.n_explore; ++j) step.explore.push_back(unknown[j]);
  }

  const auto& decide = step.exploit.empty() ? step.explore : step.exploit;
  std::vector<PairPower> measured;
  measured.reserve(sched.n_b);
  for (auto id : step.exploit) measured.push_back({id, measure(id)});
  for (auto id : step.explore) measured.push_back({id, measure(id)});
  // Exploit pairs are measured first, so the deciding set starts at index 0.
  std::size_t best = 0;
  for (std::size_t j = 1; j < decide.size(); ++j) {
    if (measured[j].power_mw > measured[best].power_mw) best = j;
  }
  step.chosen_pair = measured[best].pair_id;
  step.chosen_measured_mw = measured[best].power_mw;

  ingest_partial_b(db, bin.bin, measured, db.codebook_hash, db.num_pairs);
  return step;
}

}  // namespace imfp
