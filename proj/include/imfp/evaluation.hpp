// SPDX-License-Identifier: Apache-2.0
//
// Power-loss metrics, fold assignment, rate, and the closed-form training
// overhead and beam coherence time models.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "imfp/common.hpp"

namespace imfp {

// ---------------------------------------------------------------------------
// Power loss
// ---------------------------------------------------------------------------

/// xi = max over all pairs / max over `selected`; >= 1.
inline double power_loss(const std::vector<double>& gamma_all, const std::vector<std::size_t>& selected) {
  if (selected.empty()) throw Error("power_loss: empty selection");
  const double best = *std::max_element(gamma_all.begin(), gamma_all.end());
  if (!(best > 0.0)) throw Error("power_loss: degenerate channel (all gains zero)");
  double chosen = 0.0;
  for (std::size_t id : selected) chosen = std::max(chosen, gamma_all.at(id));
  return chosen > 0.0 ? best / chosen : std::numeric_limits<double>::infinity();
}

/// Index into `candidates` of the pair with the largest measured value among
/// the first n entries (earlier entries win ties).
inline std::size_t trained_winner(const std::vector<double>& measured, const std::vector<std::size_t>& candidates,
                                  std::size_t n) {
  if (n == 0 || n > candidates.size()) throw Error("trained_winner: bad prefix length");
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (measured.at(candidates[j]) > measured.at(candidates[best])) best = j;
  }
  return best;
}

/// Fraction of test cases with loss xi > c (c linear, >= 1).
inline double estimate_ppl(const std::vector<double>& losses, double c) {
  if (losses.empty()) throw Error("estimate_ppl: empty test set");
  const auto n = std::count_if(losses.begin(), losses.end(), [c](double xi) { return xi > c; });
  return static_cast<double>(n) / static_cast<double>(losses.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One cell of a power-loss report: the count of test cases with loss above
/// c for a (method, n_b, c, eirp) combination.
struct PplCell {
  std::string method;
  std::size_t n_b = 0;
  double c_db = 0.0;
  double eirp_dbm = 0.0;  // +inf marks the noiseless evaluation
  std::size_t exceed = 0;
  std::size_t n_test = 0;

  double prob() const { return n_test == 0 ? 0.0 : static_cast<double>(exceed) / static_cast<double>(n_test); }
};

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Fold of each item: a seeded shuffle of [0, n) dealt round-robin into k folds.
inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("k-fold: k must be >= 2");
  if (n < k) throw Error(fmt::format("k-fold: dataset of {} is smaller than k = {}", n, k));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t j = 0; j < n; ++j) fold[order[j]] = j % k;
  return fold;
}

/// Runs `fold_fn(train, test)` for every fold and returns the per-fold results.
template <class Result>
std::vector<Result> kfold_cv(std::size_t n, std::size_t k, std::uint64_t seed,
                             const std::function<Result(const std::vector<std::size_t>&,
                                                        const std::vector<std::size_t>&)>& fold_fn) {
  const auto fold = fold_assignment(n, k, seed);
  std::vector<Result> out;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    out.push_back(fold_fn(train, test));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rate
// ---------------------------------------------------------------------------

/// log2(1 + P_t gamma / P_n), bits/s/Hz.
inline double instantaneous_rate(double gamma_s, double p_t_dbm, double p_n_dbm) {
  if (!(gamma_s >= 0.0)) throw Error("instantaneous_rate: gamma must be >= 0");
  return std::log2(1.0 + db_to_linear(p_t_dbm - p_n_dbm) * gamma_s);
}

/// max(0, (T_B - T_trn) / T_B) * R_trn.
inline double avg_rate_with_overhead(double t_b, double t_trn, double r_trn) {
  if (!(t_b > 0.0)) throw Error("avg_rate_with_overhead: T_B must be > 0");
  return std::max(0.0, (t_b - t_trn) / t_b) * r_trn;
}

// ---------------------------------------------------------------------------
// Overhead
// ---------------------------------------------------------------------------

struct OverheadModel {
  double t_qo = 26.8e-6;   // quasi-omni frame, s
  double t_sec = 5.0e-6;   // sector frame, s
  double preamble = 4.3e-6;
  double header = 22.5e-6;
  double spreading = 32.0;

  /// Sector frame duration implied by the frame layout, preamble + header / spreading.
  double sector_frame() const { return preamble + header / spreading; }

  /// Model whose t_sec is derived from the frame layout instead of rounded.
  static OverheadModel from_frame(double preamble, double header, double spreading, double t_qo = 26.8e-6) {
    OverheadModel m{t_qo, preamble + header / spreading, preamble, header, spreading};
    return m;
  }

  void validate() const {
    if (!(t_qo > 0.0 && t_sec > 0.0 && spreading > 0.0)) throw Error("overhead: durations must be > 0");
  }
};

/// Quasi-omni pattern count: ceil(n_sec / 32), at least 1.
inline std::size_t quasi_omni_count(std::size_t n_sec) {
  return std::max<std::size_t>(1, (n_sec + 31) / 32);
}

/// Two-level sector sweep duration N_QO^2 T_QO + 2 (N_sec / N_QO) T_sec.
inline double t_11ad(std::size_t n_sec, const OverheadModel& m = {}) {
  if (n_sec < 1) throw Error("t_11ad: n_sec must be >= 1");
  const double nqo = static_cast<double>(quasi_omni_count(n_sec));
  return nqo * nqo * m.t_qo + 2.0 * (static_cast<double>(n_sec) / nqo) * m.t_sec;
}

inline double t_fingerprint(std::size_t n_fp, double t_sec = 5.0e-6) {
  if (n_fp < 1) throw Error("t_fingerprint: n_fp must be >= 1");
  return static_cast<double>(n_fp) * t_sec;
}

struct MobilityConfig {
  double v = 20.0;                 // m/s
  double d_reflector = 12.0;       // m
  double alpha = kPi / 3.0;        // rad

  void validate() const {
    if (!(v > 0.0)) throw Error("mobility.v must be > 0");
    if (!(d_reflector > 0.0)) throw Error("mobility.d_reflector must be > 0");
    if (!(alpha > 0.0 && alpha <= kPi / 2.0)) throw Error("mobility.alpha must lie in (0, pi/2]");
  }
};

/// 0.886 D / (v sqrt(N_a) sin(alpha)).
inline double beam_coherence_time(std::size_t n_a, const MobilityConfig& mob) {
  if (n_a < 1) throw Error("beam_coherence_time: n_a must be >= 1");
  mob.validate();
  return 0.886 * mob.d_reflector / (mob.v * std::sqrt(static_cast<double>(n_a)) * std::sin(mob.alpha));
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

/// Sample mean and standard error of the mean.
inline MeanSe mean_se(const std::vector<double>& x) {
  MeanSe r;
  r.n = x.size();
  if (x.empty()) return r;
  r.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - r.mean) * (v - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
  }
  return r;
}

/// Trailing moving average; entry t averages x[max(0, t-w+1) .. t].
inline std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
  if (window == 0) throw Error("moving_average: window must be >= 1");
  std::vector<double> out(x.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    acc += x[t];
    if (t >= window) acc -= x[t - window];
    out[t] = acc / static_cast<double>(std::min(window, t + 1));
  }
  return out;
}

}  // namespace imfp
