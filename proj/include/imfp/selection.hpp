// SPDX-License-Identifier: Apache-2.0
//
// Candidate beam-pair selection.
//
// AvgPow ranks a Type B bin by mean power. MinMisProb ranks a Type A bin by
// the empirical probability of being the best pair, then ranks the remaining
// recorded pairs by an independence-approximation score, then pads with
// never-recorded pairs. Every ranking breaks ties by the lower pair_id.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "imfp/arrays.hpp"
#include "imfp/fingerprints.hpp"
#include "imfp/propagation.hpp"

namespace imfp {

enum class Tier { correlated, independence, padding };
enum class Method { avgpow, minmisprob, position_only };

inline std::string to_string(Tier t) {
  switch (t) {
    case Tier::correlated: return "correlated";
    case Tier::independence: return "independence";
    case Tier::padding: return "padding";
  }
  return "?";
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::avgpow: return "avgpow";
    case Method::minmisprob: return "minmisprob";
    case Method::position_only: return "position_only";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "avgpow") return Method::avgpow;
  if (s == "minmisprob") return Method::minmisprob;
  if (s == "position_only") return Method::position_only;
  throw Error(fmt::format("unknown selection method '{}'", s));
}

struct RankedCandidates {
  int bin_id = 0;
  Method method = Method::avgpow;
  std::vector<std::size_t> pairs;
  std::vector<double> scores;
  std::vector<Tier> tiers;

  std::size_t n_b() const { return pairs.size(); }
};

inline nlohmann::json to_json(const RankedCandidates& rc) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < rc.pairs.size(); ++i) {
    pairs.push_back({{"pair_id", rc.pairs[i]}, {"score", rc.scores[i]}, {"tier", to_string(rc.tiers[i])}});
  }
  return {{"bin_id", rc.bin_id}, {"method", to_string(rc.method)}, {"n_b", rc.n_b()}, {"pairs", std::move(pairs)}};
}

namespace detail {

inline void check_budget(std::size_t n_b, std::size_t num_pairs) {
  if (n_b < 1 || n_b > num_pairs) {
    throw Error(fmt::format("n_b must lie in [1, {}], got {}", num_pairs, n_b));
  }
}

/// Appends never-used pair_ids in ascending order until `rc` holds n_b pairs.
inline void pad(RankedCandidates& rc, std::size_t n_b, const std::vector<bool>& used) {
  for (std::size_t id = 0; id < used.size() && rc.pairs.size() < n_b; ++id) {
    if (used[id]) continue;
    rc.pairs.push_back(id);
    rc.scores.push_back(0.0);
    rc.tiers.push_back(Tier::padding);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// AvgPow
// ---------------------------------------------------------------------------

inline RankedCandidates avgpow_select(const FingerprintDbB& db, int bin_id, std::size_t n_b) {
  const BinB& bin = db.bin(bin_id);
  if (bin.pairs.empty()) throw Error(fmt::format("avgpow_select: bin {} is empty", bin_id));
  detail::check_budget(n_b, db.num_pairs);
  std::vector<PairPower> ranked;
  ranked.reserve(bin.pairs.size());
  for (const auto& [pair, stat] : bin.pairs) ranked.push_back({pair, stat.mean()});
  const std::size_t k = std::min(n_b, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), stronger);

  RankedCandidates rc{bin_id, Method::avgpow, {}, {}, {}};
  std::vector<bool> used(db.num_pairs, false);
  for (std::size_t i = 0; i < k; ++i) {
    rc.pairs.push_back(ranked[i].pair_id);
    rc.scores.push_back(ranked[i].power_mw);
    rc.tiers.push_back(Tier::correlated);
    used[ranked[i].pair_id] = true;
  }
  detail::pad(rc, n_b, used);
  return rc;
}

// ---------------------------------------------------------------------------
// Probability of being optimal
// ---------------------------------------------------------------------------

/// Number of observations of the bin in which each pair is the recorded best.
inline std::map<std::size_t, std::size_t> top1_counts(const BinA& bin) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& o : bin.observations) {
    if (!o.entries.empty()) ++counts[o.entries.front().pair_id];
  }
  return counts;
}

/// P_opt(i): fraction of observations in which pair i is the best. Pairs
/// never best are absent (probability 0).
inline std::map<std::size_t, double> p_opt_empirical(const FingerprintDbA& db, int bin_id) {
  const BinA& bin = db.bin(bin_id);
  if (bin.observations.empty()) throw Error(fmt::format("p_opt_empirical: bin {} has no observations", bin_id));
  std::map<std::size_t, double> p;
  const double n = static_cast<double>(bin.observations.size());
  for (const auto& [pair, c] : top1_counts(bin)) p[pair] = static_cast<double>(c) / n;
  return p;
}

/// Natural log of the independence-approximation score
///   s(i) = (1/N) sum_n prod_{k != i} (1/N) sum_m 1(g_ni > g_mk)
/// for every pair recorded in the bin (or only those in `restrict_to`).
/// Unrecorded powers are zero; pairs never recorded contribute a factor 1.
/// Zero scores are -inf. Runs in O(E log E) for E recorded entries.
inline std::map<std::size_t, double> log_p_opt_independent(
    const FingerprintDbA& db, int bin_id, const std::optional<std::set<std::size_t>>& restrict_to = std::nullopt) {
  const BinA& bin = db.bin(bin_id);
  const std::size_t N = bin.observations.size();
  std::map<std::size_t, double> out;
  if (N == 0) return out;

  struct Sample {
    double power;
    std::size_t pair;
    std::size_t obs;
  };
  std::vector<Sample> samples;
  std::map<std::size_t, std::size_t> slot;  // pair -> dense index
  for (std::size_t n = 0; n < N; ++n) {
    for (const auto& e : bin.observations[n].entries) {
      samples.push_back({e.power_mw, e.pair_id, n});
      slot.emplace(e.pair_id, 0);
    }
  }
  std::vector<std::size_t> pair_of;
  for (auto& [pair, idx] : slot) {
    idx = pair_of.size();
    pair_of.push_back(pair);
  }
  const std::size_t R = pair_of.size();
  auto wanted = [&](std::size_t pair) { return !restrict_to || restrict_to->count(pair) > 0; };

  // F_k(x) = (zeros_k + #{recorded g_mk < x}) / N with zeros_k = N - r_k.
  std::vector<std::size_t> below(R, 0);
  for (const auto& s : samples) ++below[slot[s.pair]];
  for (auto& b : below) b = N - b;

  const double logN = std::log(static_cast<double>(N));
  std::size_t zero_factors = 0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < R; ++k) {
    if (below[k] == 0) ++zero_factors;
    else log_sum += std::log(static_cast<double>(below[k])) - logN;
  }

  std::vector<std::vector<double>> terms(R);
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.power < b.power; });
  for (std::size_t g = 0; g < samples.size();) {
    std::size_t end = g;
    while (end < samples.size() && samples[end].power == samples[g].power) ++end;
    // Evaluate the product at x = power, counting only values strictly below.
    for (std::size_t j = g; j < end; ++j) {
      const std::size_t i = slot[samples[j].pair];
      if (!wanted(samples[j].pair) || !(samples[j].power > 0.0)) continue;
      std::size_t zeros = zero_factors;
      double ls = log_sum;
      if (below[i] == 0) --zeros;
      else ls -= std::log(static_cast<double>(below[i])) - logN;
      if (zeros == 0) terms[i].push_back(ls);
    }
    for (std::size_t j = g; j < end; ++j) {
      const std::size_t k = slot[samples[j].pair];
      if (below[k] == 0) --zero_factors;
      else log_sum -= std::log(static_cast<double>(below[k])) - logN;
      ++below[k];
      log_sum += std::log(static_cast<double>(below[k])) - logN;
    }
    g = end;
  }

  for (std::size_t k = 0; k < R; ++k) {
    if (!wanted(pair_of[k])) continue;
    auto& t = terms[k];
    double score = -std::numeric_limits<double>::infinity();
    if (R == 1) {
      score = 0.0;  // empty product in every observation
    } else if (!t.empty()) {
      const double m = *std::max_element(t.begin(), t.end());
      double acc = 0.0;
      for (double v : t) acc += std::exp(v - m);
      score = m + std::log(acc) - logN;
    }
    out[pair_of[k]] = score;
  }
  return out;
}

inline std::map<std::size_t, double> p_opt_independent(
    const FingerprintDbA& db, int bin_id, const std::optional<std::set<std::size_t>>& restrict_to = std::nullopt) {
  auto logs = log_p_opt_independent(db, bin_id, restrict_to);
  for (auto& [pair, v] : logs) v = std::exp(v);
  return logs;
}

/// Log-score key with ties defined at 1e-9 resolution so that rounding noise
/// does not override the pair_id tie rule.
inline std::int64_t score_key(double log_score) {
  if (std::isinf(log_score)) return std::numeric_limits<std::int64_t>::min();
  return std::llround(log_score * 1e9);
}

// ---------------------------------------------------------------------------
// MinMisProb
// ---------------------------------------------------------------------------

inline RankedCandidates minmisprob_select(const FingerprintDbA& db, int bin_id, std::size_t n_b) {
  const BinA& bin = db.bin(bin_id);
  if (bin.observations.empty()) throw Error(fmt::format("minmisprob_select: bin {} is empty", bin_id));
  detail::check_budget(n_b, db.num_pairs);
  const double N = static_cast<double>(bin.observations.size());

  std::vector<std::pair<std::size_t, std::size_t>> tier1;  // (pair, count)
  for (const auto& [pair, c] : top1_counts(bin)) tier1.emplace_back(pair, c);
  std::sort(tier1.begin(), tier1.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  RankedCandidates rc{bin_id, Method::minmisprob, {}, {}, {}};
  std::vector<bool> used(db.num_pairs, false);
  for (const auto& [pair, c] : tier1) {
    if (rc.pairs.size() == n_b) return rc;
    rc.pairs.push_back(pair);
    rc.scores.push_back(static_cast<double>(c) / N);
    rc.tiers.push_back(Tier::correlated);
    used[pair] = true;
  }
  if (rc.pairs.size() < n_b) {
    std::set<std::size_t> rest;
    for (const auto& o : bin.observations) {
      for (const auto& e : o.entries) {
        if (!used[e.pair_id]) rest.insert(e.pair_id);
      }
    }
    const auto logs = log_p_opt_independent(db, bin_id, rest);
    std::vector<std::pair<std::size_t, double>> tier2(logs.begin(), logs.end());
    std::sort(tier2.begin(), tier2.end(), [](const auto& a, const auto& b) {
      const auto ka = score_key(a.second);
      const auto kb = score_key(b.second);
      return ka != kb ? ka > kb : a.first < b.first;
    });
    for (const auto& [pair, ls] : tier2) {
      if (rc.pairs.size() == n_b) break;
      rc.pairs.push_back(pair);
      rc.scores.push_back(std::exp(ls));
      rc.tiers.push_back(Tier::independence);
      used[pair] = true;
    }
  }
  detail::pad(rc, n_b, used);
  return rc;
}

/// Repeatedly takes the remaining pair with the largest P_opt (lower index on
/// ties). `p_opt` is dense over pair_id.
inline std::vector<std::size_t> greedy_select(const std::vector<double>& p_opt, std::size_t n_b) {
  if (n_b > p_opt.size()) throw Error("greedy_select: n_b exceeds the number of pairs");
  std::vector<bool> taken(p_opt.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t step = 0; step < n_b; ++step) {
    std::size_t best = p_opt.size();
    for (std::size_t i = 0; i < p_opt.size(); ++i) {
      if (!taken[i] && (best == p_opt.size() || p_opt[i] > p_opt[best])) best = i;
    }
    taken[best] = true;
    out.push_back(best);
  }
  return out;
}

/// Empirical misalignment probability of a candidate set: the fraction of
/// observations whose recorded best pair is outside `selected`.
inline double empirical_misalignment(const BinA& bin, const std::set<std::size_t>& selected) {
  if (bin.observations.empty()) throw Error("empirical_misalignment: no observations");
  std::size_t miss = 0;
  for (const auto& o : bin.observations) {
    if (o.entries.empty() || selected.count(o.entries.front().pair_id) == 0) ++miss;
  }
  return static_cast<double>(miss) / static_cast<double>(bin.observations.size());
}

// ---------------------------------------------------------------------------
// Position only
// ---------------------------------------------------------------------------

/// The pair whose beams have the largest array gain toward the geometric
/// line of sight at each end, blockage ignored.
inline BeamPairIndex position_only_select(const Scene& scene, const Codebook& W, const Codebook& F) {
  if (!scene.rsu_pos || !scene.cv_pos) throw Error("position_only_select: positions unknown");
  const Direction aoa = scene.rsu_frame.to_local(*scene.cv_pos - *scene.rsu_pos);
  const Direction aod = scene.cv_frame.to_local(*scene.rsu_pos - *scene.cv_pos);
  return BeamPairIndex::from_beams(W.best_beam(aoa), F.best_beam(aod), W.size(), F.size());
}

}  // namespace imfp
