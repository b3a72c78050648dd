// SPDX-License-Identifier: Apache-2.0
//
// Location-binned fingerprint databases.
//   Type A: the top-M (pair_id, power) entries of every contributing sweep.
//   Type B: a running linear-scale mean power and sample count per pair.
// Powers are linear milliwatts throughout. Rankings break ties by the lower
// pair_id.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imfp/common.hpp"
#include "imfp/linksim.hpp"

namespace imfp {

struct LocationBin {
  int bin_id = 0;
  double center = 30.0;     // d_0, m
  double half_width = 2.5;  // sigma_d, m

  bool contains(double d) const { return std::abs(d - center) <= half_width; }

  void validate() const {
    if (!(half_width > 0.0)) throw Error(fmt::format("bin {}: half_width must be > 0", bin_id));
    if (!std::isfinite(center)) throw Error(fmt::format("bin {}: center must be finite", bin_id));
  }
};

struct PairPower {
  std::size_t pair_id = 0;
  double power_mw = 0.0;

  friend bool operator==(const PairPower&, const PairPower&) = default;
};

/// Strict ranking order: higher power first, then lower pair_id.
inline bool stronger(const PairPower& a, const PairPower& b) {
  if (a.power_mw != b.power_mw) return a.power_mw > b.power_mw;
  return a.pair_id < b.pair_id;
}

/// The `m` strongest entries of a full table, in ranking order.
inline std::vector<PairPower> top_m(const std::vector<double>& power_mw, std::size_t m) {
  std::vector<PairPower> all(power_mw.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = {i, power_mw[i]};
  const std::size_t k = std::min(m, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), stronger);
  all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------
// Type A
// ---------------------------------------------------------------------------

struct ObservationA {
  std::vector<PairPower> entries;  // ranking order, size <= M
  std::uint64_t source_seed = 0;
};

struct BinA {
  LocationBin bin;
  std::vector<ObservationA> observations;
};

struct FingerprintDbA {
  std::size_t m_kept = 100;
  std::string codebook_hash;
  std::size_t num_pairs = 0;  // |B|
  std::map<int, BinA> bins;

  const BinA& bin(int id) const {
    const auto it = bins.find(id);
    if (it == bins.end()) throw Error(fmt::format("type A database has no bin {}", id));
    return it->second;
  }
};

namespace detail {

inline void check_hash(const std::string& db_hash, const std::string& data_hash) {
  if (!db_hash.empty() && db_hash != data_hash) {
    throw Error(fmt::format("codebook hash mismatch: database {} vs data {}", db_hash, data_hash));
  }
}

}  // namespace detail

/// Appends the top-M entries of a full sweep as one observation of `bin`.
inline void ingest_sweep_a(FingerprintDbA& db, const LocationBin& bin, const SweepTable& sweep,
                           std::uint64_t source_seed = 0) {
  detail::check_hash(db.codebook_hash, sweep.pair_space_hash);
  if (db.num_pairs != 0 && db.num_pairs != sweep.size()) {
    throw Error("ingest_sweep_a: sweep size differs from the database pair space");
  }
  if (db.m_kept < 1) throw Error("ingest_sweep_a: m_kept must be >= 1");
  db.codebook_hash = sweep.pair_space_hash;
  db.num_pairs = sweep.size();
  auto& b = db.bins[bin.bin_id];
  b.bin = bin;
  b.observations.push_back({top_m(sweep.power_mw, db.m_kept), source_seed});
}

// ---------------------------------------------------------------------------
// Type B
// ---------------------------------------------------------------------------

/// Compensated (Neumaier) running sum with a sample count.
struct PairStat {
  double sum = 0.0;
  double compensation = 0.0;
  std::uint64_t count = 0;

  void add(double x, std::uint64_t n = 1) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      compensation += (sum - t) + x;
    } else {
      compensation += (x - t) + sum;
    }
    sum = t;
    count += n;
  }

  double total() const { return sum + compensation; }
  double mean() const { return count == 0 ? 0.0 : total() / static_cast<double>(count); }
};

struct BinB {
  LocationBin bin;
  std::map<std::size_t, PairStat> pairs;
};

struct FingerprintDbB {
  std::string codebook_hash;
  std::size_t num_pairs = 0;
  std::map<int, BinB> bins;

  const BinB& bin(int id) const {
    const auto it = bins.find(id);
    if (it == bins.end()) throw Error(fmt::format("type B database has no bin {}", id));
    return it->second;
  }
};

/// Running-mean update of every listed pair of `bin`.
inline void ingest_partial_b(FingerprintDbB& db, const LocationBin& bin,
                             const std::vector<PairPower>& partial, const std::string& pair_space,
                             std::size_t num_pairs) {
  detail::check_hash(db.codebook_hash, pair_space);
  if (db.num_pairs != 0 && db.num_pairs != num_pairs) throw Error("ingest_partial_b: pair space size differs");
  db.codebook_hash = pair_space;
  db.num_pairs = num_pairs;
  auto& b = db.bins[bin.bin_id];
  b.bin = bin;
  for (const auto& e : partial) {
    if (e.pair_id >= num_pairs) throw Error(fmt::format("ingest_partial_b: pair_id {} out of range", e.pair_id));
    b.pairs[e.pair_id].add(e.power_mw);
  }
}

inline void ingest_partial_b(FingerprintDbB& db, const LocationBin& bin, const SweepTable& sweep) {
  std::vector<PairPower> all(sweep.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = {i, sweep.power_mw[i]};
  ingest_partial_b(db, bin, all, sweep.pair_space_hash, sweep.size());
}

/// Count-weighted union of two databases over the same pair space.
inline FingerprintDbB merge(const FingerprintDbB& a, const FingerprintDbB& b) {
  if (!a.codebook_hash.empty() && !b.codebook_hash.empty()) detail::check_hash(a.codebook_hash, b.codebook_hash);
  FingerprintDbB out = a;
  if (out.codebook_hash.empty()) out.codebook_hash = b.codebook_hash;
  out.num_pairs = std::max(a.num_pairs, b.num_pairs);
  for (const auto& [id, bin] : b.bins) {
    auto& dst = out.bins[id];
    dst.bin = bin.bin;
    for (const auto& [pair, stat] : bin.pairs) {
      auto& s = dst.pairs[pair];
      s.add(stat.sum, stat.count);
      s.add(stat.compensation, 0);
    }
  }
  return out;
}

/// Type B view of a Type A database: every pair recorded in a bin gets
/// mean = (sum of its recorded powers) / N and count N, unrecorded samples
/// contributing zero.
inline FingerprintDbB summarize_a_to_b(const FingerprintDbA& db) {
  FingerprintDbB out;
  out.codebook_hash = db.codebook_hash;
  out.num_pairs = db.num_pairs;
  for (const auto& [id, bin] : db.bins) {
    auto& dst = out.bins[id];
    dst.bin = bin.bin;
    for (const auto& obs : bin.observations) {
      for (const auto& e : obs.entries) dst.pairs[e.pair_id].add(e.power_mw, 0);
    }
    for (auto& [pair, stat] : dst.pairs) stat.count = bin.observations.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON persistence: one document per bin plus an index
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LocationBin& b) {
  return {{"bin_id", b.bin_id}, {"center", b.center}, {"half_width", b.half_width}};
}

inline LocationBin bin_from_json(const nlohmann::json& j) {
  return {j.at("bin_id").get<int>(), j.value("center", 0.0), j.value("half_width", 1.0)};
}

inline nlohmann::json bin_a_json(const FingerprintDbA& db, int bin_id) {
  const BinA& b = db.bin(bin_id);
  nlohmann::json obs = nlohmann::json::array();
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& o : b.observations) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : o.entries) entries.push_back({e.pair_id, e.power_mw});
    obs.push_back(std::move(entries));
    seeds.push_back(o.source_seed);
  }
  return {{"bin_id", bin_id},          {"center", b.bin.center}, {"half_width", b.bin.half_width},
          {"m_kept", db.m_kept},       {"codebook_hash", db.codebook_hash},
          {"num_pairs", db.num_pairs}, {"observations", std::move(obs)},
          {"source_seeds", std::move(seeds)}};
}

/// Adds the bin document `j` to `db`, checking the codebook hash.
inline void load_bin_a(FingerprintDbA& db, const nlohmann::json& j) {
  const std::string hash = j.at("codebook_hash").get<std::string>();
  detail::check_hash(db.codebook_hash, hash);
  db.codebook_hash = hash;
  db.m_kept = j.at("m_kept").get<std::size_t>();
  db.num_pairs = j.value("num_pairs", db.num_pairs);
  BinA b;
  b.bin = bin_from_json(j);
  const auto& obs = j.at("observations");
  const auto seeds = j.value("source_seeds", nlohmann::json::array());
  for (std::size_t n = 0; n < obs.size(); ++n) {
    ObservationA o;
    for (const auto& e : obs[n]) o.entries.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>()});
    if (o.entries.size() > db.m_kept) throw Error("type A observation longer than m_kept");
    if (!std::is_sorted(o.entries.begin(), o.entries.end(), stronger)) {
      throw Error("type A observation is not in ranking order");
    }
    if (n < seeds.size()) o.source_seed = seeds[n].get<std::uint64_t>();
    b.observations.push_back(std::move(o));
  }
  db.bins[b.bin.bin_id] = std::move(b);
}

inline nlohmann::json bin_b_json(const FingerprintDbB& db, int bin_id) {
  const BinB& b = db.bin(bin_id);
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [pair, stat] : b.pairs) pairs.push_back({pair, stat.mean(), stat.count});
  return {{"bin_id", bin_id}, {"center", b.bin.center}, {"half_width", b.bin.half_width},
          {"codebook_hash", db.codebook_hash}, {"num_pairs", db.num_pairs},
          {"pairs", std::move(pairs)}};
}

inline void load_bin_b(FingerprintDbB& db, const nlohmann::json& j) {
  const std::string hash = j.at("codebook_hash").get<std::string>();
  detail::check_hash(db.codebook_hash, hash);
  db.codebook_hash = hash;
  db.num_pairs = j.value("num_pairs", db.num_pairs);
  BinB b;
  b.bin = bin_from_json(j);
  for (const auto& e : j.at("pairs")) {
    const auto count = e.at(2).get<std::uint64_t>();
    if (count < 1) throw Error("type B pair with zero count");
    PairStat s;
    s.add(e.at(1).get<double>() * static_cast<double>(count), count);
    b.pairs[e.at(0).get<std::size_t>()] = s;
  }
  db.bins[b.bin.bin_id] = std::move(b);
}

// ---------------------------------------------------------------------------
// Compact binary Type A encoding
// ---------------------------------------------------------------------------
// Layout (little endian): "IMFPDBA1", u32 header length, header JSON (bin,
// m_kept, hash, num_pairs, id width), u32 observation count, then per
// observation: u64 source seed, u16 entry count, entries of (id_width-byte
// pair_id, f64 power_mw).

namespace detail {

inline void put_bytes(std::string& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_bytes(std::istream& is, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    const int c = is.get();
    if (c == EOF) throw Error("binary type A: truncated input");
    v |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
  }
  return v;
}

inline int id_width(std::size_t num_pairs) {
  int w = 1;
  while (w < 8 && (num_pairs > (std::uint64_t{1} << (8 * w)))) ++w;
  return w;
}

}  // namespace detail

/// `extra` fields are stored in the header and ignored by the decoder.
inline std::string encode_bin_a(const FingerprintDbA& db, int bin_id,
                                const nlohmann::json& extra = nlohmann::json::object()) {
  const BinA& b = db.bin(bin_id);
  const int w = detail::id_width(std::max<std::size_t>(db.num_pairs, 1));
  nlohmann::json header = extra;
  header["bin"] = to_json(b.bin);
  header["m_kept"] = db.m_kept;
  header["codebook_hash"] = db.codebook_hash;
  header["num_pairs"] = db.num_pairs;
  header["id_width"] = w;
  const std::string h = header.dump();
  std::string out = "IMFPDBA1";
  detail::put_bytes(out, h.size(), 4);
  out += h;
  detail::put_bytes(out, b.observations.size(), 4);
  for (const auto& o : b.observations) {
    if (o.entries.size() > 0xFFFF) throw Error("binary type A: observation too long");
    detail::put_bytes(out, o.source_seed, 8);
    detail::put_bytes(out, o.entries.size(), 2);
    for (const auto& e : o.entries) {
      detail::put_bytes(out, e.pair_id, w);
      std::uint64_t bits = 0;
      std::memcpy(&bits, &e.power_mw, sizeof bits);
      detail::put_bytes(out, bits, 8);
    }
  }
  return out;
}

inline void decode_bin_a(FingerprintDbA& db, std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "IMFPDBA1") throw Error("binary type A: bad magic");
  const auto hlen = detail::get_bytes(is, 4);
  std::string h(hlen, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(hlen))) throw Error("binary type A: truncated header");
  const auto header = nlohmann::json::parse(h);
  const std::string hash = header.at("codebook_hash").get<std::string>();
  detail::check_hash(db.codebook_hash, hash);
  db.codebook_hash = hash;
  db.m_kept = header.at("m_kept").get<std::size_t>();
  db.num_pairs = header.at("num_pairs").get<std::size_t>();
  const int w = header.at("id_width").get<int>();
  BinA b;
  b.bin = bin_from_json(header.at("bin"));
  const auto n_obs = detail::get_bytes(is, 4);
  for (std::uint64_t n = 0; n < n_obs; ++n) {
    ObservationA o;
    o.source_seed = detail::get_bytes(is, 8);
    const auto count = detail::get_bytes(is, 2);
    for (std::uint64_t k = 0; k < count; ++k) {
      PairPower e;
      e.pair_id = detail::get_bytes(is, w);
      const std::uint64_t bits = detail::get_bytes(is, 8);
      std::memcpy(&e.power_mw, &bits, sizeof bits);
      o.entries.push_back(e);
    }
    b.observations.push_back(std::move(o));
  }
  db.bins[b.bin.bin_id] = std::move(b);
}

}  // namespace imfp
