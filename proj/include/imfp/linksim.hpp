// SPDX-License-Identifier: Apache-2.0
//
// Wideband effective channel per beam pair, least-squares training noise
// model, and exhaustive beam sweeps.
//
// Power convention: ray gains are amplitudes for 0 dBm transmit power and
// 0 dBi antennas, so gamma = sum_n |h[n]|^2 is a dimensionless channel gain
// and P_t * gamma is received power. Transmit power enters only through the
// estimation noise and the rate.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "imfp/arrays.hpp"
#include "imfp/common.hpp"
#include "imfp/parallel.hpp"
#include "imfp/propagation.hpp"

namespace imfp {

struct PulseConfig {
  double bandwidth = 1760e6;  // Hz
  double rolloff = 0.1;
  int channel_length = 512;   // taps
  int window_symbols = 8;     // pulse support is truncated to +-window_symbols * T

  double symbol_period() const { return 1.0 / bandwidth; }

  void validate() const {
    if (!(bandwidth > 0.0)) throw Error("pulse.bandwidth must be > 0");
    if (!(rolloff >= 0.0 && rolloff <= 1.0)) throw Error("pulse.rolloff must lie in [0, 1]");
    if (channel_length < 1) throw Error("pulse.channel_length must be >= 1");
    if (window_symbols < 1) throw Error("pulse.window_symbols must be >= 1");
  }
};

struct TrainingConfig {
  int seq_length = 512;          // K
  double noise_variance = 0.0;   // sigma_v^2, mW
  double tx_power_dbm = 0.0;     // P_t

  double tx_power_mw() const { return db_to_linear(tx_power_dbm); }

  /// Variance of each normalized tap-estimate error, sigma_v^2 / (K P_t).
  double tap_error_variance() const { return noise_variance / (seq_length * tx_power_mw()); }

  void validate(const PulseConfig& pulse) const {
    if (seq_length < pulse.channel_length) throw Error("training.seq_length must be >= pulse.channel_length");
    if (!(noise_variance >= 0.0)) throw Error("training.noise_variance must be >= 0");
    if (!std::isfinite(tx_power_dbm)) throw Error("training.tx_power_dbm must be finite");
  }
};

/// Thermal noise power -174 dBm/Hz + 10 log10(B).
inline double noise_power_dbm(double bandwidth_hz) {
  if (!(bandwidth_hz > 0.0)) throw Error("noise_power_dbm: bandwidth must be > 0");
  return -174.0 + 10.0 * std::log10(bandwidth_hz);
}

/// Transmit power that yields `eirp_dbm` with the full-array gain of n_t elements.
inline double tx_power_for_eirp(double eirp_dbm, int n_t) {
  return eirp_dbm - 10.0 * std::log10(static_cast<double>(n_t));
}

// ---------------------------------------------------------------------------
// Beam pairs
// ---------------------------------------------------------------------------

/// pair_id = rx_beam * |F| + tx_beam.
struct BeamPairIndex {
  std::size_t pair_id = 0;
  std::size_t rx_beam = 0;
  std::size_t tx_beam = 0;

  static BeamPairIndex from_id(std::size_t id, std::size_t n_rx, std::size_t n_tx) {
    if (id >= n_rx * n_tx) throw Error(fmt::format("pair_id {} out of range [0, {})", id, n_rx * n_tx));
    return {id, id / n_tx, id % n_tx};
  }
  static BeamPairIndex from_beams(std::size_t r, std::size_t t, std::size_t n_rx, std::size_t n_tx) {
    if (r >= n_rx || t >= n_tx) throw Error("beam index out of range");
    return {r * n_tx + t, r, t};
  }
};

// ---------------------------------------------------------------------------
// Pulse and effective channel
// ---------------------------------------------------------------------------

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

/// Raised-cosine pulse g(t); the removable singularity at |t| = T/(2 beta)
/// takes its limit (pi/4) sinc(1/(2 beta)).
inline double raised_cosine(double t, const PulseConfig& cfg) {
  const double x = t / cfg.symbol_period();
  const double beta = cfg.rolloff;
  if (beta == 0.0) return sinc(x);
  const double d = 2.0 * beta * x;
  if (std::abs(std::abs(d) - 1.0) < 1e-9) return (kPi / 4.0) * sinc(1.0 / (2.0 * beta));
  return sinc(x) * std::cos(kPi * beta * x) / (1.0 - d * d);
}

/// raised_cosine restricted to the +-window support.
inline double windowed_pulse(double t, const PulseConfig& cfg) {
  if (std::abs(t) > cfg.window_symbols * cfg.symbol_period() * (1.0 + 1e-12)) return 0.0;
  return raised_cosine(t, cfg);
}

struct EffectiveChannel {
  CVector taps;
  BeamPairIndex pair;

  double power() const {
    double s = 0.0;
    for (const auto& h : taps) s += std::norm(h);
    return s;
  }
};

namespace detail {

inline double min_delay(const ChannelInstance& ch) {
  double t0 = std::numeric_limits<double>::infinity();
  for (const auto& r : ch.rays) t0 = std::min(t0, r.delay);
  return t0;
}

/// sqrt(N) * w^H a for every beam of `cb` toward `d`.
inline CVector beam_responses(const Codebook& cb, Direction d) {
  const CVector a = steering_vector(cb.array, d);
  const double s = std::sqrt(static_cast<double>(cb.array.size()));
  CVector out(cb.size());
  for (std::size_t b = 0; b < cb.size(); ++b) out[b] = s * inner(cb.beams[b], a);
  return out;
}

}  // namespace detail

/// h[n] = sum_l g(nT + tau_0 - tau_l) w_r^H H_l f_t, n = 0..L-1, with
/// H_l = sqrt(N_r N_t) alpha_l a_r a_t^H and tau_0 the earliest delay.
inline EffectiveChannel effective_channel(const ChannelInstance& ch, BeamPairIndex pair,
                                          const Codebook& W, const Codebook& F,
                                          const PulseConfig& pulse) {
  if (pair.rx_beam >= W.size() || pair.tx_beam >= F.size() ||
      pair.pair_id != pair.rx_beam * F.size() + pair.tx_beam) {
    throw Error("effective_channel: beam pair out of range");
  }
  EffectiveChannel eff{CVector(static_cast<std::size_t>(pulse.channel_length)), pair};
  if (ch.rays.empty()) return eff;
  const double tau0 = detail::min_delay(ch);
  const double T = pulse.symbol_period();
  const double nr = std::sqrt(static_cast<double>(W.array.size()));
  const double nt = std::sqrt(static_cast<double>(F.array.size()));
  for (const auto& ray : ch.rays) {
    const cplx rx = nr * inner(W.beams[pair.rx_beam], steering_vector(W.array, ray.aoa));
    const cplx tx = nt * std::conj(inner(F.beams[pair.tx_beam], steering_vector(F.array, ray.aod)));
    const cplx c = ray.gain * rx * tx;
    const double offset = ray.delay - tau0;
    const int first = std::max(0, static_cast<int>(std::floor(offset / T)) - pulse.window_symbols - 1);
    const int last = std::min(pulse.channel_length - 1,
                              static_cast<int>(std::ceil(offset / T)) + pulse.window_symbols + 1);
    for (int n = first; n <= last; ++n) {
      eff.taps[static_cast<std::size_t>(n)] += windowed_pulse(n * T - offset, pulse) * c;
    }
  }
  return eff;
}

/// Least-squares tap estimate normalized by sqrt(P_t): h + e, e_n ~ CN(0, sigma_v^2/(K P_t)).
/// Assumes perfect-autocorrelation training (S^H S = K I).
inline CVector estimate_taps(const EffectiveChannel& eff, const TrainingConfig& trn, Rng& rng) {
  CVector est = eff.taps;
  const double var = trn.tap_error_variance();
  if (var > 0.0) {
    for (auto& h : est) h += complex_normal(rng, var);
  }
  return est;
}

/// Estimated received gain ||h_hat||^2.
inline double measure_pair(const EffectiveChannel& eff, const TrainingConfig& trn, Rng& rng) {
  double s = 0.0;
  for (const auto& h : estimate_taps(eff, trn, rng)) s += std::norm(h);
  return s;
}

/// LS estimate of the first L taps from a periodic training sequence `s` of
/// length K and the K received samples y[k] = sum_n h[n] s[(k-n) mod K] + v[k]:
/// h_hat[n] = (1/K) sum_k conj(s[(k-n) mod K]) y[k].
inline CVector least_squares_taps(const CVector& received, const CVector& training, std::size_t n_taps) {
  const std::size_t K = training.size();
  if (received.size() != K || n_taps > K) throw Error("least_squares_taps: size mismatch");
  CVector h(n_taps);
  for (std::size_t n = 0; n < n_taps; ++n) {
    cplx acc{0.0, 0.0};
    for (std::size_t k = 0; k < K; ++k) acc += std::conj(training[(k + K - n) % K]) * received[k];
    h[n] = acc / static_cast<double>(K);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Beamspace representation for whole-codebook sweeps
// ---------------------------------------------------------------------------

/// Per-ray beam responses plus the pulse Gram matrix
/// Q[l][m] = sum_n g(nT + tau_0 - tau_l) g(nT + tau_0 - tau_m), so that
/// gamma(r, t) = c^H Q c with c_l = alpha_l rx_l(r) tx_l(t). Equivalent to
/// summing |h[n]|^2 from effective_channel, at O(rays^2) cost per pair.
class BeamspaceChannel {
 public:
  BeamspaceChannel(const ChannelInstance& ch, const Codebook& W, const Codebook& F,
                   const PulseConfig& pulse)
      : n_rx_(W.size()), n_tx_(F.size()), n_taps_(pulse.channel_length), hash_(pair_space_hash(W, F)) {
    pulse.validate();
    const std::size_t nl = ch.rays.size();
    alpha_.reserve(nl);
    for (const auto& r : ch.rays) alpha_.push_back(r.gain);
    rx_.reserve(nl * n_rx_);
    tx_.reserve(nl * n_tx_);
    for (const auto& r : ch.rays) {
      const CVector rx = detail::beam_responses(W, r.aoa);
      rx_.insert(rx_.end(), rx.begin(), rx.end());
      const CVector tx = detail::beam_responses(F, r.aod);
      for (const auto& v : tx) tx_.push_back(std::conj(v));
    }
    if (nl == 0) return;
    const double tau0 = detail::min_delay(ch);
    const double T = pulse.symbol_period();
    std::vector<std::vector<double>> pulses(nl, std::vector<double>(static_cast<std::size_t>(n_taps_)));
    for (std::size_t l = 0; l < nl; ++l) {
      for (int n = 0; n < n_taps_; ++n) {
        pulses[l][static_cast<std::size_t>(n)] = windowed_pulse(n * T + tau0 - ch.rays[l].delay, pulse);
      }
    }
    for (std::size_t l = 0; l < nl; ++l) {
      for (std::size_t m = l; m < nl; ++m) {
        double q = 0.0;
        for (int n = 0; n < n_taps_; ++n) {
          q += pulses[l][static_cast<std::size_t>(n)] * pulses[m][static_cast<std::size_t>(n)];
        }
        if (q != 0.0) gram_.push_back({l, m, l == m ? q : 2.0 * q});
      }
    }
  }

  std::size_t num_rx() const { return n_rx_; }
  std::size_t num_tx() const { return n_tx_; }
  std::size_t num_pairs() const { return n_rx_ * n_tx_; }
  int num_taps() const { return n_taps_; }
  const std::string& pair_space() const { return hash_; }

  /// Noiseless gamma of one pair.
  double gain(std::size_t pair_id) const {
    const auto p = BeamPairIndex::from_id(pair_id, n_rx_, n_tx_);
    return gain_of(p.rx_beam, p.tx_beam);
  }

  /// Noiseless gamma for every pair, indexed by pair_id.
  std::vector<double> gains() const {
    std::vector<double> out(num_pairs());
    const std::size_t nl = alpha_.size();
    CVector a(nl);
    CVector c(nl);
    for (std::size_t r = 0; r < n_rx_; ++r) {
      for (std::size_t l = 0; l < nl; ++l) a[l] = alpha_[l] * rx_[l * n_rx_ + r];
      for (std::size_t t = 0; t < n_tx_; ++t) {
        for (std::size_t l = 0; l < nl; ++l) c[l] = a[l] * tx_[l * n_tx_ + t];
        out[r * n_tx_ + t] = quadratic(c);
      }
    }
    return out;
  }

  /// Draw of ||h + e||^2 given gamma = ||h||^2, with e having n_taps i.i.d.
  /// CN(0, s2) entries: distributed as |sqrt(gamma) + z|^2 + s2 * Gamma(L-1, 1),
  /// z ~ CN(0, s2) (rotate h onto the first axis).
  static double noisy_draw(double gamma, int n_taps, double s2, Rng& rng) {
    if (s2 <= 0.0) return gamma;
    const double along = std::norm(std::sqrt(gamma) + complex_normal(rng, s2));
    if (n_taps <= 1) return along;
    std::gamma_distribution<double> rest(static_cast<double>(n_taps - 1), 1.0);
    return along + s2 * rest(rng);
  }

  /// Estimated gains for every pair; pair i draws from the stream derive_seed(seed, i).
  std::vector<double> noisy_gains(const TrainingConfig& trn, std::uint64_t seed) const {
    std::vector<double> g = gains();
    const double s2 = trn.tap_error_variance();
    for (std::size_t i = 0; i < g.size(); ++i) {
      Rng rng(derive_seed(seed, i));
      g[i] = noisy_draw(g[i], n_taps_, s2, rng);
    }
    return g;
  }

 private:
  struct GramEntry {
    std::size_t l;
    std::size_t m;
    double q;  // doubled off the diagonal
  };

  double gain_of(std::size_t r, std::size_t t) const {
    const std::size_t nl = alpha_.size();
    std::array<cplx, kMaxRays> local{};
    CVector heap;
    cplx* c = local.data();
    if (nl > local.size()) {
      heap.resize(nl);
      c = heap.data();
    }
    for (std::size_t l = 0; l < nl; ++l) c[l] = alpha_[l] * rx_[l * n_rx_ + r] * tx_[l * n_tx_ + t];
    return quadratic(c);
  }

  double quadratic(const CVector& c) const { return quadratic(c.data()); }

  double quadratic(const cplx* c) const {
    double s = 0.0;
    for (const auto& e : gram_) {
      s += e.l == e.m ? e.q * std::norm(c[e.l]) : e.q * (std::conj(c[e.l]) * c[e.m]).real();
    }
    return std::max(s, 0.0);
  }

  std::size_t n_rx_;
  std::size_t n_tx_;
  int n_taps_;
  std::string hash_;
  CVector alpha_;
  CVector rx_;  // [ray][rx beam]
  CVector tx_;  // [ray][tx beam], already conjugated: a_t^H f
  std::vector<GramEntry> gram_;
};

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Measured received power (mW) of every beam pair, indexed by pair_id.
struct SweepTable {
  std::size_t n_rx = 0;
  std::size_t n_tx = 0;
  std::vector<double> power_mw;
  std::string pair_space_hash;

  std::size_t size() const { return power_mw.size(); }
};

/// Reference sweep: effective_channel + measure_pair for every pair with the
/// per-pair stream derive_seed(seed, pair_id). Work is O(pairs * L).
inline SweepTable exhaustive_sweep(const ChannelInstance& ch, const Codebook& W, const Codebook& F,
                                   const PulseConfig& pulse, const TrainingConfig& trn,
                                   std::uint64_t seed, unsigned jobs = 1) {
  pulse.validate();
  trn.validate(pulse);
  SweepTable out{W.size(), F.size(), std::vector<double>(W.size() * F.size()), pair_space_hash(W, F)};
  const double pt = trn.tx_power_mw();
  parallel_for(out.power_mw.size(), jobs, [&](std::size_t i) {
    const auto pair = BeamPairIndex::from_id(i, W.size(), F.size());
    Rng rng(derive_seed(seed, i));
    out.power_mw[i] = pt * measure_pair(effective_channel(ch, pair, W, F, pulse), trn, rng);
  });
  return out;
}

/// Same contract as exhaustive_sweep, sampled through the beamspace form; its
/// per-pair values agree with the reference in distribution (and exactly when
/// noise_variance = 0).
inline SweepTable fast_sweep(const BeamspaceChannel& bs, const TrainingConfig& trn, std::uint64_t seed) {
  SweepTable out{bs.num_rx(), bs.num_tx(), bs.noisy_gains(trn, seed), bs.pair_space()};
  const double pt = trn.tx_power_mw();
  for (auto& p : out.power_mw) p *= pt;
  return out;
}

/// CSV with columns pair_id,rx_beam,tx_beam,power_dbm. `header` lines are
/// written first, each prefixed by "# ".
inline void write_sweep_csv(std::ostream& os, const SweepTable& t,
                            const std::vector<std::string>& header = {}) {
  for (const auto& h : header) os << "# " << h << '\n';
  os << "pair_id,rx_beam,tx_beam,power_dbm\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << fmt::format("{},{},{},{:.17g}\n", i, i / t.n_tx, i % t.n_tx, linear_to_db(t.power_mw[i]));
  }
}

/// One parsed sweep row: pair_id and received power in mW.
struct SweepEntry {
  std::size_t pair_id = 0;
  double power_mw = 0.0;
};

/// Parses a sweep CSV; rows may be partial and in any order. When n_tx > 0
/// every row must satisfy pair_id = rx_beam * n_tx + tx_beam.
inline std::vector<SweepEntry> read_sweep_csv(std::istream& is, std::size_t n_tx = 0) {
  std::vector<SweepEntry> rows;
  std::string line;
  bool header_seen = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "pair_id,rx_beam,tx_beam,power_dbm") {
        throw Error(fmt::format("sweep csv line {}: unexpected header '{}'", lineno, line));
      }
      header_seen = true;
      continue;
    }
    std::istringstream ss(line);
    std::string f[4];
    for (auto& x : f) {
      if (!std::getline(ss, x, ',')) throw Error(fmt::format("sweep csv line {}: expected 4 fields", lineno));
    }
    std::size_t id = 0, r = 0, tx = 0;
    double dbm = 0.0;
    try {
      id = std::stoull(f[0]);
      r = std::stoull(f[1]);
      tx = std::stoull(f[2]);
      dbm = std::stod(f[3]);
    } catch (const std::logic_error&) {
      throw Error(fmt::format("sweep csv line {}: malformed number", lineno));
    }
    if (n_tx > 0 && (tx >= n_tx || id != r * n_tx + tx)) {
      throw Error(fmt::format("sweep csv line {}: pair_id inconsistent with beam indices", lineno));
    }
    rows.push_back({id, db_to_linear(dbm)});
  }
  if (!header_seen) throw Error("sweep csv: missing header");
  return rows;
}

}  // namespace imfp
