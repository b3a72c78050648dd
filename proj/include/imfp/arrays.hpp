// SPDX-License-Identifier: Apache-2.0
//
// Uniform planar arrays: steering vectors, progressive-phase-shift codebooks
// tiled at the 3 dB beamwidth, and beamwidth approximations.
//
// Angles are in the array's local frame: theta is the polar angle measured
// from broadside (the array normal), phi the azimuth in the array plane
// measured from the x element axis.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imfp/common.hpp"

namespace imfp {

struct ArrayConfig {
  int n_x = 16;
  int n_y = 16;
  double d_x = 0.0025;  // m
  double d_y = 0.0025;  // m
  double wavelength = 0.005;  // m

  static ArrayConfig half_wavelength(int n_x, int n_y, double wavelength) {
    return {n_x, n_y, wavelength / 2.0, wavelength / 2.0, wavelength};
  }

  int size() const { return n_x * n_y; }

  void validate() const {
    if (n_x < 1 || n_y < 1) throw Error("array: element counts must be >= 1");
    if (!(d_x > 0.0) || !(d_y > 0.0)) throw Error("array: element spacing must be positive");
    if (!(wavelength > 0.0)) throw Error("array: wavelength must be positive");
  }

  friend bool operator==(const ArrayConfig&, const ArrayConfig&) = default;
};

struct Direction {
  double theta = 0.0;  // rad, from broadside
  double phi = 0.0;    // rad

  /// Unit vector in the local (x, y, normal) frame.
  Vec3 unit() const {
    return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
  }
};

/// Steering vector a(theta, phi). Entry (m, n) with y-index m outer and
/// x-index n inner is exp(j(m*Oy + n*Ox)) / sqrt(N_a).
inline CVector steering_vector(const ArrayConfig& cfg, double theta, double phi) {
  const double k = 2.0 * kPi / cfg.wavelength;
  const double omega_y = k * cfg.d_y * std::sin(theta) * std::sin(phi);
  const double omega_x = k * cfg.d_x * std::sin(theta) * std::cos(phi);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.size()));
  CVector a(static_cast<std::size_t>(cfg.size()));
  for (int m = 0; m < cfg.n_y; ++m) {
    for (int n = 0; n < cfg.n_x; ++n) {
      a[static_cast<std::size_t>(m * cfg.n_x + n)] = std::polar(scale, m * omega_y + n * omega_x);
    }
  }
  return a;
}

inline CVector steering_vector(const ArrayConfig& cfg, Direction d) {
  return steering_vector(cfg, d.theta, d.phi);
}

/// w^H a
inline cplx inner(const CVector& w, const CVector& a) {
  cplx acc{0.0, 0.0};
  for (std::size_t i = 0; i < w.size(); ++i) acc += std::conj(w[i]) * a[i];
  return acc;
}

/// Normalized beam gain |w^H a|^2 (1 for a matched unit-norm beam).
inline double beam_gain(const CVector& w, const CVector& a) { return std::norm(inner(w, a)); }

inline double vector_norm(const CVector& v) {
  double s = 0.0;
  for (const auto& x : v) s += std::norm(x);
  return std::sqrt(s);
}

/// 3 dB beamwidth of a half-wavelength ULA of sqrt(N_a) elements, the usual
/// azimuth approximation for a square array of N_a elements.
inline double ula_beamwidth(int n_elements) {
  if (n_elements < 1) throw Error("ula_beamwidth: n_elements must be >= 1");
  return 0.886 * 2.0 / std::sqrt(static_cast<double>(n_elements));
}

struct FieldOfView {
  double el_min = 0.0;
  double el_max = kPi / 2.0;
  double az_min = -kPi;
  double az_max = kPi;

  static FieldOfView hemisphere() { return {}; }

  bool full_azimuth() const { return az_max - az_min >= 2.0 * kPi - 1e-9; }

  bool contains(Direction d) const {
    if (d.theta < el_min - 1e-12 || d.theta > el_max + 1e-12) return false;
    if (full_azimuth()) return true;
    return d.phi >= az_min - 1e-12 && d.phi <= az_max + 1e-12;
  }

  void validate() const {
    if (!std::isfinite(el_min) || !std::isfinite(el_max) || !std::isfinite(az_min) ||
        !std::isfinite(az_max)) {
      throw Error("field of view: non-finite bound");
    }
    if (el_max < el_min || az_max < az_min) throw Error("field of view is empty");
    if (el_min < 0.0 || el_max > kPi) throw Error("field of view: elevation outside [0, pi]");
    if (el_max == el_min && az_max == az_min) {
      throw Error("field of view is degenerate");
    }
  }

  friend bool operator==(const FieldOfView&, const FieldOfView&) = default;
};

struct Beamwidth {
  double elevation = 0.0;  // rad
  double azimuth = 0.0;    // rad; 2*pi when no -3 dB crossing exists
};

/// A set of unit-norm beams. Beam b is applied as a combiner (w^H x) on
/// receive or beamformer (a^H f) on transmit; both are matched to the
/// steering vector of `directions[b]`.
struct Codebook {
  ArrayConfig array;
  FieldOfView fov;
  std::vector<CVector> beams;
  std::vector<Direction> directions;
  std::vector<Beamwidth> half_power_beamwidths;
  std::vector<int> row_of_beam;
  std::string hash;

  std::size_t size() const { return beams.size(); }

  /// Beam with the largest gain toward direction d (ties -> lower index).
  std::size_t best_beam(Direction d) const {
    const CVector a = steering_vector(array, d);
    std::size_t best = 0;
    double best_gain = -1.0;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const double g = beam_gain(beams[b], a);
      if (g > best_gain) {
        best_gain = g;
        best = b;
      }
    }
    return best;
  }
};

namespace detail {

/// First point in (start, stop] where f drops below 0.5, refined by bisection
/// to `tol`. Returns nullopt when f stays at or above 0.5 on the whole range.
inline std::optional<double> half_power_crossing(const std::function<double(double)>& f,
                                                 double start, double stop,
                                                 double tol = 1e-4, int scan_steps = 512) {
  double prev = start;
  for (int s = 1; s <= scan_steps; ++s) {
    const double x = start + (stop - start) * s / scan_steps;
    if (f(x) < 0.5) {
      double lo = prev;
      double hi = x;
      while (std::abs(hi - lo) > tol * 1e-2) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) >= 0.5 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    prev = x;
  }
  return std::nullopt;
}

inline std::string codebook_hash(const nlohmann::json& body) { return content_hash(body.dump()); }

}  // namespace detail

/// Gain of a beam steered at `center` toward `probe` (normalized, peak 1).
inline double pattern_gain(const ArrayConfig& cfg, Direction center, Direction probe) {
  return beam_gain(steering_vector(cfg, center), steering_vector(cfg, probe));
}

inline nlohmann::json codebook_body_json(const Codebook& cb);

/// Full -3 dB width of the elevation cut through a beam steered at
/// (theta, phi_ref); nullopt when the cut never drops 3 dB.
inline std::optional<double> elevation_beamwidth(const ArrayConfig& cfg, double theta,
                                                 double phi_ref) {
  auto cut = [&](double t) { return pattern_gain(cfg, {theta, phi_ref}, {t, phi_ref}); };
  const auto hi = detail::half_power_crossing(cut, theta, theta + kPi / 2.0);
  const auto lo = detail::half_power_crossing(cut, theta, theta - kPi / 2.0);
  if (!hi || !lo) return std::nullopt;
  return *hi - *lo;
}

/// Full -3 dB width of the azimuth cut (constant theta) through a beam steered
/// at (theta, phi_ref); nullopt at broadside or when the cut never drops 3 dB.
inline std::optional<double> azimuth_beamwidth(const ArrayConfig& cfg, double theta,
                                               double phi_ref) {
  if (std::sin(theta) <= 1e-12) return std::nullopt;
  auto around = [&](double p) { return pattern_gain(cfg, {theta, phi_ref}, {theta, phi_ref + p}); };
  const auto half = detail::half_power_crossing(around, 0.0, kPi);
  if (!half) return std::nullopt;
  return 2.0 * *half;
}

/// Progressive-phase-shift codebook. Elevation rows are placed first, starting
/// at the lower elevation limit, each next row one local elevation beamwidth
/// above the previous (measured on the cut at the middle azimuth of the field
/// of view); a final row is pinned to the upper limit when the last row sits
/// more than half a beamwidth below it. Each row is then tiled in azimuth with
/// that row's azimuth beamwidth; odd rows are offset by half a spacing on
/// full-circle rows. Beams are ordered row-major by (elevation row, azimuth
/// index).
inline Codebook build_codebook(const ArrayConfig& cfg, const FieldOfView& fov) {
  cfg.validate();
  fov.validate();
  const double phi_ref = fov.full_azimuth() ? 0.0 : 0.5 * (fov.az_min + fov.az_max);

  std::vector<double> rows{fov.el_min};
  std::vector<double> row_el_width;
  for (;;) {
    const double c = rows.back();
    const auto w = elevation_beamwidth(cfg, c, phi_ref);
    row_el_width.push_back(w ? *w : 2.0 * kPi);
    if (!w || fov.el_max <= fov.el_min) break;
    const double next = c + *w;
    if (next >= fov.el_max - 1e-9) {
      if (fov.el_max - c > 0.5 * *w) rows.push_back(fov.el_max);
      else break;
    } else {
      rows.push_back(next);
    }
    if (rows.back() >= fov.el_max - 1e-9) {
      const auto last = elevation_beamwidth(cfg, rows.back(), phi_ref);
      row_el_width.push_back(last ? *last : 2.0 * kPi);
      break;
    }
  }

  Codebook cb;
  cb.array = cfg;
  cb.fov = fov;
  const double az_span = fov.az_max - fov.az_min;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double theta = rows[r];
    const double el_width = row_el_width[r];
    const double az_width = azimuth_beamwidth(cfg, theta, phi_ref).value_or(2.0 * kPi);

    std::vector<double> azimuths;
    if (az_width >= 2.0 * kPi || az_span <= 0.0) {
      azimuths.push_back(phi_ref);
    } else if (fov.full_azimuth()) {
      const auto count = static_cast<int>(std::ceil(2.0 * kPi / az_width - 1e-9));
      const double step = 2.0 * kPi / count;
      const double offset = (r % 2 == 1) ? 0.5 * step : 0.0;
      for (int j = 0; j < count; ++j) azimuths.push_back(fov.az_min + offset + j * step);
    } else {
      const auto gaps = static_cast<int>(std::ceil(az_span / az_width - 1e-9));
      for (int j = 0; j <= gaps; ++j) azimuths.push_back(fov.az_min + az_span * j / gaps);
    }

    for (double phi : azimuths) {
      cb.directions.push_back({theta, phi});
      cb.beams.push_back(steering_vector(cfg, theta, phi));
      cb.half_power_beamwidths.push_back({el_width, az_width});
      cb.row_of_beam.push_back(static_cast<int>(r));
    }
  }
  cb.hash = detail::codebook_hash(codebook_body_json(cb));
  return cb;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ArrayConfig& a) {
  return {{"n_x", a.n_x}, {"n_y", a.n_y}, {"d_x", a.d_x}, {"d_y", a.d_y},
          {"wavelength", a.wavelength}};
}

inline nlohmann::json to_json(const FieldOfView& f) {
  return {{"el_min", f.el_min}, {"el_max", f.el_max}, {"az_min", f.az_min}, {"az_max", f.az_max}};
}

inline nlohmann::json codebook_body_json(const Codebook& cb) {
  nlohmann::json beams = nlohmann::json::array();
  for (std::size_t b = 0; b < cb.size(); ++b) {
    nlohmann::json w = nlohmann::json::array();
    for (const auto& x : cb.beams[b]) {
      w.push_back(x.real());
      w.push_back(x.imag());
    }
    beams.push_back({{"theta", cb.directions[b].theta},
                     {"phi", cb.directions[b].phi},
                     {"bw_el", cb.half_power_beamwidths[b].elevation},
                     {"bw_az", cb.half_power_beamwidths[b].azimuth},
                     {"row", cb.row_of_beam[b]},
                     {"weights", std::move(w)}});
  }
  return {{"array", to_json(cb.array)}, {"fov", to_json(cb.fov)}, {"beams", std::move(beams)}};
}

inline nlohmann::json to_json(const Codebook& cb) {
  auto j = codebook_body_json(cb);
  j["content_hash"] = cb.hash;
  return j;
}

/// Parses a codebook document; the stored hash must match the content.
inline Codebook codebook_from_json(const nlohmann::json& j) {
  Codebook cb;
  const auto& a = j.at("array");
  cb.array = {a.at("n_x").get<int>(), a.at("n_y").get<int>(), a.at("d_x").get<double>(),
              a.at("d_y").get<double>(), a.at("wavelength").get<double>()};
  const auto& f = j.at("fov");
  cb.fov = {f.at("el_min").get<double>(), f.at("el_max").get<double>(),
            f.at("az_min").get<double>(), f.at("az_max").get<double>()};
  for (const auto& b : j.at("beams")) {
    cb.directions.push_back({b.at("theta").get<double>(), b.at("phi").get<double>()});
    cb.half_power_beamwidths.push_back({b.at("bw_el").get<double>(), b.at("bw_az").get<double>()});
    cb.row_of_beam.push_back(b.at("row").get<int>());
    const auto& w = b.at("weights");
    CVector v(w.size() / 2);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = {w[2 * i].get<double>(), w[2 * i + 1].get<double>()};
    cb.beams.push_back(std::move(v));
  }
  cb.hash = detail::codebook_hash(codebook_body_json(cb));
  if (j.contains("content_hash") && j.at("content_hash").get<std::string>() != cb.hash) {
    throw Error("codebook: content_hash does not match the document");
  }
  return cb;
}

/// Hash identifying a (receive, transmit) codebook pair, i.e. a beam-pair space.
inline std::string pair_space_hash(const Codebook& rx, const Codebook& tx) {
  return content_hash(rx.hash + ":" + tx.hash);
}

}  // namespace imfp
