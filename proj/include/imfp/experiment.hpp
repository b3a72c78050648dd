// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and the end-to-end pipelines driven by the CLI:
// channel generation, database construction, cross-validated evaluation,
// overhead tables, and online collection runs.
//
// Configuration is one JSON document. User documents are merged over the
// defaults; unknown fields and type errors are reported with their dotted
// path. Angles in the document are degrees, times microseconds.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imfp/arrays.hpp"
#include "imfp/common.hpp"
#include "imfp/evaluation.hpp"
#include "imfp/fingerprints.hpp"
#include "imfp/linksim.hpp"
#include "imfp/online.hpp"
#include "imfp/parallel.hpp"
#include "imfp/propagation.hpp"
#include "imfp/selection.hpp"

namespace imfp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Defaults and document handling
// ---------------------------------------------------------------------------

inline json default_config_json() {
  return json::parse(R"J({
  "seed": 1,
  "output_dir": "out",
  "carrier_frequency_hz": 60e9,
  "arrays": {"rsu": {"n_x": 16, "n_y": 16}, "cv": {"n_x": 16, "n_y": 16}},
  "codebook": {
    "rsu_fov_deg": {"el_min": 0, "el_max": 90, "az_min": -180, "az_max": 180},
    "cv_fov_deg": {"el_min": 0, "el_max": 90, "az_min": -180, "az_max": 180}
  },
  "traffic": {
    "kappa": 6, "mu_zeta": 0.209, "car_truck_ratio": [3, 2],
    "car_dims": [1.8, 5.0, 1.5], "truck_dims": [2.5, 12.0, 3.8],
    "lane_offsets": [1.75, -1.75]
  },
  "canyon": {
    "wall_left_y": 10, "wall_right_y": -10, "building_height": 30,
    "road_min_x": -40, "road_max_x": 100,
    "rsu_pos": [0, -6, 7], "cv_antenna_height": 1.5, "cv_lane": 0,
    "wall": {"rel_permittivity": 5.31, "conductivity": 0.8967, "roughness_rms_m": 0.0002},
    "ground": {"rel_permittivity": 3.18, "conductivity": 0.3338, "roughness_rms_m": 0.00034}
  },
  "rays": {"max_bounces": 2, "l_p": 25},
  "bins": [{"bin_id": 0, "center": 30, "half_width": 2.5}],
  "instances_per_bin": 500,
  "pulse": {"bandwidth_hz": 1.76e9, "rolloff": 0.1, "channel_length": 512, "window_symbols": 8},
  "training": {"seq_length": 512, "noise_variance_mw": null},
  "eirp_dbm": [24],
  "database": {"m_kept": 100, "noiseless": false, "eirp_dbm": 24},
  "evaluation": {
    "folds": 10, "n_b_max": 50, "include_full_budget": false,
    "methods": ["avgpow", "minmisprob", "position_only"],
    "c_db": [0, 1, 3], "noiseless": true, "rate_eirp_dbm": 24,
    "speed_mps": 20, "ppl_target": 0.01, "ppl_target_c_db": 3
  },
  "overhead": {
    "array_sizes": [8, 16, 24, 32], "speeds_mps": [10, 15, 20],
    "d_reflector_m": 12, "alpha_deg": 60, "t_qo_us": 26.8, "t_sec_us": 5.0,
    "n_fp_ref": 30, "n_a_ref": 256
  },
  "online": {
    "runs": 500, "n_init": 5, "keep": 200, "n_b": 50, "eirp_dbm": 24,
    "bootstrap_noise_variance_mw": null, "smoothing_window": 10,
    "c_db": 3, "trajectory_runs": 20,
    "schedules": [
      {"name": "balanced", "r_init": 0.4, "decay": 0.0003, "eps": 0.2},
      {"name": "fixed_exploit_10", "n_exploit": 10},
      {"name": "fixed_exploit_50", "n_exploit": 50}
    ]
  }
})J");
}

namespace detail {

/// Merges `user` over `base`; objects merge key by key, everything else is
/// replaced. Keys absent from `base` are rejected.
inline void merge_into(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw Error(fmt::format("config: {} must be an object", path.empty() ? "<root>" : path));
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw Error(fmt::format("config: unknown field '{}'", p));
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) merge_into(slot, it.value(), p);
    else slot = it.value();
  }
}

/// Navigates a dotted path (numeric segments index arrays) for writing.
inline json& at_path(json& doc, const std::string& dotted) {
  json* cur = &doc;
  std::stringstream ss(dotted);
  std::string seg;
  std::string walked;
  while (std::getline(ss, seg, '.')) {
    walked += (walked.empty() ? "" : ".") + seg;
    if (cur->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(seg);
      } catch (const std::logic_error&) {
        throw Error(fmt::format("config: '{}' indexes an array with a non-number", walked));
      }
      if (idx >= cur->size()) throw Error(fmt::format("config: index out of range at '{}'", walked));
      cur = &(*cur)[idx];
    } else if (cur->is_object()) {
      if (!cur->contains(seg)) throw Error(fmt::format("config: unknown field '{}'", walked));
      cur = &(*cur)[seg];
    } else {
      throw Error(fmt::format("config: '{}' is not an object or array", walked));
    }
  }
  return *cur;
}

}  // namespace detail

/// Applies `path=value`; the value is parsed as JSON when possible, otherwise
/// taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(fmt::format("override '{}' is not path=value", assignment));
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  detail::at_path(doc, path) = value;
}

// ---------------------------------------------------------------------------
// Typed configuration
// ---------------------------------------------------------------------------

struct ScheduleSpec {
  std::string name;
  std::optional<std::size_t> n_exploit;  // fixed split when set
  double r_init = 0.4;
  double decay = 0.0003;
  double eps = 0.2;

  OnlineSchedule schedule(std::size_t n_b) const {
    if (n_exploit) return OnlineSchedule::fixed_exploit(*n_exploit, n_b);
    return {r_init, decay, eps, n_b};
  }
};

struct ExperimentConfig {
  json doc;  // merged document; the canonical serialized form
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  double carrier_frequency = 60e9;
  ArrayConfig rsu_array;
  ArrayConfig cv_array;
  FieldOfView rsu_fov;
  FieldOfView cv_fov;
  TrafficConfig traffic;
  CanyonConfig canyon;
  int max_bounces = 2;
  std::size_t l_p = 25;
  std::vector<LocationBin> bins;
  std::size_t instances_per_bin = 500;
  PulseConfig pulse;
  int seq_length = 512;
  double noise_variance_mw = 0.0;
  std::vector<double> eirp_dbm;
  std::size_t m_kept = 100;
  bool db_noiseless = false;
  double db_eirp_dbm = 24.0;
  std::size_t folds = 10;
  std::size_t n_b_max = 50;
  bool include_full_budget = false;
  std::vector<std::string> methods;
  std::vector<double> c_db;
  bool eval_noiseless = true;
  double rate_eirp_dbm = 24.0;
  double eval_speed = 20.0;
  double ppl_target = 0.01;
  double ppl_target_c_db = 3.0;
  std::vector<int> overhead_sizes;
  std::vector<double> overhead_speeds;
  MobilityConfig mobility;
  OverheadModel overhead_model;
  double n_fp_ref = 30.0;
  double n_a_ref = 256.0;
  std::size_t online_runs = 500;
  std::size_t online_n_init = 5;
  std::size_t online_keep = 200;
  std::size_t online_n_b = 50;
  double online_eirp_dbm = 24.0;
  std::optional<double> bootstrap_noise_variance_mw;
  std::size_t smoothing_window = 10;
  double online_c_db = 3.0;
  std::size_t trajectory_runs = 20;
  std::vector<ScheduleSpec> schedules;

  /// Hash of the document minus output_dir, so relocated reruns match.
  std::string hash() const {
    json d = doc;
    d.erase("output_dir");
    return content_hash(d.dump());
  }

  /// Training configuration at a given EIRP for the CV transmit array.
  TrainingConfig training(double eirp) const {
    return {seq_length, noise_variance_mw, tx_power_for_eirp(eirp, cv_array.size())};
  }
  TrainingConfig noiseless_training() const { return {seq_length, 0.0, 0.0}; }
  double noise_power_dbm_value() const { return linear_to_db(noise_variance_mw); }
};

namespace detail {

/// Typed access with field-path diagnostics.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  const json& node(const std::string& path) const {
    const json* cur = &doc_;
    std::stringstream ss(path);
    std::string seg;
    while (std::getline(ss, seg, '.')) {
      if (cur->is_array()) cur = &cur->at(std::stoul(seg));
      else if (cur->is_object() && cur->contains(seg)) cur = &(*cur)[seg];
      else throw Error(fmt::format("config: missing field '{}'", path));
    }
    return *cur;
  }

  template <class T>
  T get(const std::string& path) const {
    const json& n = node(path);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!n.is_number()) throw Error("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!n.is_number_integer()) throw Error("");
        if constexpr (std::is_unsigned_v<T>) {
          if (n.get<std::int64_t>() < 0) throw Error("");
        }
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!n.is_boolean()) throw Error("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!n.is_string()) throw Error("");
      }
      return n.get<T>();
    } catch (const std::exception&) {
      throw Error(fmt::format("config: field '{}' has the wrong type ({})", path, n.dump()));
    }
  }

  template <class T>
  std::vector<T> list(const std::string& path) const {
    const json& n = node(path);
    if (!n.is_array()) throw Error(fmt::format("config: field '{}' must be an array", path));
    std::vector<T> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(get<T>(path + "." + std::to_string(i)));
    return out;
  }

  template <class T>
  std::optional<T> optional(const std::string& path) const {
    if (node(path).is_null()) return std::nullopt;
    return get<T>(path);
  }

  void require(bool ok, const std::string& path, const std::string& what) const {
    if (!ok) throw Error(fmt::format("config: field '{}' {}", path, what));
  }

 private:
  const json& doc_;
};

inline double deg(double d) { return d * kPi / 180.0; }

inline FieldOfView read_fov(const Reader& r, const std::string& p) {
  FieldOfView f{deg(r.get<double>(p + ".el_min")), deg(r.get<double>(p + ".el_max")),
                deg(r.get<double>(p + ".az_min")), deg(r.get<double>(p + ".az_max"))};
  try {
    f.validate();
  } catch (const Error& e) {
    throw Error(fmt::format("config: field '{}': {}", p, e.what()));
  }
  return f;
}

inline Material read_material(const Reader& r, const std::string& p, double wavelength) {
  Material m{r.get<double>(p + ".rel_permittivity"), r.get<double>(p + ".conductivity"),
             rayleigh_roughness_loss_db(r.get<double>(p + ".roughness_rms_m"), wavelength)};
  r.require(m.rel_permittivity >= 1.0, p + ".rel_permittivity", "must be >= 1");
  r.require(m.conductivity >= 0.0, p + ".conductivity", "must be >= 0");
  r.require(r.get<double>(p + ".roughness_rms_m") >= 0.0, p + ".roughness_rms_m", "must be >= 0");
  return m;
}

inline VehicleDims read_dims(const Reader& r, const std::string& p) {
  const auto v = r.list<double>(p);
  r.require(v.size() == 3, p, "must hold [width, length, height]");
  r.require(v[0] > 0 && v[1] > 0 && v[2] > 0, p, "must be positive");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

/// Validates a merged document and produces the typed configuration.
inline ExperimentConfig config_from_json(const json& merged) {
  detail::Reader r(merged);
  ExperimentConfig c;
  c.doc = merged;
  c.seed = r.get<std::uint64_t>("seed");
  c.output_dir = r.get<std::string>("output_dir");
  c.carrier_frequency = r.get<double>("carrier_frequency_hz");
  r.require(c.carrier_frequency > 0, "carrier_frequency_hz", "must be > 0");
  const double lambda = kSpeedOfLight / c.carrier_frequency;
  for (const char* side : {"rsu", "cv"}) {
    const std::string p = std::string("arrays.") + side;
    const int nx = r.get<int>(p + ".n_x");
    const int ny = r.get<int>(p + ".n_y");
    r.require(nx >= 1 && ny >= 1, p, "element counts must be >= 1");
    (std::string(side) == "rsu" ? c.rsu_array : c.cv_array) = ArrayConfig::half_wavelength(nx, ny, lambda);
  }
  c.rsu_fov = detail::read_fov(r, "codebook.rsu_fov_deg");
  c.cv_fov = detail::read_fov(r, "codebook.cv_fov_deg");

  c.traffic.kappa = r.get<int>("traffic.kappa");
  r.require(c.traffic.kappa >= 1, "traffic.kappa", "must be >= 1");
  c.traffic.mu_zeta = r.get<double>("traffic.mu_zeta");
  r.require(c.traffic.mu_zeta > 0, "traffic.mu_zeta", "must be > 0");
  const auto ratio = r.list<double>("traffic.car_truck_ratio");
  r.require(ratio.size() == 2 && ratio[0] >= 0 && ratio[1] >= 0 && ratio[0] + ratio[1] > 0,
            "traffic.car_truck_ratio", "must be two non-negative weights, not both zero");
  c.traffic.car_truck_ratio = {ratio[0], ratio[1]};
  c.traffic.car_dims = detail::read_dims(r, "traffic.car_dims");
  c.traffic.truck_dims = detail::read_dims(r, "traffic.truck_dims");
  c.traffic.lane_offsets = r.list<double>("traffic.lane_offsets");
  r.require(!c.traffic.lane_offsets.empty(), "traffic.lane_offsets", "must not be empty");

  auto& cy = c.canyon;
  cy.wall_left_y = r.get<double>("canyon.wall_left_y");
  cy.wall_right_y = r.get<double>("canyon.wall_right_y");
  r.require(cy.wall_left_y > cy.wall_right_y, "canyon.wall_left_y", "must exceed canyon.wall_right_y");
  cy.building_height = r.get<double>("canyon.building_height");
  r.require(cy.building_height > 0, "canyon.building_height", "must be > 0");
  cy.road_min_x = r.get<double>("canyon.road_min_x");
  cy.road_max_x = r.get<double>("canyon.road_max_x");
  r.require(cy.road_max_x > cy.road_min_x, "canyon.road_max_x", "must exceed canyon.road_min_x");
  const auto rsu = r.list<double>("canyon.rsu_pos");
  r.require(rsu.size() == 3, "canyon.rsu_pos", "must hold [x, y, z]");
  cy.rsu_pos = {rsu[0], rsu[1], rsu[2]};
  cy.cv_antenna_height = r.get<double>("canyon.cv_antenna_height");
  cy.cv_lane = r.get<std::size_t>("canyon.cv_lane");
  r.require(cy.cv_lane < c.traffic.lane_offsets.size(), "canyon.cv_lane", "must index traffic.lane_offsets");
  cy.wall_material = detail::read_material(r, "canyon.wall", lambda);
  cy.ground_material = detail::read_material(r, "canyon.ground", lambda);
  cy.carrier_frequency = c.carrier_frequency;

  c.max_bounces = r.get<int>("rays.max_bounces");
  r.require(c.max_bounces >= 0 && c.max_bounces <= 2, "rays.max_bounces", "must be 0, 1 or 2");
  c.l_p = r.get<std::size_t>("rays.l_p");
  r.require(c.l_p >= 1 && c.l_p <= kMaxRays, "rays.l_p", "must lie in [1, 25]");

  const json& bins = r.node("bins");
  r.require(bins.is_array() && !bins.empty(), "bins", "must be a non-empty array");
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const std::string p = "bins." + std::to_string(i);
    LocationBin b{r.get<int>(p + ".bin_id"), r.get<double>(p + ".center"), r.get<double>(p + ".half_width")};
    r.require(b.half_width > 0, p + ".half_width", "must be > 0");
    for (const auto& o : c.bins) r.require(o.bin_id != b.bin_id, p + ".bin_id", "must be unique");
    c.bins.push_back(b);
  }
  c.instances_per_bin = r.get<std::size_t>("instances_per_bin");

  c.pulse = {r.get<double>("pulse.bandwidth_hz"), r.get<double>("pulse.rolloff"), r.get<int>("pulse.channel_length"),
             r.get<int>("pulse.window_symbols")};
  r.require(c.pulse.bandwidth > 0, "pulse.bandwidth_hz", "must be > 0");
  r.require(c.pulse.rolloff >= 0 && c.pulse.rolloff <= 1, "pulse.rolloff", "must lie in [0, 1]");
  r.require(c.pulse.channel_length >= 1, "pulse.channel_length", "must be >= 1");
  r.require(c.pulse.window_symbols >= 1, "pulse.window_symbols", "must be >= 1");
  c.seq_length = r.get<int>("training.seq_length");
  r.require(c.seq_length >= c.pulse.channel_length, "training.seq_length", "must be >= pulse.channel_length");
  c.noise_variance_mw = r.optional<double>("training.noise_variance_mw")
                            .value_or(db_to_linear(noise_power_dbm(c.pulse.bandwidth)));
  r.require(c.noise_variance_mw >= 0, "training.noise_variance_mw", "must be >= 0");

  c.eirp_dbm = r.list<double>("eirp_dbm");
  c.m_kept = r.get<std::size_t>("database.m_kept");
  r.require(c.m_kept >= 1, "database.m_kept", "must be >= 1");
  c.db_noiseless = r.get<bool>("database.noiseless");
  c.db_eirp_dbm = r.get<double>("database.eirp_dbm");

  c.folds = r.get<std::size_t>("evaluation.folds");
  r.require(c.folds >= 2, "evaluation.folds", "must be >= 2");
  c.n_b_max = r.get<std::size_t>("evaluation.n_b_max");
  r.require(c.n_b_max >= 1, "evaluation.n_b_max", "must be >= 1");
  c.include_full_budget = r.get<bool>("evaluation.include_full_budget");
  c.methods = r.list<std::string>("evaluation.methods");
  for (std::size_t i = 0; i < c.methods.size(); ++i) {
    try {
      method_from_string(c.methods[i]);
    } catch (const Error& e) {
      throw Error(fmt::format("config: field 'evaluation.methods.{}': {}", i, e.what()));
    }
  }
  c.c_db = r.list<double>("evaluation.c_db");
  for (double v : c.c_db) r.require(v >= 0, "evaluation.c_db", "thresholds must be >= 0 dB");
  c.eval_noiseless = r.get<bool>("evaluation.noiseless");
  c.rate_eirp_dbm = r.get<double>("evaluation.rate_eirp_dbm");
  c.eval_speed = r.get<double>("evaluation.speed_mps");
  r.require(c.eval_speed > 0, "evaluation.speed_mps", "must be > 0");
  c.ppl_target = r.get<double>("evaluation.ppl_target");
  c.ppl_target_c_db = r.get<double>("evaluation.ppl_target_c_db");

  c.overhead_sizes = r.list<int>("overhead.array_sizes");
  for (int s : c.overhead_sizes) r.require(s >= 1, "overhead.array_sizes", "entries must be >= 1");
  c.overhead_speeds = r.list<double>("overhead.speeds_mps");
  for (double v : c.overhead_speeds) r.require(v > 0, "overhead.speeds_mps", "entries must be > 0");
  c.mobility = {20.0, r.get<double>("overhead.d_reflector_m"), detail::deg(r.get<double>("overhead.alpha_deg"))};
  r.require(c.mobility.d_reflector > 0, "overhead.d_reflector_m", "must be > 0");
  r.require(c.mobility.alpha > 0 && c.mobility.alpha <= kPi / 2 + 1e-12, "overhead.alpha_deg", "must lie in (0, 90]");
  c.overhead_model.t_qo = r.get<double>("overhead.t_qo_us") * 1e-6;
  c.overhead_model.t_sec = r.get<double>("overhead.t_sec_us") * 1e-6;
  r.require(c.overhead_model.t_qo > 0, "overhead.t_qo_us", "must be > 0");
  r.require(c.overhead_model.t_sec > 0, "overhead.t_sec_us", "must be > 0");
  c.n_fp_ref = r.get<double>("overhead.n_fp_ref");
  c.n_a_ref = r.get<double>("overhead.n_a_ref");
  r.require(c.n_fp_ref >= 1, "overhead.n_fp_ref", "must be >= 1");
  r.require(c.n_a_ref >= 1, "overhead.n_a_ref", "must be >= 1");

  c.online_runs = r.get<std::size_t>("online.runs");
  c.online_n_init = r.get<std::size_t>("online.n_init");
  r.require(c.online_n_init >= 1, "online.n_init", "must be >= 1");
  c.online_keep = r.get<std::size_t>("online.keep");
  r.require(c.online_keep >= 1, "online.keep", "must be >= 1");
  c.online_n_b = r.get<std::size_t>("online.n_b");
  r.require(c.online_n_b >= 1, "online.n_b", "must be >= 1");
  c.online_eirp_dbm = r.get<double>("online.eirp_dbm");
  c.bootstrap_noise_variance_mw = r.optional<double>("online.bootstrap_noise_variance_mw");
  c.smoothing_window = r.get<std::size_t>("online.smoothing_window");
  r.require(c.smoothing_window >= 1, "online.smoothing_window", "must be >= 1");
  c.online_c_db = r.get<double>("online.c_db");
  c.trajectory_runs = r.get<std::size_t>("online.trajectory_runs");
  const json& sch = r.node("online.schedules");
  r.require(sch.is_array() && !sch.empty(), "online.schedules", "must be a non-empty array");
  for (std::size_t i = 0; i < sch.size(); ++i) {
    const std::string p = "online.schedules." + std::to_string(i);
    ScheduleSpec s;
    s.name = r.get<std::string>(p + ".name");
    if (sch[i].contains("n_exploit")) {
      s.n_exploit = r.get<std::size_t>(p + ".n_exploit");
      r.require(*s.n_exploit <= c.online_n_b, p + ".n_exploit", "must be <= online.n_b");
    } else {
      s.r_init = r.get<double>(p + ".r_init");
      s.decay = r.get<double>(p + ".decay");
      s.eps = r.get<double>(p + ".eps");
      try {
        s.schedule(c.online_n_b).validate();
      } catch (const Error& e) {
        throw Error(fmt::format("config: field '{}': {}", p, e.what()));
      }
    }
    c.schedules.push_back(s);
  }
  return c;
}

/// Defaults, then the optional user document, then dotted overrides.
inline ExperimentConfig load_config(const std::optional<json>& user, const std::vector<std::string>& overrides = {}) {
  json doc = default_config_json();
  if (user) detail::merge_into(doc, *user, "");
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

inline ExperimentConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::optional<json> user;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open config file '{}'", path));
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(fmt::format("config file '{}': {}", path, e.what()));
    }
  }
  return load_config(user, overrides);
}

// ---------------------------------------------------------------------------
// Artifact writing
// ---------------------------------------------------------------------------

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp));
    out << content;
    out.flush();
    if (!out) throw Error(fmt::format("write failed for '{}'", tmp));
  }
  std::filesystem::rename(tmp, path);
}

inline std::string provenance_header(const ExperimentConfig& c) {
  return fmt::format("# config_hash={} seed={}\n", c.hash(), c.seed);
}

/// Column documentation for every CSV artifact.
inline json output_schema() {
  return json::parse(R"J({
  "channels_bin<id>.jsonl": {"seed": "instance seed", "d_l": "CV longitudinal position, m",
    "los_blocked": "direct path obstructed", "rays[].gain_re/gain_im": "complex amplitude, linear, 0 dBm / 0 dBi",
    "rays[].delay": "s", "rays[].aoa_theta/aoa_phi/aod_theta/aod_phi": "rad, local array frames",
    "rays[].bounce_count": "reflections"},
  "sweep_*.csv": {"pair_id": "rx_beam * |F| + tx_beam", "rx_beam": "RSU beam index", "tx_beam": "CV beam index",
    "power_dbm": "measured received power, dBm"},
  "eval_ppl.csv": {"method": "selection method", "n_b": "beam pairs trained", "c_db": "loss threshold, dB",
    "eirp_dbm": "EIRP, dBm; inf marks the noiseless evaluation", "prob": "power-loss probability",
    "n_test": "test instances"},
  "eval_rate.csv": {"method": "selection method", "n_b": "beam pairs trained", "eirp_dbm": "EIRP, dBm; inf = noiseless",
    "avg_rate": "mean instantaneous rate, bit/s/Hz", "perfect_rate": "mean rate of the best pair, bit/s/Hz",
    "avg_rate_overhead": "avg_rate scaled by max(0, 1 - n_b T_sec / T_B), bit/s/Hz", "n_test": "test instances"},
  "overhead.csv": {"n_a": "array elements", "speed_mps": "m/s", "t_11ad_us": "two-level sweep duration, us",
    "n_fp": "fingerprint training budget", "t_fp_us": "fingerprint training duration, us",
    "t_b_ms": "beam coherence time, ms", "exceeds": "1 when t_11ad > T_B",
    "rate_factor_11ad": "max(0, 1 - t_11ad / T_B)", "rate_factor_fp": "max(0, 1 - t_fp / T_B)"},
  "online_trajectory.csv": {"run_id": "replication", "t": "vehicle index", "n_explore": "exploration pairs",
    "chosen_pair": "pair used by the vehicle", "power_loss_db": "loss of the chosen pair, dB",
    "smoothed": "1 when power_loss_db is the moving average over the smoothing window"},
  "online_summary.csv": {"schedule": "schedule name", "t": "vehicle index",
    "p_loss": "fraction of runs with loss above online.c_db", "p_loss_smoothed": "moving average of p_loss"},
  "plot_*.csv": {"note": "per-plot slices of eval_*.csv and overhead.csv"}
})J");
}

// ---------------------------------------------------------------------------
// World: codebooks and propagation settings derived from a configuration
// ---------------------------------------------------------------------------

struct World {
  Codebook rsu;  // receive codebook W
  Codebook cv;   // transmit codebook F
  std::string pair_space;

  std::size_t num_pairs() const { return rsu.size() * cv.size(); }
};

inline World make_world(const ExperimentConfig& c) {
  World w{build_codebook(c.rsu_array, c.rsu_fov), build_codebook(c.cv_array, c.cv_fov), {}};
  w.pair_space = pair_space_hash(w.rsu, w.cv);
  return w;
}

/// Independent seed streams of one experiment.
enum class Stream : std::uint64_t { channels = 1, database = 2, measurement = 3, folds = 4, online = 5 };

inline std::uint64_t stream_seed(std::uint64_t root, Stream s) {
  return derive_seed(root, static_cast<std::uint64_t>(s));
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

inline ChannelInstance generate_instance(const ExperimentConfig& c, const TrafficConfig& traffic,
                                         const LocationBin& bin, std::uint64_t seed) {
  Rng rng(seed);
  const Scene s = generate_scene(traffic, c.canyon, bin.center, bin.half_width, rng);
  ChannelInstance ch = trace_rays(s, c.max_bounces, c.l_p);
  ch.seed = seed;
  return ch;
}

/// `count` instances of a bin; instance i uses seed derive_seed(bin stream, i).
inline std::vector<ChannelInstance> generate_channels(const ExperimentConfig& c, const TrafficConfig& traffic,
                                                      const LocationBin& bin, std::size_t count,
                                                      unsigned jobs = 1) {
  const std::uint64_t base = derive_seed(stream_seed(c.seed, Stream::channels), static_cast<std::uint64_t>(bin.bin_id));
  std::vector<ChannelInstance> out(count);
  parallel_for(count, jobs, [&](std::size_t i) { out[i] = generate_instance(c, traffic, bin, derive_seed(base, i)); });
  return out;
}

/// RSU and CV positions of an instance, recovered from its CV position.
inline Scene positions_scene(const ExperimentConfig& c, double d_l) {
  Scene s;
  s.rsu_pos = c.canyon.rsu_pos;
  s.cv_pos = Vec3{d_l, c.traffic.lane_offsets[c.canyon.cv_lane], c.canyon.cv_antenna_height};
  s.carrier_frequency = c.carrier_frequency;
  s.cv_longitudinal = d_l;
  return s;
}

// ---------------------------------------------------------------------------
// Databases
// ---------------------------------------------------------------------------

/// A noise condition: noiseless, or measurements at an EIRP.
struct NoiseSetting {
  bool noiseless = true;
  double eirp_dbm = std::numeric_limits<double>::infinity();

  double label_eirp() const { return noiseless ? std::numeric_limits<double>::infinity() : eirp_dbm; }
};

inline TrainingConfig training_for(const ExperimentConfig& c, const NoiseSetting& s) {
  return s.noiseless ? c.noiseless_training() : c.training(s.eirp_dbm);
}

/// Full sweep of an instance under a noise setting.
inline SweepTable sweep_instance(const ExperimentConfig& c, const World& w, const ChannelInstance& ch,
                                 const NoiseSetting& s, std::uint64_t seed) {
  const BeamspaceChannel bs(ch, w.rsu, w.cv, c.pulse);
  return fast_sweep(bs, training_for(c, s), seed);
}

/// Top-M observation of each instance (one Type A row per instance).
inline std::vector<ObservationA> observe_all(const ExperimentConfig& c, const World& w,
                                             const std::vector<ChannelInstance>& data, const NoiseSetting& s,
                                             std::uint64_t seed, unsigned jobs = 1) {
  std::vector<ObservationA> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const auto sweep = sweep_instance(c, w, data[i], s, derive_seed(seed, i));
    out[i] = {top_m(sweep.power_mw, c.m_kept), data[i].seed};
  });
  return out;
}

inline FingerprintDbA db_from_observations(const ExperimentConfig& c, const World& w, const LocationBin& bin,
                                           const std::vector<ObservationA>& obs,
                                           const std::vector<std::size_t>& subset) {
  FingerprintDbA db;
  db.m_kept = c.m_kept;
  db.codebook_hash = w.pair_space;
  db.num_pairs = w.num_pairs();
  auto& b = db.bins[bin.bin_id];
  b.bin = bin;
  for (auto i : subset) b.observations.push_back(obs[i]);
  return db;
}

// ---------------------------------------------------------------------------
// Cross-validated evaluation
// ---------------------------------------------------------------------------

/// Per-instance outcomes of a cross-validated evaluation. Gains are true
/// (noiseless) gamma of the pair each method trains to.
struct EvalData {
  std::vector<std::size_t> n_b;  // ascending budgets
  std::vector<std::string> methods;
  std::vector<NoiseSetting> settings;
  std::vector<double> gamma_max;            // [instance]
  std::vector<std::size_t> best_pair;       // [instance], argmax of true gamma
  std::vector<std::size_t> fold;            // [instance]
  std::vector<bool> los_blocked;            // [instance]
  std::vector<double> position_only_gain;   // [instance], when requested
  // [setting][method][budget][instance]
  std::vector<std::vector<std::vector<std::vector<double>>>> winner_gain;

  std::size_t method_index(const std::string& m) const {
    const auto it = std::find(methods.begin(), methods.end(), m);
    if (it == methods.end()) throw Error(fmt::format("evaluation has no method '{}'", m));
    return static_cast<std::size_t>(it - methods.begin());
  }
  std::size_t budget_index(std::size_t nb) const {
    const auto it = std::find(n_b.begin(), n_b.end(), nb);
    if (it == n_b.end()) throw Error(fmt::format("evaluation has no budget {}", nb));
    return static_cast<std::size_t>(it - n_b.begin());
  }
  /// Loss xi of every instance for a (setting, method, budget) cell.
  std::vector<double> losses(std::size_t s, std::size_t m, std::size_t b) const {
    std::vector<double> out(gamma_max.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double g = winner_gain[s][m][b][i];
      out[i] = g > 0.0 ? gamma_max[i] / g : std::numeric_limits<double>::infinity();
    }
    return out;
  }
};

struct EvalOptions {
  std::vector<std::size_t> n_b;         // budgets; empty = 1..n_b_max (+ |B| if configured)
  std::vector<NoiseSetting> settings;   // empty = from configuration
  std::vector<std::string> methods;     // empty = from configuration
};

namespace detail {

inline std::vector<std::size_t> ranking(const std::string& method, const FingerprintDbA& a, const FingerprintDbB& b,
                                        int bin_id, std::size_t n) {
  if (method == "avgpow") return avgpow_select(b, bin_id, n).pairs;
  if (method == "minmisprob") return minmisprob_select(a, bin_id, n).pairs;
  throw Error(fmt::format("method '{}' has no ranking", method));
}

}  // namespace detail

/// K-fold evaluation on one bin. For each fold and noise setting, Type A is
/// built from the training instances' sweeps under that setting, Type B is
/// its summary, and each test instance is trained on the candidate prefixes:
/// the winner is the measured best (noisy for noisy settings) and its true
/// gain is recorded.
inline EvalData evaluate_cv(const ExperimentConfig& c, const World& w, const LocationBin& bin,
                            const std::vector<ChannelInstance>& data, const EvalOptions& opt = {},
                            unsigned jobs = 1) {
  EvalData ev;
  ev.methods = opt.methods.empty() ? c.methods : opt.methods;
  ev.settings = opt.settings;
  if (ev.settings.empty()) {
    if (c.eval_noiseless) ev.settings.push_back({true, 0.0});
    for (double e : c.eirp_dbm) ev.settings.push_back({false, e});
  }
  ev.n_b = opt.n_b;
  if (ev.n_b.empty()) {
    for (std::size_t k = 1; k <= std::min(c.n_b_max, w.num_pairs()); ++k) ev.n_b.push_back(k);
    if (c.include_full_budget && ev.n_b.back() != w.num_pairs()) ev.n_b.push_back(w.num_pairs());
  }
  std::sort(ev.n_b.begin(), ev.n_b.end());
  ev.n_b.erase(std::unique(ev.n_b.begin(), ev.n_b.end()), ev.n_b.end());
  if (ev.n_b.empty() || ev.n_b.front() < 1 || ev.n_b.back() > w.num_pairs()) throw Error("evaluate: bad budgets");
  const std::size_t n_max = ev.n_b.back();
  const std::size_t N = data.size();
  const std::size_t S = ev.settings.size();
  const std::size_t M = ev.methods.size();

  ev.fold = fold_assignment(N, c.folds, stream_seed(c.seed, Stream::folds));
  ev.gamma_max.assign(N, 0.0);
  ev.best_pair.assign(N, 0);
  ev.los_blocked.assign(N, false);
  ev.winner_gain.assign(S, std::vector<std::vector<std::vector<double>>>(
                               M, std::vector<std::vector<double>>(ev.n_b.size(), std::vector<double>(N, 0.0))));
  const bool want_pos = std::find(ev.methods.begin(), ev.methods.end(), "position_only") != ev.methods.end();
  if (want_pos) ev.position_only_gain.assign(N, 0.0);

  // Database rows of every instance, per setting.
  std::vector<std::vector<ObservationA>> obs(S);
  for (std::size_t s = 0; s < S; ++s) {
    obs[s] = observe_all(c, w, data, ev.settings[s], derive_seed(stream_seed(c.seed, Stream::database), s), jobs);
  }

  for (std::size_t f = 0; f < c.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < N; ++i) (ev.fold[i] == f ? test : train).push_back(i);

    // Candidate rankings of length n_max per (setting, method).
    std::vector<std::vector<std::vector<std::size_t>>> ranked(S, std::vector<std::vector<std::size_t>>(M));
    for (std::size_t s = 0; s < S; ++s) {
      const FingerprintDbA dba = db_from_observations(c, w, bin, obs[s], train);
      const FingerprintDbB dbb = summarize_a_to_b(dba);
      for (std::size_t m = 0; m < M; ++m) {
        if (ev.methods[m] == "position_only") continue;
        ranked[s][m] = detail::ranking(ev.methods[m], dba, dbb, bin.bin_id, n_max);
      }
    }

    parallel_for(test.size(), jobs, [&](std::size_t j) {
      const std::size_t i = test[j];
      const BeamspaceChannel bs(data[i], w.rsu, w.cv, c.pulse);
      const std::vector<double> g = bs.gains();
      const auto top = std::max_element(g.begin(), g.end());
      ev.gamma_max[i] = *top;
      ev.best_pair[i] = static_cast<std::size_t>(top - g.begin());
      ev.los_blocked[i] = data[i].los_blocked;
      if (want_pos) {
        const auto p = position_only_select(positions_scene(c, data[i].cv_longitudinal), w.rsu, w.cv);
        ev.position_only_gain[i] = g[p.pair_id];
      }
      for (std::size_t s = 0; s < S; ++s) {
        const TrainingConfig trn = training_for(c, ev.settings[s]);
        const double s2 = trn.tap_error_variance();
        const std::uint64_t mseed =
            derive_seed(derive_seed(stream_seed(c.seed, Stream::measurement), s), i);
        std::map<std::size_t, double> measured;  // per pair, shared by all methods
        auto measure = [&](std::size_t pair) {
          if (ev.settings[s].noiseless) return g[pair];
          auto it = measured.find(pair);
          if (it != measured.end()) return it->second;
          Rng rng(derive_seed(mseed, pair));
          const double v = BeamspaceChannel::noisy_draw(g[pair], bs.num_taps(), s2, rng);
          measured.emplace(pair, v);
          return v;
        };
        for (std::size_t m = 0; m < M; ++m) {
          if (ev.methods[m] == "position_only") {
            for (std::size_t b = 0; b < ev.n_b.size(); ++b) ev.winner_gain[s][m][b][i] = ev.position_only_gain[i];
            continue;
          }
          const auto& cand = ranked[s][m];
          std::size_t best = 0;
          double best_val = measure(cand[0]);
          std::size_t next_budget = 0;
          for (std::size_t k = 1; k <= n_max; ++k) {
            if (k > 1) {
              const double v = measure(cand[k - 1]);
              if (v > best_val) {
                best_val = v;
                best = k - 1;
              }
            }
            while (next_budget < ev.n_b.size() && ev.n_b[next_budget] == k) {
              ev.winner_gain[s][m][next_budget][i] = g[cand[best]];
              ++next_budget;
            }
          }
        }
      }
    });
  }
  return ev;
}

/// Rate of each instance for a cell, at the setting's EIRP (noiseless cells
/// use `rate_eirp_dbm`).
inline std::vector<double> instance_rates(const ExperimentConfig& c, const EvalData& ev, std::size_t s,
                                          const std::vector<double>& gains) {
  const double eirp = ev.settings[s].noiseless ? c.rate_eirp_dbm : ev.settings[s].eirp_dbm;
  const double pt = tx_power_for_eirp(eirp, c.cv_array.size());
  std::vector<double> r(gains.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = instantaneous_rate(gains[i], pt, c.noise_power_dbm_value());
  return r;
}

inline std::vector<PplCell> ppl_cells(const ExperimentConfig& c, const EvalData& ev) {
  std::vector<PplCell> out;
  for (std::size_t s = 0; s < ev.settings.size(); ++s) {
    for (std::size_t m = 0; m < ev.methods.size(); ++m) {
      for (std::size_t b = 0; b < ev.n_b.size(); ++b) {
        const auto xi = ev.losses(s, m, b);
        for (double cdb : c.c_db) {
          const double cl = db_to_linear(cdb);
          PplCell cell{ev.methods[m], ev.n_b[b], cdb, ev.settings[s].label_eirp(), 0, xi.size()};
          for (double x : xi) cell.exceed += x > cl ? 1 : 0;
          out.push_back(cell);
        }
      }
    }
  }
  return out;
}

/// Smallest budget whose power-loss probability at `c_db` is <= target, or
/// nullopt when no evaluated budget reaches it.
inline std::optional<std::size_t> budget_for_target(const EvalData& ev, std::size_t s, std::size_t m, double c_db,
                                                    double target) {
  const double cl = db_to_linear(c_db);
  for (std::size_t b = 0; b < ev.n_b.size(); ++b) {
    if (estimate_ppl(ev.losses(s, m, b), cl) <= target) return ev.n_b[b];
  }
  return std::nullopt;
}

inline std::string format_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.10g}", v);
}

inline std::string ppl_csv(const ExperimentConfig& c, const std::vector<PplCell>& cells) {
  std::string s = provenance_header(c) + "method,n_b,c_db,eirp_dbm,prob,n_test\n";
  for (const auto& x : cells) {
    s += fmt::format("{},{},{},{},{},{}\n", x.method, x.n_b, format_num(x.c_db), format_num(x.eirp_dbm),
                     format_num(x.prob()), x.n_test);
  }
  return s;
}

inline std::string rate_csv(const ExperimentConfig& c, const EvalData& ev) {
  std::string s = provenance_header(c) + "method,n_b,eirp_dbm,avg_rate,perfect_rate,avg_rate_overhead,n_test\n";
  const double tb = beam_coherence_time(static_cast<std::size_t>(c.rsu_array.size()),
                                        {c.eval_speed, c.mobility.d_reflector, c.mobility.alpha});
  for (std::size_t st = 0; st < ev.settings.size(); ++st) {
    const auto perfect = mean_se(instance_rates(c, ev, st, ev.gamma_max)).mean;
    for (std::size_t m = 0; m < ev.methods.size(); ++m) {
      for (std::size_t b = 0; b < ev.n_b.size(); ++b) {
        const double r = mean_se(instance_rates(c, ev, st, ev.winner_gain[st][m][b])).mean;
        const double t_trn = ev.methods[m] == "position_only" ? 0.0 : t_fingerprint(ev.n_b[b], c.overhead_model.t_sec);
        s += fmt::format("{},{},{},{},{},{},{}\n", ev.methods[m], ev.n_b[b], format_num(ev.settings[st].label_eirp()),
                         format_num(r), format_num(perfect), format_num(avg_rate_with_overhead(tb, t_trn, r)),
                         ev.gamma_max.size());
      }
    }
  }
  return s;
}

/// Plot slice of the power-loss cells: noiseless cells, or the noisy ones.
inline std::string plot_ppl_csv(const ExperimentConfig& c, const std::vector<PplCell>& cells, bool noisy) {
  std::string s = provenance_header(c) + (noisy ? "method,n_b,c_db,eirp_dbm,prob\n" : "method,n_b,c_db,prob\n");
  for (const auto& x : cells) {
    if (std::isinf(x.eirp_dbm) == noisy) continue;
    if (noisy) {
      s += fmt::format("{},{},{},{},{}\n", x.method, x.n_b, format_num(x.c_db), format_num(x.eirp_dbm),
                       format_num(x.prob()));
    } else {
      s += fmt::format("{},{},{},{}\n", x.method, x.n_b, format_num(x.c_db), format_num(x.prob()));
    }
  }
  return s;
}

inline json eval_json(const ExperimentConfig& c, const std::vector<PplCell>& cells) {
  json rows = json::array();
  for (const auto& x : cells) {
    rows.push_back({{"method", x.method}, {"n_b", x.n_b}, {"c_db", x.c_db},
                    {"eirp_dbm", std::isinf(x.eirp_dbm) ? json(nullptr) : json(x.eirp_dbm)},
                    {"noiseless", std::isinf(x.eirp_dbm)}, {"prob", x.prob()}, {"n_test", x.n_test}});
  }
  return {{"config_hash", c.hash()}, {"seed", c.seed}, {"cells", std::move(rows)}};
}

// ---------------------------------------------------------------------------
// Overhead table
// ---------------------------------------------------------------------------

struct OverheadRow {
  std::size_t n_a = 0;
  double speed = 0.0;
  double t_11ad = 0.0;
  std::size_t n_fp = 0;
  double t_fp = 0.0;
  double t_b = 0.0;
};

/// Fingerprint budget scaled linearly with the array size from a reference point.
inline std::size_t scaled_n_fp(const ExperimentConfig& c, std::size_t n_a) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(c.n_fp_ref * static_cast<double>(n_a) / c.n_a_ref - 1e-9)));
}

inline std::vector<OverheadRow> overhead_table(const ExperimentConfig& c) {
  std::vector<OverheadRow> rows;
  for (int side : c.overhead_sizes) {
    const auto n_a = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
    for (double v : c.overhead_speeds) {
      OverheadRow r;
      r.n_a = n_a;
      r.speed = v;
      r.t_11ad = t_11ad(n_a, c.overhead_model);
      r.n_fp = scaled_n_fp(c, n_a);
      r.t_fp = t_fingerprint(r.n_fp, c.overhead_model.t_sec);
      r.t_b = beam_coherence_time(n_a, {v, c.mobility.d_reflector, c.mobility.alpha});
      rows.push_back(r);
    }
  }
  return rows;
}

inline std::string overhead_csv(const ExperimentConfig& c, const std::vector<OverheadRow>& rows) {
  std::string s = provenance_header(c) +
                  "n_a,speed_mps,t_11ad_us,n_fp,t_fp_us,t_b_ms,exceeds,rate_factor_11ad,rate_factor_fp\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.n_a, format_num(r.speed), format_num(r.t_11ad * 1e6), r.n_fp,
                     format_num(r.t_fp * 1e6), format_num(r.t_b * 1e3), r.t_11ad > r.t_b ? 1 : 0,
                     format_num(avg_rate_with_overhead(r.t_b, r.t_11ad, 1.0)),
                     format_num(avg_rate_with_overhead(r.t_b, r.t_fp, 1.0)));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Online collection
// ---------------------------------------------------------------------------

struct OnlineResult {
  std::vector<std::string> schedules;
  std::size_t horizon = 0;
  // [schedule][run][t]
  std::vector<std::vector<std::vector<double>>> loss_db;
  std::vector<std::vector<std::vector<std::size_t>>> n_explore;
  std::vector<std::vector<std::vector<std::size_t>>> chosen;

  /// Fraction of runs with loss above `c_db` at each t.
  std::vector<double> exceed_curve(std::size_t s, double c_db) const {
    std::vector<double> out(horizon, 0.0);
    for (const auto& run : loss_db[s]) {
      for (std::size_t t = 0; t < horizon; ++t) out[t] += run[t] > c_db ? 1.0 : 0.0;
    }
    for (auto& v : out) v /= static_cast<double>(loss_db[s].size());
    return out;
  }
};

/// Replicated online runs over a pool of instances. Run r permutes the pool
/// with its own seed, bootstraps from the first n_init instances, then
/// serves the rest one vehicle per step. All schedules of a run share the
/// permutation, bootstrap, and measurement noise.
inline OnlineResult run_online(const ExperimentConfig& c, const World& w, const LocationBin& bin,
                               const std::vector<ChannelInstance>& pool, std::size_t runs, unsigned jobs = 1) {
  if (pool.size() <= c.online_n_init) throw Error("online: need more instances than online.n_init");
  if (c.online_n_b > w.num_pairs()) throw Error("online: online.n_b exceeds the pair space");
  OnlineResult res;
  for (const auto& s : c.schedules) res.schedules.push_back(s.name);
  res.horizon = pool.size() - c.online_n_init;
  const std::size_t S = c.schedules.size();
  res.loss_db.assign(S, std::vector<std::vector<double>>(runs));
  res.n_explore.assign(S, std::vector<std::vector<std::size_t>>(runs));
  res.chosen.assign(S, std::vector<std::vector<std::size_t>>(runs));

  std::vector<BeamspaceChannel> bs;
  bs.reserve(pool.size());
  for (const auto& ch : pool) bs.emplace_back(ch, w.rsu, w.cv, c.pulse);
  std::vector<double> gmax(pool.size());
  parallel_for(pool.size(), jobs, [&](std::size_t i) {
    const auto g = bs[i].gains();
    gmax[i] = *std::max_element(g.begin(), g.end());
  });

  const TrainingConfig trn = c.training(c.online_eirp_dbm);
  TrainingConfig boot = trn;
  if (c.bootstrap_noise_variance_mw) boot.noise_variance = *c.bootstrap_noise_variance_mw;
  const double pt = trn.tx_power_mw();
  const double s2 = trn.tap_error_variance();
  const std::uint64_t root = stream_seed(c.seed, Stream::online);

  parallel_for(runs, jobs, [&](std::size_t r) {
    const std::uint64_t run_seed = derive_seed(root, r);
    std::vector<std::size_t> perm(pool.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng prng(derive_seed(run_seed, 0));
    std::shuffle(perm.begin(), perm.end(), prng);

    std::vector<SweepTable> sweeps;
    for (std::size_t k = 0; k < c.online_n_init; ++k) {
      sweeps.push_back(fast_sweep(bs[perm[k]], boot, derive_seed(derive_seed(run_seed, 1), k)));
    }
    const FingerprintDbB db0 = bootstrap_db(sweeps, bin, c.online_keep);

    for (std::size_t s = 0; s < S; ++s) {
      FingerprintDbB db = db0;
      const OnlineSchedule sched = c.schedules[s].schedule(c.online_n_b);
      Rng explore_rng(derive_seed(derive_seed(run_seed, 2), s));
      auto& loss = res.loss_db[s][r];
      auto& nex = res.n_explore[s][r];
      auto& chosen = res.chosen[s][r];
      for (std::size_t t = 0; t < res.horizon; ++t) {
        const std::size_t inst = perm[c.online_n_init + t];
        const std::uint64_t mseed = derive_seed(derive_seed(run_seed, 3), t);
        auto measure = [&](std::size_t pair) {
          Rng rng(derive_seed(mseed, pair));
          return pt * BeamspaceChannel::noisy_draw(bs[inst].gain(pair), bs[inst].num_taps(), s2, rng);
        };
        const OnlineStep step = online_step(db, bin.bin_id, sched, t, measure, explore_rng);
        const double g = bs[inst].gain(step.chosen_pair);
        loss.push_back(g > 0.0 ? linear_to_db(gmax[inst] / g) : std::numeric_limits<double>::infinity());
        nex.push_back(step.n_explore);
        chosen.push_back(step.chosen_pair);
      }
    }
  });
  return res;
}

inline std::string online_trajectory_csv(const ExperimentConfig& c, const OnlineResult& res, std::size_t max_runs) {
  std::string s = provenance_header(c) + "schedule,run_id,t,n_explore,chosen_pair,power_loss_db,smoothed\n";
  for (std::size_t k = 0; k < res.schedules.size(); ++k) {
    const std::size_t runs = std::min(max_runs, res.loss_db[k].size());
    for (std::size_t r = 0; r < runs; ++r) {
      const auto sm = moving_average(res.loss_db[k][r], c.smoothing_window);
      for (std::size_t t = 0; t < res.horizon; ++t) {
        s += fmt::format("{},{},{},{},{},{},0\n", res.schedules[k], r, t, res.n_explore[k][r][t],
                         res.chosen[k][r][t], format_num(res.loss_db[k][r][t]));
      }
      for (std::size_t t = 0; t < res.horizon; ++t) {
        s += fmt::format("{},{},{},{},{},{},1\n", res.schedules[k], r, t, res.n_explore[k][r][t],
                         res.chosen[k][r][t], format_num(sm[t]));
      }
    }
  }
  return s;
}

inline std::string online_summary_csv(const ExperimentConfig& c, const OnlineResult& res) {
  std::string s = provenance_header(c) + "schedule,t,p_loss,p_loss_smoothed\n";
  for (std::size_t k = 0; k < res.schedules.size(); ++k) {
    const auto raw = res.exceed_curve(k, c.online_c_db);
    const auto sm = moving_average(raw, c.smoothing_window);
    for (std::size_t t = 0; t < res.horizon; ++t) {
      s += fmt::format("{},{},{},{}\n", res.schedules[k], t, format_num(raw[t]), format_num(sm[t]));
    }
  }
  return s;
}

}  // namespace imfp
