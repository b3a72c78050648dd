// SPDX-License-Identifier: Apache-2.0
//
// Street-canyon scene generation and a geometric ray generator standing in
// for a full ray tracer: Erlang-gap vehicle placement, hard box blockage, and
// image-method reflections (orders 0-2) off two building walls and the road.
//
// World frame: x runs along the road (the RSU sits at x = 0), y across the
// road toward the far building wall, z up.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imfp/arrays.hpp"
#include "imfp/common.hpp"

namespace imfp {

// ---------------------------------------------------------------------------
// Materials and surfaces
// ---------------------------------------------------------------------------

/// Rayleigh roughness power loss (dB) at normal incidence for an rms surface
/// height `rms_height` (m).
inline double rayleigh_roughness_loss_db(double rms_height, double wavelength) {
  const double g = 2.0 * kPi * rms_height / wavelength;
  const double amplitude = std::exp(-2.0 * g * g);
  return -20.0 * std::log10(amplitude);
}

struct Material {
  double rel_permittivity = 1.0;
  double conductivity = 0.0;  // S/m; +inf for a perfect conductor
  double roughness_loss_db = 0.0;

  bool perfect_conductor() const { return std::isinf(conductivity); }

  void validate() const {
    if (!(rel_permittivity >= 1.0)) throw Error("material: rel_permittivity must be >= 1");
    if (!(conductivity >= 0.0)) throw Error("material: conductivity must be >= 0");
    if (!(roughness_loss_db >= 0.0)) throw Error("material: roughness_loss_db must be >= 0");
  }

  // Concrete and asphalt at 60 GHz; roughness from 0.2 mm / 0.34 mm rms.
  static Material concrete() { return {5.31, 0.8967, rayleigh_roughness_loss_db(0.2e-3, kSpeedOfLight / 60e9)}; }
  static Material asphalt() { return {3.18, 0.3338, rayleigh_roughness_loss_db(0.34e-3, kSpeedOfLight / 60e9)}; }
  static Material perfect() { return {1.0, std::numeric_limits<double>::infinity(), 0.0}; }
};

enum class Polarization { perpendicular, parallel };

/// Fresnel amplitude reflection coefficient for incidence angle theta_i
/// (from the surface normal).
inline cplx fresnel_coefficient(const Material& m, double cos_theta_i, double frequency,
                                Polarization pol) {
  if (m.perfect_conductor()) return pol == Polarization::perpendicular ? cplx{-1.0, 0.0} : cplx{1.0, 0.0};
  const double omega = 2.0 * kPi * frequency;
  const cplx eps{m.rel_permittivity, -m.conductivity / (omega * kVacuumPermittivity)};
  const double sin2 = 1.0 - cos_theta_i * cos_theta_i;
  const cplx root = std::sqrt(eps - sin2);
  if (pol == Polarization::perpendicular) return (cos_theta_i - root) / (cos_theta_i + root);
  return (eps * cos_theta_i - root) / (eps * cos_theta_i + root);
}

/// Planar reflector {p : normal . p = offset}, finite within [lo, hi].
struct Surface {
  std::string name;
  Vec3 normal;
  double offset = 0.0;
  Vec3 lo;
  Vec3 hi;
  Material material;
  Polarization polarization = Polarization::perpendicular;

  Vec3 mirror(Vec3 p) const { return p - (2.0 * (normal.dot(p) - offset)) * normal; }

  bool contains(Vec3 p, double tol = 1e-9) const {
    return p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol && p.y <= hi.y + tol &&
           p.z >= lo.z - tol && p.z <= hi.z + tol;
  }
};

// ---------------------------------------------------------------------------
// Vehicles and traffic
// ---------------------------------------------------------------------------

struct Box {
  Vec3 lo;
  Vec3 hi;
};

enum class VehicleType { car, truck };

struct Vehicle {
  Box box;
  VehicleType type = VehicleType::car;
};

struct VehicleDims {
  double width = 1.8;
  double length = 5.0;
  double height = 1.5;
};

struct TrafficConfig {
  int kappa = 6;
  double mu_zeta = 0.209;  // 1/m
  std::array<double, 2> car_truck_ratio{3.0, 2.0};
  VehicleDims car_dims{1.8, 5.0, 1.5};
  VehicleDims truck_dims{2.5, 12.0, 3.8};
  std::vector<double> lane_offsets{1.75, -1.75};  // lateral lane centers, m

  double mean_gap() const { return 1.0 / mu_zeta; }
  double truck_probability() const {
    return car_truck_ratio[1] / (car_truck_ratio[0] + car_truck_ratio[1]);
  }

  void validate() const {
    if (kappa < 1) throw Error("traffic.kappa must be >= 1");
    if (!(mu_zeta > 0.0)) throw Error("traffic.mu_zeta must be > 0");
    if (car_truck_ratio[0] < 0.0 || car_truck_ratio[1] < 0.0 ||
        car_truck_ratio[0] + car_truck_ratio[1] <= 0.0) {
      throw Error("traffic.car_truck_ratio must be non-negative and not both zero");
    }
    for (const auto& d : {car_dims, truck_dims}) {
      if (!(d.width > 0.0 && d.length > 0.0 && d.height > 0.0)) {
        throw Error("traffic: vehicle dimensions must be positive");
      }
    }
    if (lane_offsets.empty()) throw Error("traffic.lane_offsets must not be empty");
  }
};

/// Static canyon geometry and antenna placement.
struct CanyonConfig {
  double wall_left_y = 10.0;   // far building facade
  double wall_right_y = -10.0; // RSU-side building facade
  double building_height = 30.0;
  double road_min_x = -40.0;   // extent over which vehicles are placed
  double road_max_x = 100.0;
  Material wall_material = Material::concrete();
  Material ground_material = Material::asphalt();
  Vec3 rsu_pos{0.0, -6.0, 7.0};
  double cv_antenna_height = 1.5;
  std::size_t cv_lane = 0;     // index into TrafficConfig::lane_offsets
  double carrier_frequency = 60e9;

  double wavelength() const { return kSpeedOfLight / carrier_frequency; }

  void validate(const TrafficConfig& traffic) const {
    if (!(wall_left_y > wall_right_y)) throw Error("canyon: wall_left_y must exceed wall_right_y");
    if (!(building_height > 0.0)) throw Error("canyon.building_height must be > 0");
    if (!(road_max_x > road_min_x)) throw Error("canyon: empty road extent");
    if (!(carrier_frequency > 0.0)) throw Error("canyon.carrier_frequency must be > 0");
    if (cv_lane >= traffic.lane_offsets.size()) throw Error("canyon.cv_lane out of range");
    wall_material.validate();
    ground_material.validate();
  }
};

/// Local frame of a mounted array: element axes ex, ey and broadside normal.
struct ArrayFrame {
  Vec3 ex{1.0, 0.0, 0.0};
  Vec3 ey{0.0, 1.0, 0.0};
  Vec3 normal{0.0, 0.0, 1.0};

  Direction to_local(Vec3 d) const {
    const Vec3 u = d.normalized();
    const double c = std::clamp(u.dot(normal), -1.0, 1.0);
    return {std::acos(c), std::atan2(u.dot(ey), u.dot(ex))};
  }

  Vec3 to_world(Direction d) const {
    const Vec3 l = d.unit();
    return l.x * ex + l.y * ey + l.z * normal;
  }

  /// Roof-mounted, facing up.
  static ArrayFrame roof() { return {}; }
  /// Pole-mounted, broadside across the road (+y).
  static ArrayFrame facing_road() { return {{0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}; }
};

struct Scene {
  std::vector<Surface> surfaces;  // building walls and ground
  std::vector<Vehicle> vehicles;
  std::optional<std::size_t> cv_vehicle;  // excluded from blockage tests
  std::optional<Vec3> rsu_pos;
  std::optional<Vec3> cv_pos;
  ArrayFrame rsu_frame = ArrayFrame::facing_road();
  ArrayFrame cv_frame = ArrayFrame::roof();
  double carrier_frequency = 60e9;
  double cv_longitudinal = 0.0;

  double wavelength() const { return kSpeedOfLight / carrier_frequency; }
};

/// Walls (perpendicular polarization for a vertically polarized wave) and the
/// ground (parallel) of the canyon.
inline std::vector<Surface> canyon_surfaces(const CanyonConfig& c) {
  const double big = 1e6;
  return {
      {"wall_left", {0.0, 1.0, 0.0}, c.wall_left_y, {-big, c.wall_left_y, 0.0},
       {big, c.wall_left_y, c.building_height}, c.wall_material, Polarization::perpendicular},
      {"wall_right", {0.0, 1.0, 0.0}, c.wall_right_y, {-big, c.wall_right_y, 0.0},
       {big, c.wall_right_y, c.building_height}, c.wall_material, Polarization::perpendicular},
      {"ground", {0.0, 0.0, 1.0}, 0.0, {-big, c.wall_right_y, 0.0}, {big, c.wall_left_y, 0.0},
       c.ground_material, Polarization::parallel},
  };
}

/// Inter-vehicle gap (bumper to bumper), Erlang(kappa, rate kappa*mu_zeta).
inline double sample_gap(const TrafficConfig& cfg, Rng& rng) {
  std::gamma_distribution<double> erlang(static_cast<double>(cfg.kappa),
                                         1.0 / (cfg.kappa * cfg.mu_zeta));
  return erlang(rng);
}

inline VehicleType sample_vehicle_type(const TrafficConfig& cfg, Rng& rng) {
  return uniform01(rng) < cfg.truck_probability() ? VehicleType::truck : VehicleType::car;
}

namespace detail {

inline Vehicle make_vehicle(const TrafficConfig& cfg, VehicleType type, double rear_x, double lane_y) {
  const VehicleDims& d = type == VehicleType::truck ? cfg.truck_dims : cfg.car_dims;
  return {{{rear_x, lane_y - d.width / 2.0, 0.0}, {rear_x + d.length, lane_y + d.width / 2.0, d.height}},
          type};
}

inline double vehicle_length(const TrafficConfig& cfg, VehicleType t) {
  return t == VehicleType::truck ? cfg.truck_dims.length : cfg.car_dims.length;
}

}  // namespace detail

/// One snapshot: vehicles placed per lane with Erlang gaps; the CV (a car) is
/// centered at longitudinal distance d_l ~ U[d0 - sigma_d, d0 + sigma_d] in
/// its lane and the other vehicles of that lane are laid out from it. Other
/// lanes start from a random phase origin.
inline Scene generate_scene(const TrafficConfig& traffic, const CanyonConfig& canyon, double d0,
                            double sigma_d, Rng& rng) {
  traffic.validate();
  canyon.validate(traffic);
  if (!(sigma_d >= 0.0)) throw Error("generate_scene: sigma_d must be >= 0");

  Scene s;
  s.surfaces = canyon_surfaces(canyon);
  s.carrier_frequency = canyon.carrier_frequency;
  s.rsu_pos = canyon.rsu_pos;

  const double d_l = sigma_d > 0.0 ? d0 - sigma_d + 2.0 * sigma_d * uniform01(rng) : d0;
  s.cv_longitudinal = d_l;
  const double cv_y = traffic.lane_offsets[canyon.cv_lane];
  s.cv_pos = Vec3{d_l, cv_y, canyon.cv_antenna_height};

  for (std::size_t lane = 0; lane < traffic.lane_offsets.size(); ++lane) {
    const double y = traffic.lane_offsets[lane];
    if (lane == canyon.cv_lane) {
      const double cv_rear = d_l - traffic.car_dims.length / 2.0;
      s.cv_vehicle = s.vehicles.size();
      s.vehicles.push_back(detail::make_vehicle(traffic, VehicleType::car, cv_rear, y));
      // Ahead of the CV.
      double front = cv_rear + traffic.car_dims.length;
      while (front < canyon.road_max_x) {
        const double gap = sample_gap(traffic, rng);
        const VehicleType t = sample_vehicle_type(traffic, rng);
        s.vehicles.push_back(detail::make_vehicle(traffic, t, front + gap, y));
        front += gap + detail::vehicle_length(traffic, t);
      }
      // Behind the CV.
      double rear = cv_rear;
      while (rear > canyon.road_min_x) {
        const double gap = sample_gap(traffic, rng);
        const VehicleType t = sample_vehicle_type(traffic, rng);
        const double len = detail::vehicle_length(traffic, t);
        s.vehicles.push_back(detail::make_vehicle(traffic, t, rear - gap - len, y));
        rear -= gap + len;
      }
    } else {
      const double mean_len =
          (1.0 - traffic.truck_probability()) * traffic.car_dims.length +
          traffic.truck_probability() * traffic.truck_dims.length;
      double x = canyon.road_min_x - uniform01(rng) * (mean_len + traffic.mean_gap());
      while (x < canyon.road_max_x) {
        const VehicleType t = sample_vehicle_type(traffic, rng);
        s.vehicles.push_back(detail::make_vehicle(traffic, t, x, y));
        x += detail::vehicle_length(traffic, t) + sample_gap(traffic, rng);
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Rays
// ---------------------------------------------------------------------------

struct Ray {
  cplx gain;          // complex amplitude, 0 dBm / 0 dBi convention
  double delay = 0.0; // s
  Direction aoa;      // at the receiver, local frame
  Direction aod;      // at the transmitter, local frame
  int bounce_count = 0;
};

struct ChannelInstance {
  std::vector<Ray> rays;
  double cv_longitudinal = 0.0;
  std::uint64_t seed = 0;
  bool los_blocked = false;
};

inline constexpr std::size_t kMaxRays = 25;

/// Segment p0 -> p1 against an axis-aligned box (slab test). Contacts within
/// `eps` of either endpoint are ignored so antennas mounted on a surface do
/// not block themselves.
inline bool segment_hits_box(Vec3 p0, Vec3 p1, const Box& b, double eps = 1e-9) {
  double t0 = eps;
  double t1 = 1.0 - eps;
  const double p[3] = {p0.x, p0.y, p0.z};
  const double d[3] = {p1.x - p0.x, p1.y - p0.y, p1.z - p0.z};
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z};
  const double hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (p[a] <= lo[a] || p[a] >= hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - p[a]) / d[a];
    double tb = (hi[a] - p[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return false;
  }
  return true;
}

namespace detail {

inline bool path_blocked(const Scene& s, const std::vector<Vec3>& pts) {
  for (std::size_t v = 0; v < s.vehicles.size(); ++v) {
    if (s.cv_vehicle && *s.cv_vehicle == v) continue;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (segment_hits_box(pts[i], pts[i + 1], s.vehicles[v].box)) return true;
    }
  }
  return false;
}

/// Reflection point sequence for surfaces `seq` from tx to rx by the image
/// method; nullopt if any reflection point is off its surface or the path
/// does not actually cross the surface.
inline std::optional<std::vector<Vec3>> image_path(const std::vector<Surface>& surfaces,
                                                   const std::vector<std::size_t>& seq, Vec3 tx,
                                                   Vec3 rx) {
  std::vector<Vec3> images{tx};
  for (std::size_t idx : seq) images.push_back(surfaces[idx].mirror(images.back()));
  std::vector<Vec3> pts(seq.size() + 2);
  pts.front() = tx;
  pts.back() = rx;
  Vec3 target = rx;
  for (std::size_t j = seq.size(); j-- > 0;) {
    const Surface& surf = surfaces[seq[j]];
    const Vec3 from = images[j + 1];
    const double a = surf.normal.dot(from) - surf.offset;
    const double b = surf.normal.dot(target) - surf.offset;
    if (a * b >= 0.0) return std::nullopt;  // image and target on the same side
    const double t = a / (a - b);
    const Vec3 hit = from + t * (target - from);
    if (!surf.contains(hit)) return std::nullopt;
    pts[j + 1] = hit;
    target = hit;
  }
  return pts;
}

}  // namespace detail

/// Image-method rays from the CV (transmitter during training) to the RSU
/// (receiver), up to `max_bounces` reflections, strongest `l_p` kept.
/// Per-ray amplitude: Friis free-space factor times the Fresnel coefficients
/// and roughness loss of each bounce; phase -2*pi*length/lambda plus the
/// Fresnel phases.
inline ChannelInstance trace_rays(const Scene& scene, int max_bounces, std::size_t l_p = kMaxRays) {
  if (!scene.rsu_pos || !scene.cv_pos) throw Error("trace_rays: scene lacks RSU or CV position");
  if (max_bounces < 0 || max_bounces > 2) throw Error("trace_rays: max_bounces must be 0, 1 or 2");
  if (l_p < 1) throw Error("trace_rays: l_p must be >= 1");

  const Vec3 tx = *scene.cv_pos;
  const Vec3 rx = *scene.rsu_pos;
  const double lambda = scene.wavelength();
  const double freq = scene.carrier_frequency;

  std::vector<std::vector<std::size_t>> sequences{{}};
  const std::size_t ns = scene.surfaces.size();
  if (max_bounces >= 1) {
    for (std::size_t a = 0; a < ns; ++a) sequences.push_back({a});
  }
  if (max_bounces >= 2) {
    for (std::size_t a = 0; a < ns; ++a) {
      for (std::size_t b = 0; b < ns; ++b) {
        if (a != b) sequences.push_back({a, b});
      }
    }
  }

  ChannelInstance out;
  out.cv_longitudinal = scene.cv_longitudinal;
  for (const auto& seq : sequences) {
    const auto pts = detail::image_path(scene.surfaces, seq, tx, rx);
    if (!pts) continue;
    if (detail::path_blocked(scene, *pts)) {
      if (seq.empty()) out.los_blocked = true;
      continue;
    }
    double length = 0.0;
    for (std::size_t i = 0; i + 1 < pts->size(); ++i) length += ((*pts)[i + 1] - (*pts)[i]).norm();
    cplx coeff{1.0, 0.0};
    for (std::size_t j = 0; j < seq.size(); ++j) {
      const Surface& surf = scene.surfaces[seq[j]];
      const Vec3 incoming = ((*pts)[j + 1] - (*pts)[j]).normalized();
      const double cos_i = std::abs(incoming.dot(surf.normal));
      coeff *= fresnel_coefficient(surf.material, cos_i, freq, surf.polarization);
      coeff *= std::pow(10.0, -surf.material.roughness_loss_db / 20.0);
    }
    Ray r;
    r.gain = (lambda / (4.0 * kPi * length)) * coeff * std::polar(1.0, -2.0 * kPi * length / lambda);
    r.delay = length / kSpeedOfLight;
    r.aod = scene.cv_frame.to_local((*pts)[1] - tx);
    r.aoa = scene.rsu_frame.to_local((*pts)[pts->size() - 2] - rx);
    r.bounce_count = static_cast<int>(seq.size());
    out.rays.push_back(r);
  }
  std::stable_sort(out.rays.begin(), out.rays.end(),
                   [](const Ray& a, const Ray& b) { return std::norm(a.gain) > std::norm(b.gain); });
  if (out.rays.size() > l_p) out.rays.resize(l_p);
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines interchange
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ChannelInstance& ch) {
  nlohmann::json rays = nlohmann::json::array();
  for (const auto& r : ch.rays) {
    rays.push_back({{"gain_re", r.gain.real()},
                    {"gain_im", r.gain.imag()},
                    {"delay", r.delay},
                    {"aoa_theta", r.aoa.theta},
                    {"aoa_phi", r.aoa.phi},
                    {"aod_theta", r.aod.theta},
                    {"aod_phi", r.aod.phi},
                    {"bounce_count", r.bounce_count}});
  }
  return {{"seed", ch.seed}, {"d_l", ch.cv_longitudinal}, {"los_blocked", ch.los_blocked},
          {"rays", std::move(rays)}};
}

inline ChannelInstance channel_from_json(const nlohmann::json& j) {
  ChannelInstance ch;
  ch.seed = j.at("seed").get<std::uint64_t>();
  ch.cv_longitudinal = j.at("d_l").get<double>();
  ch.los_blocked = j.at("los_blocked").get<bool>();
  for (const auto& r : j.at("rays")) {
    Ray ray;
    ray.gain = {r.at("gain_re").get<double>(), r.at("gain_im").get<double>()};
    ray.delay = r.at("delay").get<double>();
    ray.aoa = {r.at("aoa_theta").get<double>(), r.at("aoa_phi").get<double>()};
    ray.aod = {r.at("aod_theta").get<double>(), r.at("aod_phi").get<double>()};
    ray.bounce_count = r.at("bounce_count").get<int>();
    ch.rays.push_back(ray);
  }
  if (ch.rays.size() > kMaxRays) throw Error("channel instance holds more than 25 rays");
  return ch;
}

/// One instance per line; `extra` fields (provenance) are merged into each line.
inline void write_channels_jsonl(std::ostream& os, const std::vector<ChannelInstance>& chans,
                                 const nlohmann::json& extra = nlohmann::json::object()) {
  for (const auto& ch : chans) {
    auto j = to_json(ch);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    os << j.dump() << '\n';
  }
}

inline std::vector<ChannelInstance> read_channels_jsonl(std::istream& is) {
  std::vector<ChannelInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(channel_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(fmt::format("channels line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

}  // namespace imfp
