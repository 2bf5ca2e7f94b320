#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nlosid/config.hpp"
#include "nlosid/error.hpp"
#include "nlosid/geometry.hpp"

namespace nlosid {

/// Speed of light in metres per nanosecond (exact).
inline constexpr double kSpeedOfLight = 0.299792458;

/// Position labels in their canonical order; position index k (1-based) names
/// kPositionNames[k - 1].
inline constexpr std::array<std::string_view, 7> kPositionNames = {"A", "B",  "C", "D",
                                                                   "E", "Db", "Df"};

/// 1-based index of a position name, or 0 if the name is unknown.
inline int position_index(std::string_view name) {
  for (std::size_t i = 0; i < kPositionNames.size(); ++i)
    if (kPositionNames[i] == name) return static_cast<int>(i) + 1;
  return 0;
}

enum class BodyPart : unsigned char { torso, head };

/// Reflective facet of a hidden target. `area` is the facet's projected
/// (frontal) area in m².
struct Patch {
  Point3 center;
  Vec3 normal{0.0, 0.0, -1.0};
  double area = 0.0;
  double albedo = 0.0;
  BodyPart part = BodyPart::torso;
};

using PatchSet = std::vector<Patch>;

inline void validate(const Patch& p) {
  if (!is_finite(p.center)) throw std::invalid_argument("patch center is not finite");
  if (!(p.area > 0.0)) throw std::invalid_argument("patch area must be positive");
  if (std::abs(norm(p.normal) - 1.0) > 1e-9) throw std::invalid_argument("patch normal must be unit length");
  if (!(p.albedo >= 0.0 && p.albedo <= 1.0)) throw std::invalid_argument("patch albedo must lie in [0,1]");
}

struct PersonSpec {
  int person_id = 1;
  double height = 1.75;
  double shoulder_width = 0.45;
  double torso_depth = 0.25;
  double head_radius = 0.10;
  double clothing_albedo = 0.5;
  double skin_albedo = 0.4;
};

inline void validate(const PersonSpec& s) {
  auto length_ok = [](double v) { return v > 0.0 && v < 3.0; };
  if (s.person_id < 1 || s.person_id > 255) throw ConfigError("person_id must be in 1..255");
  if (!length_ok(s.height) || !length_ok(s.shoulder_width) || !length_ok(s.torso_depth) ||
      !length_ok(s.head_radius))
    throw ConfigError("person " + std::to_string(s.person_id) + ": body lengths must lie in (0, 3) m");
  if (s.height <= 2.0 * s.head_radius)
    throw ConfigError("person " + std::to_string(s.person_id) + ": height must exceed the head diameter");
  auto albedo_ok = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!albedo_ok(s.clothing_albedo) || !albedo_ok(s.skin_albedo))
    throw ConfigError("person " + std::to_string(s.person_id) + ": albedo must lie in [0,1]");
}

inline void validate_roster(std::span<const PersonSpec> roster) {
  for (std::size_t i = 0; i < roster.size(); ++i) {
    validate(roster[i]);
    for (std::size_t j = 0; j < i; ++j)
      if (roster[j].person_id == roster[i].person_id)
        throw ConfigError("duplicate person_id " + std::to_string(roster[i].person_id) + " in roster");
  }
}

/// Relay wall: the plane containing both wall spots. Hidden targets live on
/// the side `normal` points to.
struct WallPlane {
  Point3 origin{0.0, 0.0, 0.0};
  Vec3 normal{0.0, 0.0, 1.0};
};

struct NamedPosition {
  std::string name;
  Point3 anchor;  // torso centre of a person standing at this position
};

struct Scene {
  Point3 laser_spot{-0.5, 1.2, 0.0};
  Point3 observed_spot{0.5, 1.2, 0.0};
  double observed_area_side = 0.03;
  Vec3 wall_normal{0.0, 0.0, 1.0};
  double detector_to_wall_distance = 1.5;
  /// Source-to-wall path added to every echo.
  double laser_leg = 1.5;
  double patch_side = 0.05;
  /// Per-acquisition standard deviation of the person's placement (m) and of
  /// the laser power (relative). Models re-positioning between measurements.
  double pose_jitter = 0.001;
  double power_jitter = 0.02;
  std::vector<NamedPosition> positions;

  WallPlane wall() const { return {laser_spot, wall_normal}; }

  Point3 wall_midpoint() const { return (laser_spot + observed_spot) * 0.5; }

  const NamedPosition& position(std::string_view name) const {
    for (const auto& p : positions)
      if (p.name == name) return p;
    throw ConfigError("unknown position '" + std::string(name) + "'");
  }
};

/// Checks the position table (exactly A,B,C,D,E,Db,Df), wall geometry and
/// scalar ranges. Reorders nothing.
inline void validate(const Scene& s) {
  if (s.positions.size() != kPositionNames.size())
    throw ConfigError("scene must define exactly the 7 positions A,B,C,D,E,Db,Df");
  for (auto name : kPositionNames) {
    auto n = std::count_if(s.positions.begin(), s.positions.end(),
                           [&](const NamedPosition& p) { return p.name == name; });
    if (n != 1) throw ConfigError("scene must define position '" + std::string(name) + "' exactly once");
  }
  if (!is_finite(s.laser_spot) || !is_finite(s.observed_spot)) throw ConfigError("wall spots must be finite");
  if (std::abs(norm(s.wall_normal) - 1.0) > 1e-9) throw ConfigError("wall_normal must be a unit vector");
  if (std::abs(dot(s.observed_spot - s.laser_spot, s.wall_normal)) > 1e-9)
    throw ConfigError("laser and observed spots must lie on the same wall plane");
  if (std::abs(s.wall_normal.y) > 1e-9) throw ConfigError("wall must be vertical (wall_normal.y = 0)");
  if (!(s.observed_area_side > 0.0)) throw ConfigError("observed_area_side must be positive");
  if (!(s.detector_to_wall_distance >= 0.0) || !(s.laser_leg >= 0.0))
    throw ConfigError("laser_leg and detector_to_wall_distance must be non-negative");
  if (!(s.patch_side > 0.0)) throw ConfigError("patch_side must be positive");
  if (!(s.pose_jitter >= 0.0) || !(s.power_jitter >= 0.0) || s.power_jitter >= 0.5)
    throw ConfigError("pose_jitter must be >= 0 and power_jitter in [0, 0.5)");
  for (const auto& p : s.positions) {
    if (!is_finite(p.anchor)) throw ConfigError("position '" + p.name + "' is not finite");
    if (dot(p.anchor - s.laser_spot, s.wall_normal) <= 0.0)
      throw ConfigError("position '" + p.name + "' lies behind the relay wall");
  }
}

/// Default laboratory layout: positions A–E on a 1.5 m arc (horizontal radius
/// about the wall-spot midpoint) with near-equal path length; Db and Df on
/// D's bearing at 1.25 m and 1.75 m.
inline Scene default_scene() {
  Scene s;
  s.positions = {
      {"A", {0.000, 0.85, 1.500}}, {"B", {0.493, 0.85, 1.417}},  {"C", {0.697, 0.85, 1.328}},
      {"D", {0.854, 0.85, 1.233}}, {"E", {0.986, 0.85, 1.130}},  {"Db", {0.712, 0.85, 1.028}},
      {"Df", {0.996, 0.85, 1.439}},
  };
  return s;
}

/// The three-person roster used by the default run.
inline std::vector<PersonSpec> default_roster() {
  return {
      {1, 1.80, 0.46, 0.26, 0.105, 0.60, 0.35},
      {2, 1.68, 0.41, 0.23, 0.098, 0.30, 0.45},
      {3, 1.75, 0.50, 0.30, 0.110, 0.80, 0.30},
  };
}

// ---------------------------------------------------------------------------
// Geometry helpers
// ---------------------------------------------------------------------------

/// Wall-to-target-to-wall distance for one facet.
inline double path_length(const Point3& laser_spot, const Point3& patch_center,
                          const Point3& observed_spot) {
  return distance(laser_spot, patch_center) + distance(patch_center, observed_spot);
}

/// Metres to nanoseconds.
inline double time_of_flight(double total_path) {
  if (!(total_path >= 0.0)) throw std::invalid_argument("time_of_flight: path must be non-negative");
  return total_path / kSpeedOfLight;
}

/// Depth resolution (cm) corresponding to a timing resolution (ps), using the
/// round-trip convention depth = c·dt/2.
inline double temporal_to_depth(double dt_ps) {
  if (!(dt_ps >= 0.0)) throw std::invalid_argument("temporal_to_depth: dt must be non-negative");
  return kSpeedOfLight * 1e-3 * dt_ps / 2.0 * 100.0;
}

/// Spread (max − min, ns) of the anchor time of flight over a subset of named
/// positions.
inline double position_tof_spread(const Scene& scene, std::span<const std::string> subset) {
  if (subset.empty()) throw std::invalid_argument("position_tof_spread: empty subset");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& name : subset) {
    const auto& pos = scene.position(name);
    double t = time_of_flight(path_length(scene.laser_spot, pos.anchor, scene.observed_spot));
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  return hi - lo;
}

// ---------------------------------------------------------------------------
// Body discretization
// ---------------------------------------------------------------------------

namespace detail {

struct BodyFrame {
  Vec3 lateral;
  Vec3 up{0.0, 1.0, 0.0};
  Vec3 front;  // horizontal, pointing from the body toward the wall spots
};

inline BodyFrame body_frame(const Point3& anchor, const Point3& facing_target, const Vec3& wall_normal) {
  BodyFrame f;
  Vec3 to_target = facing_target - anchor;
  to_target.y = 0.0;
  if (norm(to_target) < 1e-9) to_target = -wall_normal;
  f.front = normalized(to_target);
  f.lateral = normalized(cross(f.up, f.front));
  return f;
}

/// Tiles the wall-facing half of an ellipsoid with semi-axes (a lateral,
/// b vertical, c depth). Cells form a square grid centred on the ellipsoid
/// axis; a cell is kept when its centre projects inside the outline, and
/// its area is the part of the cell inside the outline. The central cell is
/// always kept so even very coarse tilings produce a facet.
inline void tile_half_ellipsoid(const Point3& center, const BodyFrame& f, double a, double b, double c,
                                double side, double albedo, BodyPart part, PatchSet& out) {
  constexpr int kSub = 16;
  const int ni = static_cast<int>(std::ceil(a / side)) + 1;
  const int nj = static_cast<int>(std::ceil(b / side)) + 1;
  for (int j = -nj; j <= nj; ++j) {
    for (int i = -ni; i <= ni; ++i) {
      const double u = i * side;
      const double v = j * side;
      const double r2 = (u * u) / (a * a) + (v * v) / (b * b);
      if (r2 >= 1.0 && !(i == 0 && j == 0)) continue;
      int inside = 0;
      for (int sj = 0; sj < kSub; ++sj) {
        for (int si = 0; si < kSub; ++si) {
          const double su = u + ((si + 0.5) / kSub - 0.5) * side;
          const double sv = v + ((sj + 0.5) / kSub - 0.5) * side;
          if ((su * su) / (a * a) + (sv * sv) / (b * b) < 1.0) ++inside;
        }
      }
      if (inside == 0) continue;
      const double depth = c * std::sqrt(std::max(0.0, 1.0 - r2));
      Patch p;
      p.center = center + f.lateral * u + f.up * v + f.front * depth;
      p.normal = normalized(f.lateral * (u / (a * a)) + f.up * (v / (b * b)) + f.front * (depth / (c * c)));
      p.area = side * side * inside / double(kSub * kSub);
      p.albedo = albedo;
      p.part = part;
      out.push_back(p);
    }
  }
}

}  // namespace detail

/// Semi-axes (lateral, vertical, depth) of the torso ellipsoid. The torso
/// ellipsoid spans the body from feet to chin; the head is a sphere on top.
inline std::array<double, 3> torso_semi_axes(const PersonSpec& s) {
  return {s.shoulder_width / 2.0, (s.height - 2.0 * s.head_radius) / 2.0, s.torso_depth / 2.0};
}

/// Closed-form frontal (projected) area of the two-ellipsoid body model.
inline double frontal_area(const PersonSpec& s) {
  auto [a, b, c] = torso_semi_axes(s);
  (void)c;
  return std::numbers::pi * (a * b + s.head_radius * s.head_radius);
}

/// Discretizes a standing person into wall-facing facets. The torso ellipsoid
/// is centred on `anchor` and the body turns horizontally toward
/// `facing_target`.
inline PatchSet discretize_person(const PersonSpec& spec, const Point3& anchor, double patch_side,
                                  const WallPlane& wall, const Point3& facing_target) {
  validate(spec);
  if (!(patch_side > 0.0)) throw std::invalid_argument("discretize_person: patch_side must be positive");
  if (!is_finite(anchor)) throw std::invalid_argument("discretize_person: anchor is not finite");
  const double clearance = dot(anchor - wall.origin, wall.normal);
  if (clearance <= 0.0) throw std::invalid_argument("discretize_person: anchor lies behind the relay wall");
  auto [a, b, c] = torso_semi_axes(spec);
  if (clearance <= std::max(c, spec.head_radius))
    throw std::invalid_argument("discretize_person: body intersects the relay wall");

  const auto frame = detail::body_frame(anchor, facing_target, wall.normal);
  PatchSet out;
  detail::tile_half_ellipsoid(anchor, frame, a, b, c, patch_side, spec.clothing_albedo, BodyPart::torso, out);
  const double r = spec.head_radius;
  detail::tile_half_ellipsoid(anchor + frame.up * (b + r), frame, r, r, r, patch_side,
                              spec.skin_albedo, BodyPart::head, out);
  return out;
}

/// Convenience overload: wall z = 0 facing +z, body turned toward the origin.
inline PatchSet discretize_person(const PersonSpec& spec, const Point3& anchor, double patch_side) {
  return discretize_person(spec, anchor, patch_side, WallPlane{}, Point3{0.0, anchor.y, 0.0});
}

/// Places a person at a named scene position, facing the wall-spot midpoint.
inline PatchSet discretize_person(const Scene& scene, const PersonSpec& spec, const Point3& anchor) {
  return discretize_person(spec, anchor, scene.patch_side, scene.wall(), scene.wall_midpoint());
}

// ---------------------------------------------------------------------------
// Config loading
// ---------------------------------------------------------------------------

inline Scene load_scene(const KeyValueConfig& cfg) {
  Scene s = default_scene();
  s.laser_spot = cfg.get_vec3("scene.laser_spot", s.laser_spot);
  s.observed_spot = cfg.get_vec3("scene.observed_spot", s.observed_spot);
  s.observed_area_side = cfg.get_double("scene.observed_area_side", s.observed_area_side);
  s.wall_normal = cfg.get_vec3("scene.wall_normal", s.wall_normal);
  s.detector_to_wall_distance = cfg.get_double("scene.detector_to_wall_distance", s.detector_to_wall_distance);
  s.laser_leg = cfg.get_double("scene.laser_leg", s.laser_leg);
  s.patch_side = cfg.get_double("scene.patch_side", s.patch_side);
  s.pose_jitter = cfg.get_double("scene.pose_jitter", s.pose_jitter);
  s.power_jitter = cfg.get_double("scene.power_jitter", s.power_jitter);

  auto keys = cfg.keys_with_prefix("positions.");
  if (!keys.empty()) {
    s.positions.clear();
    for (const auto& key : keys) {
      std::string name = key.substr(std::string("positions.").size());
      if (position_index(name) == 0)
        cfg.fail(cfg.line_of(key), "unknown position '" + name + "' (expected A,B,C,D,E,Db,Df)");
      s.positions.push_back({name, cfg.get_vec3(key, {})});
    }
    std::sort(s.positions.begin(), s.positions.end(), [](const NamedPosition& x, const NamedPosition& y) {
      return position_index(x.name) < position_index(y.name);
    });
  }
  validate(s);
  return s;
}

/// Reads `personN.*` sections in increasing N. Without any, returns the
/// default roster.
inline std::vector<PersonSpec> load_roster(const KeyValueConfig& cfg) {
  std::vector<PersonSpec> roster;
  auto defaults = default_roster();
  for (int n = 1; n <= 255; ++n) {
    const std::string sec = "person" + std::to_string(n) + ".";
    if (cfg.keys_with_prefix(sec).empty()) continue;
    PersonSpec p = n <= static_cast<int>(defaults.size()) ? defaults[n - 1] : PersonSpec{};
    p.person_id = n;
    p.height = cfg.get_double(sec + "height", p.height);
    p.shoulder_width = cfg.get_double(sec + "shoulder_width", p.shoulder_width);
    p.torso_depth = cfg.get_double(sec + "torso_depth", p.torso_depth);
    p.head_radius = cfg.get_double(sec + "head_radius", p.head_radius);
    p.clothing_albedo = cfg.get_double(sec + "clothing_albedo", p.clothing_albedo);
    p.skin_albedo = cfg.get_double(sec + "skin_albedo", p.skin_albedo);
    roster.push_back(p);
  }
  if (roster.empty()) roster = defaults;
  validate_roster(roster);
  return roster;
}

}  // namespace nlosid
