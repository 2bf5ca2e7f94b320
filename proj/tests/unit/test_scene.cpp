#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nlosid/config.hpp"
#include "nlosid/scene.hpp"

using namespace nlosid;

namespace {

// Distance computed in long double as an independent reference.
long double ref_distance(const Point3& a, const Point3& b) {
  const long double dx = static_cast<long double>(a.x) - b.x;
  const long double dy = static_cast<long double>(a.y) - b.y;
  const long double dz = static_cast<long double>(a.z) - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double summed_area(const PatchSet& ps) {
  double a = 0.0;
  for (const auto& p : ps) a += p.area;
  return a;
}

// pi*(a*b) for the torso outline plus pi*r^2 for the head.
double frontal_oracle(double height, double width, double head_r) {
  const double a = width / 2.0;
  const double b = (height - 2.0 * head_r) / 2.0;
  return std::numbers::pi * (a * b + head_r * head_r);
}

}  // namespace

TEST(PathLength, OutAndBack) {
  EXPECT_DOUBLE_EQ(path_length({0, 0, 0}, {0, 0, 1}, {0, 0, 0}), 2.0);
  EXPECT_DOUBLE_EQ(path_length({0, 0, 0}, {3, 4, 0}, {0, 0, 0}), 10.0);
}

TEST(PathLength, RandomizedMatchesOracleAndIsSymmetric) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    Point3 l{u(rng), u(rng), u(rng)}, p{u(rng), u(rng), u(rng)}, o{u(rng), u(rng), u(rng)};
    const double got = path_length(l, p, o);
    const long double want = ref_distance(l, p) + ref_distance(p, o);
    EXPECT_LE(std::abs(got - static_cast<double>(want)), 1e-12 * static_cast<double>(want));
    EXPECT_DOUBLE_EQ(got, path_length(o, p, l));
    EXPECT_GE(got + 1e-12, distance(l, o));  // triangle inequality
  }
}

TEST(TimeOfFlight, Values) {
  EXPECT_EQ(time_of_flight(0.0), 0.0);
  EXPECT_NEAR(time_of_flight(3.0), 3.0 / 0.299792458, 1e-12);
  EXPECT_NEAR(time_of_flight(3.0), 10.00692, 1e-5);
  EXPECT_DOUBLE_EQ(time_of_flight(0.299792458), 1.0);
  EXPECT_THROW(time_of_flight(-1.0), std::invalid_argument);
}

TEST(TimeOfFlight, IncreasesAlongBisector) {
  const Point3 l{-0.5, 1.2, 0.0}, o{0.5, 1.2, 0.0};
  double prev = -1.0;
  for (double z = 0.1; z < 3.0; z += 0.1) {
    const double t = time_of_flight(path_length(l, {0.0, 1.2, z}, o));
    EXPECT_GT(t, prev);
    prev = t;
  }
}

TEST(TemporalToDepth, IrfResolution) {
  EXPECT_NEAR(temporal_to_depth(120.0), 1.8, 0.01);
  EXPECT_EQ(temporal_to_depth(0.0), 0.0);
  EXPECT_NEAR(temporal_to_depth(240.0), 2.0 * temporal_to_depth(120.0), 1e-12);
  EXPECT_NEAR(temporal_to_depth(240.0), 3.6, 0.02);
}

TEST(PositionTofSpread, DefaultScene) {
  const auto s = default_scene();
  const std::vector<std::string> one{"C"}, ae{"A", "B", "C", "D", "E"}, dd{"D", "Db", "Df"};
  EXPECT_EQ(position_tof_spread(s, one), 0.0);
  EXPECT_LT(position_tof_spread(s, ae), 0.24);
  EXPECT_GT(position_tof_spread(s, dd), 0.6);
  const std::vector<std::string> bad{"Z"};
  EXPECT_THROW(position_tof_spread(s, bad), ConfigError);
}

TEST(Scene, DefaultLayoutMatchesConstruction) {
  const auto s = default_scene();
  const Point3 mid = s.wall_midpoint();
  auto horizontal = [&](const Point3& p) { return std::hypot(p.x - mid.x, p.z - mid.z); };
  for (auto name : {"A", "B", "C", "D", "E"}) EXPECT_NEAR(horizontal(s.position(name).anchor), 1.5, 0.01) << name;
  EXPECT_NEAR(horizontal(s.position("Db").anchor), 1.25, 0.01);
  EXPECT_NEAR(horizontal(s.position("Df").anchor), 1.75, 0.01);
  // Db, D and Df share a bearing.
  auto bearing = [&](const Point3& p) { return std::atan2(p.x - mid.x, p.z - mid.z); };
  EXPECT_NEAR(bearing(s.position("Db").anchor), bearing(s.position("D").anchor), 0.01);
  EXPECT_NEAR(bearing(s.position("Df").anchor), bearing(s.position("D").anchor), 0.01);
  EXPECT_DOUBLE_EQ(s.observed_area_side, 0.03);
}

TEST(Scene, RejectsBadPositionTables) {
  auto s = default_scene();
  s.positions.pop_back();
  EXPECT_THROW(validate(s), ConfigError);
  s = default_scene();
  s.positions[6].name = "C";
  EXPECT_THROW(validate(s), ConfigError);
  s = default_scene();
  s.positions[0].anchor.z = -1.0;
  EXPECT_THROW(validate(s), ConfigError);
}

TEST(DiscretizePerson, AreaAndCountMatchEllipsoidOracle) {
  PersonSpec p{1, 1.8, 0.5, 0.3, 0.1, 0.5, 0.4};
  const auto patches = discretize_person(p, {0.0, 0.9, 1.5}, 0.05);
  const double area = frontal_oracle(1.8, 0.5, 0.1);
  EXPECT_NEAR(summed_area(patches), area, 0.10 * area);
  const double expected_count = area / 0.0025;
  EXPECT_GE(static_cast<double>(patches.size()), 0.85 * expected_count);
  EXPECT_LE(static_cast<double>(patches.size()), 1.15 * expected_count);
  EXPECT_NEAR(frontal_area(p), area, 1e-12);
}

TEST(DiscretizePerson, PartsAndAlbedos) {
  PersonSpec p{2, 1.7, 0.45, 0.25, 0.1, 0.7, 0.3};
  const auto patches = discretize_person(p, {0.0, 0.9, 1.5}, 0.05);
  int torso = 0, head = 0;
  for (const auto& q : patches) {
    validate(q);
    if (q.part == BodyPart::head) {
      ++head;
      EXPECT_EQ(q.albedo, 0.3);
    } else {
      ++torso;
      EXPECT_EQ(q.albedo, 0.7);
    }
    // Facets face the wall (z = 0 plane, target at z > 0).
    EXPECT_LT(q.normal.z, 0.0);
  }
  EXPECT_GT(torso, 0);
  EXPECT_GT(head, 0);
}

TEST(DiscretizePerson, CoarsestTilingKeepsTorsoAndHead) {
  PersonSpec p{1, 1.8, 0.5, 0.3, 0.1, 0.5, 0.4};
  const auto patches = discretize_person(p, {0.0, 0.9, 1.5}, 2.0);
  EXPECT_GE(patches.size(), 2u);
}

TEST(DiscretizePerson, RefinementConverges) {
  PersonSpec p{1, 1.8, 0.5, 0.3, 0.1, 0.5, 0.4};
  const double a1 = summed_area(discretize_person(p, {0.0, 0.9, 1.5}, 0.05));
  const double a2 = summed_area(discretize_person(p, {0.0, 0.9, 1.5}, 0.025));
  EXPECT_LT(std::abs(a1 - a2), 0.05 * a2);
}

TEST(DiscretizePerson, AlbedoWeightedAreaIsLinearInClothing) {
  PersonSpec p{1, 1.8, 0.5, 0.3, 0.1, 0.2, 0.0};
  auto weighted = [&](double albedo) {
    p.clothing_albedo = albedo;
    double s = 0.0;
    for (const auto& q : discretize_person(p, {0.0, 0.9, 1.5}, 0.05)) s += q.albedo * q.area;
    return s;
  };
  const double w1 = weighted(0.2), w2 = weighted(0.4), w3 = weighted(0.8);
  EXPECT_NEAR(w2, 2.0 * w1, 1e-12 * w2);
  EXPECT_NEAR(w3, 4.0 * w1, 1e-12 * w3);
}

TEST(DiscretizePerson, Errors) {
  PersonSpec p;
  EXPECT_THROW(discretize_person(p, {0.0, 0.9, 1.5}, 0.0), std::invalid_argument);
  EXPECT_THROW(discretize_person(p, {0.0, 0.9, -1.0}, 0.05), std::invalid_argument);
  p.height = 3.5;
  EXPECT_THROW(discretize_person(p, {0.0, 0.9, 1.5}, 0.05), ConfigError);
}

TEST(Roster, DuplicateIdsRejected) {
  std::vector<PersonSpec> r{{1}, {1}};
  EXPECT_THROW(validate_roster(r), ConfigError);
}

TEST(Config, ParsesSceneAndRoster) {
  const auto cfg = KeyValueConfig::parse(
      "# comment\n"
      "scene.patch_side = 0.04   # trailing\n"
      "person1.height = 1.9\n"
      "person2.clothing_albedo = 0.2\n");
  const auto s = load_scene(cfg);
  EXPECT_DOUBLE_EQ(s.patch_side, 0.04);
  const auto r = load_roster(cfg);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r[0].height, 1.9);
  EXPECT_DOUBLE_EQ(r[1].clothing_albedo, 0.2);
  EXPECT_EQ(r[1].person_id, 2);
}

TEST(Config, ErrorsCarryLineNumbers) {
  try {
    KeyValueConfig::parse("scene.patch_side = 0.05\nnot a key value\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  const auto cfg = KeyValueConfig::parse("\nscene.patch_side = abc\n");
  try {
    load_scene(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}
