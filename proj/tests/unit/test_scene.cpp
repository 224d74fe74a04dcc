#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "core/error.hpp"
#include "core/geometry.hpp"
#include "core/ply.hpp"
#include "core/scene.hpp"
#include "test_util.hpp"

#ifndef FMREG_FIXTURE_DIR
#error "FMREG_FIXTURE_DIR must be defined"
#endif

using namespace fmreg;

namespace {

const std::string kFixtures = FMREG_FIXTURE_DIR;

SceneSpec base_spec(std::uint64_t seed) {
  const auto prof = builtin_profile("scan2cad-like");
  return spec_from_profile(prof, builtin_model(prof.model, prof.model_spacing), seed);
}

}  // namespace

TEST_CASE("sample_pose: determinism, degenerate box, valid rotations") {
  PoseBounds b{Vec3(1, 2, 3), Vec3(1, 2, 3), RotationMode::Full};
  const auto a = sample_pose(b, 5), c = sample_pose(b, 5);
  CHECK(a.R == c.R);
  CHECK(a.t == Vec3(1, 2, 3));
  CHECK(a.is_valid());
  PoseBounds yaw{Vec3::Zero(), Vec3::Ones(), RotationMode::Yaw};
  const auto y = sample_pose(yaw, 9);
  CHECK(y.R(2, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK((y.t.array() >= 0.0).all());
  CHECK((y.t.array() <= 1.0).all());
  PoseBounds bad{Vec3::Ones(), Vec3::Zero(), RotationMode::Full};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("uniform rotations: angle distribution passes a KS test against the SO(3) density") {
  PoseBounds b;
  const std::size_t n = 10000;
  std::vector<double> angles;
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3 R = sample_pose(b, 1000 + i).R;
    angles.push_back(std::acos(std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0)));
  }
  std::sort(angles.begin(), angles.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = (angles[i] - std::sin(angles[i])) / M_PI;
    ks = std::max({ks, std::abs(F - static_cast<double>(i) / n), std::abs(F - static_cast<double>(i + 1) / n)});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("build_scene: empty and single-instance constructions") {
  auto spec = base_spec(1);
  spec.instances_min = spec.instances_max = 0;
  spec.clutter_fraction = 0.0;
  spec.clutter_points = 0;
  spec.noise_sigma = 0.0;
  spec.surface = ClutterSurface::None;
  const auto empty = build_scene(spec);
  CHECK(empty.cloud.empty());
  CHECK(empty.truth.instances.empty());

  spec.instances_min = spec.instances_max = 1;
  const auto one = build_scene(spec);
  REQUIRE(one.truth.instances.size() == 1);
  const auto& inst = one.truth.instances[0];
  REQUIRE(one.cloud.size() == spec.model.size());
  for (std::size_t k = 0; k < inst.visible.size(); ++k) {
    CHECK((one.cloud.points[inst.visible[k]] - inst.pose.apply(spec.model[inst.model_ids[k]])).norm() == 0.0);
  }
  CHECK(std::all_of(one.cloud.labels->begin(), one.cloud.labels->end(), [](int l) { return l == 0; }));
}

TEST_CASE("build_scene: K=8 at occlusion 0.4 keeps 55-65% and respects separation") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    auto spec = base_spec(seed);
    spec.instances_min = spec.instances_max = 8;
    spec.occlusion_min = spec.occlusion_max = 0.4;
    const auto s = build_scene(spec, "occ");
    s.truth.validate();
    s.truth.validate_against(s.cloud);
    REQUIRE(s.truth.instances.size() == 8);
    const double m = static_cast<double>(spec.model.size());
    for (const auto& inst : s.truth.instances) {
      const double f = static_cast<double>(inst.visible.size()) / m;
      CHECK(f >= 0.55);
      CHECK(f <= 0.65);
      CHECK(inst.pose.is_valid());
    }
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t b = a + 1; b < 8; ++b)
        CHECK((s.truth.instances[a].center - s.truth.instances[b].center).norm() >= spec.min_separation);
    // labels follow the visible sets
    std::vector<int> expect(s.cloud.size(), -1);
    for (std::size_t i = 0; i < 8; ++i)
      for (auto v : s.truth.instances[i].visible) expect[v] = static_cast<int>(i);
    CHECK(*s.cloud.labels == expect);
  }
}

TEST_CASE("build_scene is deterministic in its seed") {
  auto spec = base_spec(11);
  const auto a = build_scene(spec, "d"), b = build_scene(spec, "d");
  CHECK(a.cloud.points == b.cloud.points);
  CHECK(*a.cloud.labels == *b.cloud.labels);
  CHECK(manifest_to_string(a.truth) == manifest_to_string(b.truth));
  spec.seed = 12;
  CHECK(build_scene(spec, "d").cloud.points != a.cloud.points);
}

TEST_CASE("build_scene: unsatisfiable separation names the instance") {
  auto spec = base_spec(2);
  spec.instances_min = spec.instances_max = 6;
  spec.bounds.lo = spec.bounds.hi = Vec3::Zero();
  spec.min_separation = 1.0;
  try {
    (void)build_scene(spec);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("instance 1") != std::string::npos);
  }
}

TEST_CASE("manifest round trip is structurally exact") {
  auto spec = base_spec(21);
  spec.occlusion_min = 0.1;
  spec.occlusion_max = 0.5;
  const auto s = build_scene(spec, "rt");
  const std::string text = manifest_to_string(s.truth);
  const auto back = parse_manifest(text);
  CHECK(back.scene_id == "rt");
  CHECK(back.seed == s.truth.seed);
  CHECK(back.point_count == s.truth.point_count);
  REQUIRE(back.instances.size() == s.truth.instances.size());
  for (std::size_t i = 0; i < back.instances.size(); ++i) {
    const auto &x = back.instances[i], &y = s.truth.instances[i];
    CHECK(x.pose.R == y.pose.R);
    CHECK(x.pose.t == y.pose.t);
    CHECK(x.visible == y.visible);
    CHECK(x.model_ids == y.model_ids);
    CHECK(x.center == y.center);
    CHECK(x.visible_centroid == y.visible_centroid);
    CHECK(x.visible_radius == y.visible_radius);
    CHECK(x.occlusion == y.occlusion);
  }
  CHECK(manifest_to_string(back) == text);
}

TEST_CASE("manifest validation rejects bad rotations, overlaps and parse errors") {
  auto spec = base_spec(22);
  spec.instances_min = spec.instances_max = 2;
  auto s = build_scene(spec, "bad");
  auto t = s.truth;
  t.instances[0].pose.R(0, 0) += 0.1;
  CHECK_THROWS_AS(parse_manifest(manifest_to_string(t)), Error);
  t = s.truth;
  t.instances[1].visible[0] = t.instances[0].visible[0];
  CHECK_THROWS_AS(t.validate(), Error);
  try {
    (void)parse_manifest("{not json", "m.json");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(std::string(e.what()).find("m.json") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_manifest("{\"format\": \"fmreg-manifest\", \"version\": 1}"), Error);
}

TEST_CASE("hand-written fixture manifest loads and validates against its PLY") {
  const auto truth = load_manifest(kFixtures + "/tiny.manifest.json");
  const auto cloud = read_ply(kFixtures + "/tiny.ply");
  const auto model = read_ply(kFixtures + "/tiny_model.ply");
  CHECK_NOTHROW(truth.validate());
  CHECK_NOTHROW(truth.validate_against(cloud));
  REQUIRE(truth.instances.size() == 1);
  const auto& inst = truth.instances[0];
  for (std::size_t k = 0; k < inst.visible.size(); ++k)
    CHECK((inst.pose.apply(model.points[inst.model_ids[k]]) - cloud.points[inst.visible[k]]).norm() < 1e-15);
  CHECK((centroid(model.points) - Vec3(0.25, 0.25, 0.25)).norm() < 1e-15);
  PointCloud shorter = cloud;
  shorter.points.pop_back();
  shorter.labels->pop_back();
  CHECK_THROWS_AS(truth.validate_against(shorter), Error);
}

TEST_CASE("profiles: built-ins validate, unknown names are rejected") {
  for (const auto& name : builtin_profile_names()) CHECK_NOTHROW(builtin_profile(name).validate());
  CHECK_THROWS_AS(builtin_profile("nope"), Error);
  CHECK(parse_rotation_mode(to_string(RotationMode::Yaw)) == RotationMode::Yaw);
  CHECK(parse_clutter_surface(to_string(ClutterSurface::BinWalls)) == ClutterSurface::BinWalls);
  CHECK_THROWS_AS(parse_rotation_mode("sideways"), Error);
  CHECK_FALSE(builtin_model("chair", 0.02).empty());
  CHECK_FALSE(builtin_model("bracket", 0.002).empty());
  CHECK_THROWS_AS(builtin_model("table", 0.02), Error);
}
