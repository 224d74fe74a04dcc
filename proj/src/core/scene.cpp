#include "scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "geometry.hpp"
#include "rng.hpp"

namespace fmreg {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.283185307179586;

void sample_box_surface(Points& out, const Vec3& lo, const Vec3& hi, double spacing) {
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    const double ea = hi[a] - lo[a], eb = hi[b] - lo[b];
    const auto na = static_cast<int>(std::max(1.0, std::ceil(ea / spacing)));
    const auto nb = static_cast<int>(std::max(1.0, std::ceil(eb / spacing)));
    for (double level : {lo[axis], hi[axis]}) {
      for (int i = 0; i < na; ++i) {
        for (int j = 0; j < nb; ++j) {
          Vec3 p;
          p[axis] = level;
          p[a] = lo[a] + (i + 0.5) * ea / na;
          p[b] = lo[b] + (j + 0.5) * eb / nb;
          out.push_back(p);
        }
      }
    }
  }
}

Vec3 truncated_noise(Rng& rng, double sigma) {
  if (sigma == 0.0) return Vec3::Zero();
  for (;;) {
    const Vec3 n(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    if (n.norm() <= 4.0) return sigma * n;
  }
}

Vec3 random_unit(Rng& rng) {
  for (;;) {
    const Vec3 n(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const double len = n.norm();
    if (len > 1e-12) return n / len;
  }
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

Points builtin_model(const std::string& name, double spacing) {
  require(spacing > 0.0, "model spacing must be > 0");
  Points pts;
  if (name == "chair") {
    sample_box_surface(pts, {-0.22, -0.22, 0.42}, {0.22, 0.22, 0.46}, spacing);
    sample_box_surface(pts, {-0.22, 0.18, 0.46}, {0.22, 0.22, 0.92}, spacing);
    for (double x : {-0.22, 0.18})
      for (double y : {-0.22, 0.18}) sample_box_surface(pts, {x, y, 0.0}, {x + 0.04, y + 0.04, 0.42}, spacing);
    // armrest on one side only
    sample_box_surface(pts, {0.18, -0.18, 0.62}, {0.22, 0.18, 0.65}, spacing);
    sample_box_surface(pts, {0.185, -0.16, 0.46}, {0.215, -0.13, 0.62}, spacing);
  } else if (name == "bracket") {
    sample_box_surface(pts, {0.0, 0.0, 0.0}, {0.06, 0.04, 0.004}, spacing);
    sample_box_surface(pts, {0.0, 0.0, 0.004}, {0.004, 0.04, 0.03}, spacing);
    sample_box_surface(pts, {0.004, 0.018, 0.004}, {0.02, 0.022, 0.016}, spacing);
    sample_box_surface(pts, {0.05, 0.04, 0.0}, {0.06, 0.05, 0.004}, spacing);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown built-in model '" + name + "' (expected chair or bracket)");
  }
  const Vec3 c = centroid(pts);
  for (auto& p : pts) p -= c;
  return pts;
}

std::string to_string(RotationMode mode) { return mode == RotationMode::Full ? "full" : "yaw"; }

std::string to_string(ClutterSurface s) {
  switch (s) {
    case ClutterSurface::None: return "none";
    case ClutterSurface::Floor: return "floor";
    case ClutterSurface::BinWalls: return "bin-walls";
  }
  return "none";
}

RotationMode parse_rotation_mode(const std::string& name) {
  if (name == "full") return RotationMode::Full;
  if (name == "yaw") return RotationMode::Yaw;
  fail(ErrorCode::InvalidArgument, "unknown rotation mode '" + name + "' (expected full or yaw)");
}

ClutterSurface parse_clutter_surface(const std::string& name) {
  if (name == "none") return ClutterSurface::None;
  if (name == "floor") return ClutterSurface::Floor;
  if (name == "bin-walls") return ClutterSurface::BinWalls;
  fail(ErrorCode::InvalidArgument, "unknown clutter surface '" + name + "' (expected none, floor or bin-walls)");
}

void PoseBounds::validate() const {
  require(lo.allFinite() && hi.allFinite(), "pose bounds must be finite");
  require((hi.array() >= lo.array()).all(), "pose bounds: hi must be >= lo on every axis");
}

RigidTransform sample_pose(const PoseBounds& bounds, std::uint64_t seed) {
  bounds.validate();
  Rng rng(seed);
  RigidTransform T;
  if (bounds.rotation == RotationMode::Full) {
    for (;;) {
      Eigen::Vector4d q(standard_normal(rng), standard_normal(rng), standard_normal(rng), standard_normal(rng));
      const double n = q.norm();
      if (n < 1e-12) continue;
      q /= n;
      T.R = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
      break;
    }
  } else {
    T.R = axis_angle(Vec3::UnitZ(), uniform(rng, 0.0, kTwoPi));
  }
  for (int a = 0; a < 3; ++a) T.t[a] = bounds.lo[a] + (bounds.hi[a] - bounds.lo[a]) * uniform01(rng);
  return T;
}

void SceneSpec::validate() const {
  bounds.validate();
  require(instances_min <= instances_max, "scene: instances_min must be <= instances_max");
  require(instances_max == 0 || !model.empty(), "scene: model is empty");
  require(min_separation >= 0.0 && std::isfinite(min_separation), "scene: separation must be >= 0");
  require(occlusion_min >= 0.0 && occlusion_max < 1.0 && occlusion_min <= occlusion_max,
          "scene: occlusion fraction must satisfy 0 <= min <= max < 1");
  require(clutter_fraction >= 0.0 && std::isfinite(clutter_fraction), "scene: clutter fraction must be >= 0");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "scene: noise sigma must be >= 0");
  for (const auto& p : model) require(p.allFinite(), "scene: model has non-finite coordinates");
}

std::vector<RigidTransform> SceneGroundTruth::poses() const {
  std::vector<RigidTransform> out;
  for (const auto& inst : instances) out.push_back(inst.pose);
  return out;
}

std::vector<Vec3> SceneGroundTruth::visible_centroids() const {
  std::vector<Vec3> out;
  for (const auto& inst : instances) out.push_back(inst.visible_centroid);
  return out;
}

void SceneGroundTruth::validate() const {
  std::vector<char> seen(point_count, 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const std::string where = "instance " + std::to_string(i);
    if (!inst.pose.is_valid(1e-9)) fail(ErrorCode::Invariant, where + ": pose rotation is not orthonormal with det 1");
    if (!inst.pose.t.allFinite()) fail(ErrorCode::Invariant, where + ": non-finite translation");
    if (!inst.model_ids.empty() && inst.model_ids.size() != inst.visible.size())
      fail(ErrorCode::Invariant, where + ": model_ids and visible differ in length");
    for (auto v : inst.visible) {
      if (v >= point_count) fail(ErrorCode::Invariant, where + ": visible index " + std::to_string(v) + " out of range");
      if (seen[v]) fail(ErrorCode::Invariant, where + ": point " + std::to_string(v) + " belongs to two instances");
      seen[v] = 1;
    }
  }
}

void SceneGroundTruth::validate_against(const PointCloud& scene) const {
  validate();
  if (scene.size() != point_count)
    fail(ErrorCode::Invariant, "manifest expects " + std::to_string(point_count) + " points, cloud has " + std::to_string(scene.size()));
  if (!scene.labels) fail(ErrorCode::Invariant, "scene cloud has no instance_id labels");
  std::vector<int> expected(point_count, -1);
  for (std::size_t i = 0; i < instances.size(); ++i)
    for (auto v : instances[i].visible) expected[v] = static_cast<int>(i);
  for (std::size_t p = 0; p < point_count; ++p)
    if ((*scene.labels)[p] != expected[p])
      fail(ErrorCode::Invariant, "label of point " + std::to_string(p) + " disagrees with the manifest");
}

Scene build_scene(const SceneSpec& spec, const std::string& scene_id) {
  spec.validate();
  Scene scene;
  auto& cloud = scene.cloud;
  auto& truth = scene.truth;
  truth.scene_id = scene_id;
  truth.seed = spec.seed;
  truth.spec_echo = spec_to_json(spec);
  cloud.labels.emplace();

  Rng count_rng(derive_seed({spec.seed, 0}));
  const auto k = static_cast<std::size_t>(uniform_int(count_rng, static_cast<std::int64_t>(spec.instances_min),
                                                      static_cast<std::int64_t>(spec.instances_max)));
  const Vec3 model_center = spec.model.empty() ? Vec3::Zero() : centroid(spec.model);
  const double model_radius = spec.model.empty() ? 0.0 : cloud_radius(spec.model);

  for (std::size_t i = 0; i < k; ++i) {
    InstanceTruth inst;
    bool placed = false;
    for (std::uint64_t attempt = 0; attempt < 1000 && !placed; ++attempt) {
      inst.pose = sample_pose(spec.bounds, derive_seed({spec.seed, 1, i, attempt}));
      inst.center = inst.pose.apply(model_center);
      placed = std::all_of(truth.instances.begin(), truth.instances.end(), [&](const InstanceTruth& other) {
        return (other.center - inst.center).norm() >= spec.min_separation;
      });
    }
    if (!placed)
      fail(ErrorCode::InvalidArgument, "scene: could not place instance " + std::to_string(i) + " at separation " +
                                           std::to_string(spec.min_separation) + " within 1000 attempts");

    Rng occ_rng(derive_seed({spec.seed, 2, i}));
    inst.occlusion = spec.occlusion_min == spec.occlusion_max ? spec.occlusion_min
                                                              : uniform(occ_rng, spec.occlusion_min, spec.occlusion_max);
    const Vec3 normal = random_unit(occ_rng);
    const std::size_t n = spec.model.size();
    const auto cut = static_cast<std::size_t>(std::llround(inst.occlusion * static_cast<double>(n)));
    const std::size_t keep = std::max<std::size_t>(1, n - std::min(cut, n));

    const Points placed_pts = transform(inst.pose, spec.model);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (keep < n) {
      std::vector<double> proj(n);
      for (std::size_t j = 0; j < n; ++j) proj[j] = (placed_pts[j] - inst.center).dot(normal);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return proj[a] != proj[b] ? proj[a] < proj[b] : a < b;
      });
      order.resize(keep);
      std::sort(order.begin(), order.end());
    }
    Points visible_pts;
    for (auto j : order) {
      inst.visible.push_back(cloud.points.size());
      inst.model_ids.push_back(j);
      cloud.points.push_back(placed_pts[j]);
      cloud.labels->push_back(static_cast<int>(i));
      visible_pts.push_back(placed_pts[j]);
    }
    inst.visible_centroid = centroid(visible_pts);
    inst.visible_radius = 0.0;
    for (const auto& p : visible_pts) inst.visible_radius = std::max(inst.visible_radius, (p - inst.visible_centroid).norm());
    truth.instances.push_back(std::move(inst));
  }

  const std::size_t instance_points = cloud.points.size();
  const std::size_t clutter =
      spec.clutter_points + static_cast<std::size_t>(std::llround(spec.clutter_fraction * static_cast<double>(instance_points)));
  if (clutter > 0) {
    Rng rng(derive_seed({spec.seed, 3}));
    const double margin = model_radius;
    Vec3 lo = spec.bounds.lo - Vec3::Constant(margin), hi = spec.bounds.hi + Vec3::Constant(margin);
    double floor_z = lo.z();
    if (spec.surface == ClutterSurface::Floor) {
      double min_z = 0.0;
      for (const auto& p : spec.model) min_z = std::min(min_z, p.z() - model_center.z());
      floor_z = spec.bounds.rotation == RotationMode::Yaw ? spec.bounds.lo.z() + min_z - 0.05 * model_radius
                                                          : spec.bounds.lo.z() - 1.05 * model_radius;
      lo.z() = floor_z;
    }
    const std::size_t on_surface = spec.surface == ClutterSurface::None ? 0 : clutter / 2;
    for (std::size_t c = 0; c < clutter - on_surface; ++c) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = uniform(rng, lo[a], hi[a]);
      cloud.points.push_back(p);
      cloud.labels->push_back(-1);
    }
    if (spec.surface == ClutterSurface::Floor) {
      for (std::size_t c = 0; c < on_surface; ++c) {
        cloud.points.emplace_back(uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()), floor_z);
        cloud.labels->push_back(-1);
      }
    } else if (spec.surface == ClutterSurface::BinWalls) {
      const Vec3 blo = spec.bounds.lo - Vec3::Constant(1.05 * model_radius);
      const Vec3 bhi = spec.bounds.hi + Vec3::Constant(1.05 * model_radius);
      const Vec3 e = bhi - blo;
      // bottom, x walls, y walls weighted by area
      const double areas[3] = {e.x() * e.y(), 2.0 * e.y() * e.z(), 2.0 * e.x() * e.z()};
      const double total = areas[0] + areas[1] + areas[2];
      for (std::size_t c = 0; c < on_surface; ++c) {
        const double pick = uniform01(rng) * total;
        Vec3 p(uniform(rng, blo.x(), bhi.x()), uniform(rng, blo.y(), bhi.y()), uniform(rng, blo.z(), bhi.z()));
        const bool upper = uniform01(rng) < 0.5;
        if (pick < areas[0]) p.z() = blo.z();
        else if (pick < areas[0] + areas[1]) p.x() = upper ? bhi.x() : blo.x();
        else p.y() = upper ? bhi.y() : blo.y();
        cloud.points.push_back(p);
        cloud.labels->push_back(-1);
      }
    }
  }

  if (spec.noise_sigma > 0.0) {
    Rng rng(derive_seed({spec.seed, 4}));
    for (auto& p : cloud.points) p += truncated_noise(rng, spec.noise_sigma);
  }
  truth.point_count = cloud.points.size();
  return scene;
}

std::string spec_to_json(const SceneSpec& s) {
  json j;
  j["model_points"] = s.model.size();
  j["instances_min"] = s.instances_min;
  j["instances_max"] = s.instances_max;
  j["bounds_lo"] = vec_json(s.bounds.lo);
  j["bounds_hi"] = vec_json(s.bounds.hi);
  j["rotation"] = to_string(s.bounds.rotation);
  j["min_separation"] = s.min_separation;
  j["occlusion_min"] = s.occlusion_min;
  j["occlusion_max"] = s.occlusion_max;
  j["clutter_points"] = s.clutter_points;
  j["clutter_fraction"] = s.clutter_fraction;
  j["surface"] = to_string(s.surface);
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  return j.dump();
}

std::string manifest_to_string(const SceneGroundTruth& truth) {
  json j;
  j["format"] = "fmreg-manifest";
  j["version"] = 1;
  j["scene_id"] = truth.scene_id;
  j["seed"] = truth.seed;
  j["point_count"] = truth.point_count;
  j["spec"] = truth.spec_echo.empty() ? json::object() : json::parse(truth.spec_echo);
  json list = json::array();
  for (const auto& inst : truth.instances) {
    json e;
    json r = json::array();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r.push_back(inst.pose.R(a, b));
    e["R"] = r;
    e["t"] = vec_json(inst.pose.t);
    e["center"] = vec_json(inst.center);
    e["visible_centroid"] = vec_json(inst.visible_centroid);
    e["visible_radius"] = inst.visible_radius;
    e["occlusion"] = inst.occlusion;
    e["visible"] = inst.visible;
    e["model_ids"] = inst.model_ids;
    list.push_back(std::move(e));
  }
  j["instances"] = std::move(list);
  return j.dump(1) + "\n";
}

void emit_manifest(const SceneGroundTruth& truth, const std::string& path) {
  truth.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write manifest '" + path + "'");
  out << manifest_to_string(truth);
  if (!out) fail(ErrorCode::Io, "failed writing manifest '" + path + "'");
}

namespace {

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

struct FieldReader {
  const std::string& origin;

  [[noreturn]] void bad(const std::string& field, const std::string& why) const {
    fail(ErrorCode::Parse, origin + ": field '" + field + "': " + why);
  }
  const json& at(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object() || !obj.contains(key)) bad(path + key, "missing");
    return obj.at(key);
  }
  double number(const json& v, const std::string& field) const {
    if (!v.is_number()) bad(field, "expected a number");
    return v.get<double>();
  }
  Vec3 vec3(const json& v, const std::string& field) const {
    if (!v.is_array() || v.size() != 3) bad(field, "expected an array of 3 numbers");
    return {number(v[0], field), number(v[1], field), number(v[2], field)};
  }
  std::vector<std::size_t> indices(const json& v, const std::string& field) const {
    if (!v.is_array()) bad(field, "expected an array of indices");
    std::vector<std::size_t> out;
    out.reserve(v.size());
    for (const auto& e : v) {
      if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0)) bad(field, "expected non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }
};

}  // namespace

SceneGroundTruth parse_manifest(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, origin + ": line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  FieldReader rd{origin};
  if (!j.is_object()) rd.bad("<root>", "expected an object");
  SceneGroundTruth t;
  const auto& id = rd.at(j, "scene_id", "");
  if (!id.is_string()) rd.bad("scene_id", "expected a string");
  t.scene_id = id.get<std::string>();
  const auto& seed = rd.at(j, "seed", "");
  if (!seed.is_number_integer()) rd.bad("seed", "expected an integer");
  t.seed = seed.get<std::uint64_t>();
  const auto& count = rd.at(j, "point_count", "");
  if (!count.is_number_integer() || count.get<std::int64_t>() < 0) rd.bad("point_count", "expected a non-negative integer");
  t.point_count = count.get<std::size_t>();
  if (j.contains("spec")) t.spec_echo = j["spec"].dump();
  const auto& list = rd.at(j, "instances", "");
  if (!list.is_array()) rd.bad("instances", "expected an array");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string p = "instances[" + std::to_string(i) + "].";
    const auto& e = list[i];
    InstanceTruth inst;
    const auto& r = rd.at(e, "R", p);
    if (!r.is_array() || r.size() != 9) rd.bad(p + "R", "expected 9 numbers (row-major)");
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) inst.pose.R(a, b) = rd.number(r[static_cast<std::size_t>(3 * a + b)], p + "R");
    inst.pose.t = rd.vec3(rd.at(e, "t", p), p + "t");
    inst.visible = rd.indices(rd.at(e, "visible", p), p + "visible");
    if (e.contains("model_ids")) inst.model_ids = rd.indices(e["model_ids"], p + "model_ids");
    inst.center = e.contains("center") ? rd.vec3(e["center"], p + "center") : inst.pose.t;
    if (e.contains("visible_centroid")) {
      inst.visible_centroid = rd.vec3(e["visible_centroid"], p + "visible_centroid");
    } else {
      inst.visible_centroid = inst.center;
    }
    if (e.contains("visible_radius")) inst.visible_radius = rd.number(e["visible_radius"], p + "visible_radius");
    if (e.contains("occlusion")) inst.occlusion = rd.number(e["occlusion"], p + "occlusion");
    t.instances.push_back(std::move(inst));
  }
  t.validate();
  return t;
}

SceneGroundTruth load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open manifest '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path);
}

SceneProfile builtin_profile(const std::string& name) {
  SceneProfile p;
  p.name = name;
  if (name == "scan2cad-like") {
    p.model = "chair";
    p.voxel = 0.025;
    p.model_spacing = 0.0125;
    p.bounds = {Vec3(0.0, 0.0, 0.0), Vec3(5.0, 5.0, 0.0), RotationMode::Yaw};
    p.surface = ClutterSurface::Floor;
    p.noise_sigma = 0.0025;
  } else if (name == "robi-like") {
    p.model = "bracket";
    p.voxel = 0.0015;
    p.model_spacing = 0.00075;
    p.bounds = {Vec3(0.0, 0.0, 0.0), Vec3(0.3, 0.3, 0.08), RotationMode::Full};
    p.surface = ClutterSurface::BinWalls;
    p.noise_sigma = 0.00015;
  } else {
    fail(ErrorCode::InvalidArgument, "unknown profile '" + name + "' (expected scan2cad-like or robi-like)");
  }
  return p;
}

void SceneProfile::validate() const {
  require(model == "chair" || model == "bracket", "profile: model must be chair or bracket");
  require(voxel > 0.0 && model_spacing > 0.0, "profile: voxel and model spacing must be > 0");
  bounds.validate();
  require(instances_min <= instances_max, "profile: instances_min must be <= instances_max");
  require(separation_factor >= 0.0 && clutter_fraction >= 0.0 && noise_sigma >= 0.0, "profile: negative scene parameter");
  require(occlusion_min >= 0.0 && occlusion_min <= occlusion_max && occlusion_max < 1.0, "profile: occlusion must satisfy 0 <= min <= max < 1");
}

std::vector<std::string> builtin_profile_names() { return {"scan2cad-like", "robi-like"}; }

SceneSpec spec_from_profile(const SceneProfile& profile, const Points& model, std::uint64_t seed) {
  SceneSpec s;
  s.model = model;
  s.instances_min = profile.instances_min;
  s.instances_max = profile.instances_max;
  s.bounds = profile.bounds;
  s.min_separation = profile.separation_factor * (model.empty() ? 0.0 : cloud_radius(model));
  s.clutter_fraction = profile.clutter_fraction;
  s.surface = profile.surface;
  s.noise_sigma = profile.noise_sigma;
  s.occlusion_min = profile.occlusion_min;
  s.occlusion_max = profile.occlusion_max;
  s.seed = seed;
  return s;
}

}  // namespace fmreg
