#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "types.hpp"

namespace fmreg {

/// Surface samples of a built-in model ("chair" or "bracket") at roughly the
/// given spacing, centered on its centroid.
Points builtin_model(const std::string& name, double spacing);

enum class RotationMode { Full, Yaw };
enum class ClutterSurface { None, Floor, BinWalls };

std::string to_string(RotationMode mode);
std::string to_string(ClutterSurface surface);
RotationMode parse_rotation_mode(const std::string& name);
ClutterSurface parse_clutter_surface(const std::string& name);

struct PoseBounds {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  RotationMode rotation = RotationMode::Full;

  void validate() const;
};

/// Uniform rotation (normalized Gaussian quaternion, or a uniform yaw about z)
/// and a uniform translation in the box.
RigidTransform sample_pose(const PoseBounds& bounds, std::uint64_t seed);

struct SceneSpec {
  Points model;
  std::size_t instances_min = 1;
  std::size_t instances_max = 1;
  PoseBounds bounds;
  double min_separation = 0.0;
  double occlusion_min = 0.0;
  double occlusion_max = 0.0;
  std::size_t clutter_points = 0;  ///< fixed count
  double clutter_fraction = 0.0;   ///< extra clutter relative to the instance point count
  ClutterSurface surface = ClutterSurface::None;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct InstanceTruth {
  RigidTransform pose;                 ///< model → scene
  std::vector<std::size_t> visible;    ///< scene indices of the instance's points
  std::vector<std::size_t> model_ids;  ///< source model index of each visible point
  Vec3 center = Vec3::Zero();          ///< transformed model centroid
  Vec3 visible_centroid = Vec3::Zero();  ///< pre-noise centroid of the visible points
  double visible_radius = 0.0;         ///< max distance from visible_centroid
  double occlusion = 0.0;              ///< requested fraction
};

struct SceneGroundTruth {
  std::string scene_id;
  std::uint64_t seed = 0;
  std::size_t point_count = 0;
  std::vector<InstanceTruth> instances;
  std::string spec_echo;  ///< JSON text of the generating spec (without the model)

  std::vector<RigidTransform> poses() const;
  std::vector<Vec3> visible_centroids() const;
  /// Throws Error(Invariant) for invalid poses, out-of-range or overlapping visible sets.
  void validate() const;
  /// Throws Error(Invariant) when the cloud's size or labels disagree.
  void validate_against(const PointCloud& scene) const;
};

struct Scene {
  PointCloud cloud;  ///< with labels
  SceneGroundTruth truth;
};

/// Places instances with rejection sampling on center separation, cuts each
/// with a random half-space, adds clutter, then noise. Labels and visible sets
/// describe the pre-noise geometry.
Scene build_scene(const SceneSpec& spec, const std::string& scene_id = "scene");

std::string spec_to_json(const SceneSpec& spec);

void emit_manifest(const SceneGroundTruth& truth, const std::string& path);
std::string manifest_to_string(const SceneGroundTruth& truth);
SceneGroundTruth load_manifest(const std::string& path);
SceneGroundTruth parse_manifest(const std::string& text, const std::string& origin = "<manifest>");

struct SceneProfile {
  std::string name;
  std::string model;
  double voxel = 0.0;
  double model_spacing = 0.0;
  PoseBounds bounds;
  std::size_t instances_min = 4, instances_max = 16;
  double separation_factor = 1.5;  ///< × model radius
  double clutter_fraction = 0.2;
  ClutterSurface surface = ClutterSurface::None;
  double noise_sigma = 0.0;
  double occlusion_min = 0.0;
  double occlusion_max = 0.0;

  void validate() const;
};

/// "scan2cad-like" or "robi-like".
SceneProfile builtin_profile(const std::string& name);
std::vector<std::string> builtin_profile_names();

/// SceneSpec for a profile; `model` must be the profile model at its spacing.
SceneSpec spec_from_profile(const SceneProfile& profile, const Points& model, std::uint64_t seed);

}  // namespace fmreg
