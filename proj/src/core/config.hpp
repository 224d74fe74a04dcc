#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "descriptors.hpp"
#include "eval.hpp"
#include "focusing.hpp"
#include "matching.hpp"
#include "scene.hpp"

namespace fmreg {

struct IoPaths {
  std::string scene, model, manifest, out;
  std::string descriptor_weights;  ///< self-attention stack of the attention-enhanced provider
  std::string self_weights, cross_weights, focus_heads, match_heads;
};

/// Everything a run depends on. Lengths that scale with the voxel size are
/// stored as factors and resolved by the accessors below.
struct RunConfig {
  std::string profile = "scan2cad-like";
  SceneProfile scene;
  std::uint64_t seed = 0;
  unsigned threads = 0;  ///< 0: available parallelism

  DescriptorProviderConfig descriptor;
  double descriptor_radius_factor = 4.0;

  FocusParams focus;
  double sampled_voxel_factor = 8.0;
  bool focus_oracle = false;

  MatchParams match;
  double anchor_voxel_factor = 8.0;
  double inlier_factor = 2.0;
  bool match_oracle = false;

  MetricThresholds thresholds;
  IoPaths io;

  double voxel() const { return scene.voxel; }
  DescriptorProviderConfig resolved_descriptor() const;
  FocusParams resolved_focus() const;
  MatchParams resolved_match() const;
  MetricThresholds resolved_thresholds() const;

  /// Throws Error(InvalidArgument) naming the first out-of-range field.
  void validate() const;

  /// Assigns one dotted key ("focus.min_pts") from its text form.
  void set(const std::string& key, const std::string& value);
  /// All keys in echo order.
  static std::vector<std::string> keys();
  /// Value text as echoed, with string quotes removed.
  std::string get(const std::string& key) const;

  /// Full TOML-style text; parsing it reproduces this configuration.
  std::string echo() const;
};

/// Key/value pairs of a TOML-style text ("[section]" headers prefix keys).
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin);

/// Loads a named profile: a built-in one, or `<dir>/<name>.toml` from the
/// FMREG_PROFILE_DIR directory.
RunConfig profile_config(const std::string& name);

/// Builds the effective configuration: the profile (override, else the file's
/// `profile` key, else the default), then the file's keys, then overrides.
RunConfig load_config(const std::string& config_text, const std::string& origin, const std::string& profile_override,
                      const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace fmreg
