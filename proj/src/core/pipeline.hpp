#pragma once

#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "descriptors.hpp"
#include "focusing.hpp"
#include "heads.hpp"
#include "matching.hpp"
#include "records.hpp"
#include "scene.hpp"

namespace fmreg {

/// Optional learned parameters. Missing heads fall back to the untrained ones.
struct NetworkWeights {
  std::optional<AttentionWeights> descriptor;  ///< attention-enhanced provider stack
  std::optional<AttentionWeights> self_attention;
  std::optional<AttentionWeights> cross_attention;
  std::optional<FocusHeads> focus_heads;
  std::optional<MatchHeads> match_heads;

  /// Reads every non-empty path in `io`.
  static NetworkWeights load(const IoPaths& io);
};

struct SceneInputs {
  std::string scene_id;
  PointCloud scene;
  Points model;
  std::optional<SceneGroundTruth> truth;  ///< required by the oracle provider and oracle stages
};

struct RunOutput {
  std::vector<RegistrationRecord> records;  ///< proposals by id, then dropped centers
  CenterSet centers;
  std::vector<Proposal> proposals;
  std::size_t dense_scene_points = 0, dense_model_points = 0;
};

/// Feature maps for the dense (voxel-filtered) scene and model.
OracleFeatures compute_features(const PointCloud& scene_dense, const Points& model_dense,
                                const std::optional<SceneGroundTruth>& truth, const DescriptorProviderConfig& config,
                                const NetworkWeights& weights, std::uint64_t seed);

/// Focus then match for one scene. Per-proposal work runs on `config.threads`
/// threads; the output does not depend on the thread count.
RunOutput run_registration(const SceneInputs& inputs, const RunConfig& config, const NetworkWeights& weights);

struct GenerateOptions {
  std::optional<std::size_t> instances;
  std::optional<double> occlusion;
  std::optional<double> clutter_fraction;
  std::optional<double> noise_sigma;
  std::uint64_t seed = 0;
  std::string scene_id;  ///< defaults to "<profile>-<seed>"
};

struct GeneratedScene {
  Scene scene;
  Points model;
};

GeneratedScene generate_scene(const SceneProfile& profile, const GenerateOptions& options);

/// <dir>/<scene_id>.proposals.json lists id, center, radius, count and file for
/// each proposal; each subcloud goes to <dir>/<scene_id>.proposal-<id>.ply.
void write_proposal_dump(const std::string& dir, const std::string& scene_id, const std::vector<Proposal>& proposals);

/// Full registration run from files named in `config.io` (scene, model, optional
/// manifest). The scene id comes from the manifest, else the scene file stem.
SceneInputs load_scene_inputs(const RunConfig& config);

}  // namespace fmreg
