#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "descriptors.hpp"
#include "focusing.hpp"
#include "heads.hpp"
#include "types.hpp"

namespace fmreg {

/// Anchors (voxel centroids of the dense cloud) and the dense points assigned
/// to each by nearest-anchor grouping.
struct PatchSet {
  Points anchors;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> owner;  ///< anchor index of every dense point
};

PatchSet build_patches(std::span<const Vec3> dense, double anchor_voxel);

/// Per-dense-point value of its anchor.
std::vector<double> broadcast_to_dense(std::span<const double> anchor_values, const PatchSet& patches);

struct CoarseMatch {
  std::size_t proposal_anchor = 0;
  std::size_t model_anchor = 0;
  double score = 0.0;
};

/// Row indices of the k largest values (ties to the lower index), descending.
std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k);

/// Mutual top-k over the cosine similarity of the two anchor sets. Sorted by
/// descending score, then by (proposal, model) index.
std::vector<CoarseMatch> coarse_match(const Eigen::MatrixXd& proposal_anchors, const Eigen::MatrixXd& model_anchors,
                                      std::size_t k);

/// (n+1)×(m+1) transport plan whose last row and column are dustbins.
struct AssignmentMatrix {
  Eigen::MatrixXd plan;
  std::size_t coarse_index = 0;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(plan.rows()) - 1; }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(plan.cols()) - 1; }
};

/// Optimal-transport normalization with dustbins. Interior rows and columns
/// have unit target mass; the dustbin row holds m and the dustbin column n.
/// Alternates row and column normalization `iterations` times, starting from
/// rows. Runs in the scaling domain when the score range is small enough for
/// exp() and in the log domain otherwise.
AssignmentMatrix sinkhorn_transport(const Eigen::MatrixXd& scores, double dustbin, std::size_t iterations);

/// Mutual top-k cells of the interior of a plan as (row, col, mass).
struct PlanCell {
  std::size_t row, col;
  double mass;
};
std::vector<PlanCell> mutual_top_k(const Eigen::MatrixXd& interior, std::size_t k);

struct DenseCorrespondence {
  std::size_t proposal_index = 0;  ///< dense proposal point
  std::size_t model_index = 0;     ///< dense model point
  double weight = 0.0;
};

struct DenseMatchParams {
  double mask_threshold = 0.5;
  std::size_t k = 3;
  std::size_t iterations = 100;
  double dustbin = 0.0;
  double score_scale = 20.0;  ///< inverse temperature applied to cosine similarity
  double min_confidence = 0.9;

  void validate() const;
};

/// Dense matching inside one coarse patch pair. Proposal members whose
/// instance·overlap score is ≤ threshold are dropped; the remaining members are
/// scored against the model patch, transported, and mutual top-k cells with
/// mass above min_confidence become correspondences. Empty when masking empties
/// the patch.
std::vector<DenseCorrespondence> dense_match(const CoarseMatch& coarse, const PatchSet& proposal_patches,
                                             const PatchSet& model_patches, const Eigen::MatrixXd& proposal_features,
                                             const Eigen::MatrixXd& model_features,
                                             std::span<const double> instance_mask,
                                             std::span<const double> overlap_mask, const DenseMatchParams& params);

struct Correspondence {
  std::size_t scene_index = 0;  ///< index into the dense scene (or proposal cloud)
  std::size_t model_index = 0;  ///< index into the dense model
  Vec3 scene_point = Vec3::Zero();
  Vec3 model_point = Vec3::Zero();
  double weight = 0.0;
};

struct InstanceRegistration {
  std::size_t proposal_id = 0;
  Vec3 center = Vec3::Zero();
  RigidTransform pose;  ///< model → scene
  std::vector<Correspondence> correspondences;
  std::size_t inlier_count = 0;
  std::size_t candidate_count = 0;
  std::size_t best_candidate_inliers = 0;  ///< max inliers over the unrefined per-group candidates
  bool failed = false;
  std::string diagnostic;
};

struct LocalToGlobalParams {
  double inlier_radius = 0.05;
  std::size_t rounds = 5;
  double tighten_floor = 0.25;  // fraction of inlier_radius; >= 1 disables tightening

  void validate() const;
};

/// One weighted-Kabsch candidate per group, polished once on its own inliers
/// and scored by inlier count over the union of all groups. The best is
/// re-estimated on its inliers for up to `rounds` rounds (kept only while the
/// count does not drop), then re-fit on pairs within halving radii down to
/// tighten_floor · inlier_radius while at least half of the inliers remain.
/// The result holds the inliers of the final pose. Throws
/// Error(RegistrationFailed) when every group is degenerate.
InstanceRegistration local_to_global(const std::vector<std::vector<DenseCorrespondence>>& groups,
                                     std::span<const Vec3> proposal_points, std::span<const Vec3> model_points,
                                     const LocalToGlobalParams& params);

/// Model-side state shared by every proposal.
struct ModelContext {
  Points dense;
  Eigen::MatrixXd dense_features;  ///< L2-normalized rows
  PatchSet patches;
  FeatureMap anchor_features;      ///< pooled, not normalized
  double radius = 0.0;

  static ModelContext build(Points dense, const FeatureMap& features, double anchor_voxel);
};

struct MatchParams {
  double anchor_voxel = 0.2;
  std::size_t coarse_k = 3;
  DenseMatchParams dense;
  LocalToGlobalParams l2g;
  std::size_t geo_width = 8;
  std::size_t geo_knn = 8;
  /// Keep only the heaviest correspondence of each proposal point across all
  /// patch pairs.
  bool unique_scene_points = true;

  void validate() const;
};

/// Per proposal point, drops every correspondence but the heaviest one (ties
/// to the earlier group, then the earlier entry). Group order is preserved.
void keep_heaviest_per_point(std::vector<std::vector<DenseCorrespondence>>& groups, std::size_t point_count);

/// Dense ground-truth masks for one proposal.
struct OracleMasks {
  std::vector<double> instance;
  std::vector<double> overlap;
};

struct MatchNetwork {
  const MatchHeads* heads = nullptr;
  const AttentionWeights* self_weights = nullptr;   ///< optional
  const AttentionWeights* cross_weights = nullptr;  ///< optional
};

/// Instance mask at anchor resolution from [features | geodesic embedding].
MaskScores predict_instance_mask(const FeatureMap& anchor_features, const Eigen::MatrixXd& geo, const MatchHeads& heads);

/// Overlap mask: self-attention on both anchor sets, cross-attention from
/// proposal to model, the overlap head on [Z_o | G_o], then nearest-anchor
/// broadcast to dense resolution.
MaskScores predict_overlap_mask(const FeatureMap& anchor_features, const FeatureMap& model_anchor_features,
                                const Eigen::MatrixXd& geo, const MatchNetwork& net, const PatchSet& patches);

/// Subsample → masks → coarse match → dense match → local-to-global for one
/// proposal. Failures are reported in the result rather than thrown.
InstanceRegistration register_proposal(const Proposal& proposal, const FeatureMap& proposal_features,
                                       const ModelContext& model, const MatchNetwork& net,
                                       const OracleMasks* oracle_masks, const MatchParams& params);

}  // namespace fmreg
