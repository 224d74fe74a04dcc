#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "descriptors.hpp"
#include "heads.hpp"
#include "types.hpp"

namespace fmreg {

using OffsetField = std::vector<Vec3>;
using MaskScores = std::vector<double>;

struct CenterSet {
  std::vector<Vec3> centers;
  std::vector<std::vector<std::size_t>> members;  ///< indices into the clustered points
};

struct Proposal {
  std::size_t id = 0;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  std::vector<std::size_t> indices;  ///< into the dense scene, ascending
  PointCloud cloud;                  ///< gather(scene, indices)
};

struct DroppedProposal {
  Vec3 center = Vec3::Zero();
  std::string diagnostic;
};

struct ProposalSet {
  std::vector<Proposal> proposals;
  std::vector<DroppedProposal> dropped;
};

OffsetField predict_offsets(const FeatureMap& features, const FocusHeads& heads);

/// Logistic of the mask head over [features | geodesic embedding].
MaskScores predict_point_mask(const FeatureMap& features, const Eigen::MatrixXd& geo, const Perceptron& head);

struct ShiftedPoints {
  Points points;                   ///< p_i + v_i for surviving points
  std::vector<std::size_t> index;  ///< surviving source indices, ascending
};

/// Keeps points whose mask score is strictly above `threshold` and moves them
/// by their offset.
ShiftedPoints shift_and_filter(std::span<const Vec3> points, std::span<const Vec3> offsets,
                               std::span<const double> mask, double threshold);

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are numbered in order of their
/// lowest-index core point; border points join the lowest-numbered cluster
/// that reaches them; everything else is -1.
std::vector<int> dbscan(std::span<const Vec3> points, double eps, std::size_t min_pts);

/// One center per non-noise cluster: the arithmetic mean of its members.
CenterSet compute_centers(std::span<const Vec3> points, std::span<const int> labels);

/// Ball query of radius scale·model_radius around every center. Proposals
/// larger than `max_points` are uniformly subsampled with a seeded RNG.
/// Output is sorted by center (lexicographic) and ids follow that order;
/// empty balls are reported in `dropped`.
ProposalSet generate_proposals(const PointCloud& scene_dense, const CenterSet& centers, double model_radius,
                               double scale, std::size_t max_points, std::uint64_t seed);

struct FocusParams {
  double sampled_voxel = 0.2;
  double eps_factor = 0.25;  ///< DBSCAN eps = eps_factor · model radius
  std::size_t min_pts = 5;
  double mask_threshold = 0.5;
  double proposal_scale = 1.2;
  std::size_t max_points = 4096;
  std::size_t geo_width = 8;
  std::size_t geo_knn = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground-truth injection for stage one: per-sampled-point offsets toward the
/// instance centroid and binary masks from instance labels.
struct FocusOracle {
  std::vector<Vec3> instance_centroids;  ///< indexed by instance label
};

struct FocusInputs {
  const PointCloud* scene_dense = nullptr;
  const FeatureMap* scene_features = nullptr;  ///< dense-resolution scene features
  const FeatureMap* model_features = nullptr;  ///< sampled-resolution model features
  double model_radius = 0.0;
  const AttentionWeights* self_weights = nullptr;   ///< optional
  const AttentionWeights* cross_weights = nullptr;  ///< optional, stacked layers
  const FocusHeads* heads = nullptr;
  const FocusOracle* oracle = nullptr;              ///< requires scene labels
};

struct FocusResult {
  PointCloud sampled;
  std::vector<std::vector<std::size_t>> sampled_sources;
  OffsetField offsets;
  MaskScores mask;
  ShiftedPoints shifted;
  std::vector<int> cluster_labels;
  CenterSet centers;
  ProposalSet proposals;
};

/// Subsample → features (self- then stacked cross-attention) → offsets → mask →
/// shift/filter → DBSCAN → centers → proposals.
FocusResult focus_pipeline(const FocusInputs& inputs, const FocusParams& params);

/// Farthest-point seeds at the given spacing, starting from index 0.
std::vector<std::size_t> spaced_seeds(std::span<const Vec3> points, double spacing);

}  // namespace fmreg
