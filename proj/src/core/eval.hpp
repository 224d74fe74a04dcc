#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "records.hpp"
#include "scene.hpp"
#include "types.hpp"

namespace fmreg {

struct MetricThresholds {
  double voxel = 0.025;
  double rte_factor = 4.0;  ///< success needs RTE ≤ rte_factor · voxel
  double rre_max = 15.0;    ///< degrees
  double center_tol_factor = 0.1;
  double pir_factor = 2.0;  ///< PIR inlier radius = pir_factor · voxel

  double rte_max() const { return rte_factor * voxel; }
  double pir_radius() const { return pir_factor * voxel; }
  void validate() const;
};

struct PoseAssignment {
  std::vector<int> pred_to_gt;  ///< -1 when unassigned
  std::vector<int> gt_to_pred;
  std::size_t correct = 0;
};

/// Greedy one-to-one assignment over (prediction, gt) pairs passing both
/// thresholds, in ascending RTE order (ties by prediction then gt index).
PoseAssignment match_poses_to_gt(std::span<const RigidTransform> predictions, std::span<const RigidTransform> gt,
                                 const MetricThresholds& thr);

struct RegistrationMetrics {
  std::optional<double> mr;  ///< undefined without ground truth
  std::optional<double> mp;  ///< undefined without predictions
  double mf = 0.0;
  bool skipped = false;      ///< no ground truth and no predictions
  std::string diagnostic;
};

RegistrationMetrics compute_mr_mp_mf(std::size_t registered, std::size_t gt_total, std::size_t correct,
                                     std::size_t pred_total);

/// 2·MP·MR/(MP+MR), 0 when both are 0.
double harmonic_mean(double mp, double mr);

struct PirResult {
  std::optional<double> mean;
  std::vector<std::optional<double>> per_instance;
  std::vector<std::string> diagnostics;
};

/// Per instance, the fraction of correspondences (p scene, q model) with
/// ‖T(q) − p‖ ≤ radius under that instance's ground-truth pose; then the mean
/// over instances that have correspondences.
PirResult compute_pir(const std::vector<std::vector<Correspondence>>& correspondences,
                      std::span<const RigidTransform> gt_poses, double radius);

struct CenterMetrics {
  double mr = 0.0;
  std::optional<double> mp;
  std::optional<double> rmse;  ///< over matched pairs
  std::size_t matched = 0;
};

/// Greedy one-to-one matching by ascending distance, accepting a pair when the
/// distance is ≤ tol_factor · radius of the ground-truth instance.
CenterMetrics center_metrics(std::span<const Vec3> predicted, std::span<const Vec3> gt_centers,
                             std::span<const double> gt_radii, double tol_factor);

struct InstanceRow {
  std::size_t proposal_id = 0;
  int gt_instance = -1;  ///< assigned, else nearest by RTE
  double rre = 0.0, rte = 0.0;
  bool correct = false;
  std::optional<double> pir;
};

struct SceneReport {
  std::string scene_id;
  std::size_t gt_count = 0, pred_count = 0, failed_count = 0, correct = 0, registered = 0;
  double occlusion = 0.0;  ///< mean requested occlusion over instances
  RegistrationMetrics reg;
  std::optional<double> pir;
  CenterMetrics centers;
  std::vector<InstanceRow> instances;
  std::vector<std::string> diagnostics;
};

struct AggregateReport {
  std::optional<double> mr, mp, mf, pir, center_mr, center_mp, center_rmse;
  std::size_t scenes = 0, skipped = 0;
};

struct EvalReport {
  std::vector<SceneReport> scenes;
  AggregateReport aggregate;  ///< unweighted means of per-scene values
  MetricThresholds thresholds;
};

/// Scores one scene. Failed records are not predictions; their centers still
/// count for center detection.
SceneReport evaluate_scene(const SceneGroundTruth& truth, std::span<const RegistrationRecord> records,
                           const MetricThresholds& thr);

/// Records are grouped by scene id; every record must name a known scene.
EvalReport evaluate(const std::vector<SceneGroundTruth>& truths, const std::vector<RegistrationRecord>& records,
                    const MetricThresholds& thr);

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

/// Groups CSV scene rows by occlusion and writes "occlusion MR MP MF scenes"
/// lines for plotting.
std::string csv_to_plot_data(const std::vector<std::string>& csv_texts);

}  // namespace fmreg
