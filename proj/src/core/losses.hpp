#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "types.hpp"

namespace fmreg {

struct CircleLossParams {
  double margin_pos = 0.1;  ///< Δ_p
  double margin_neg = 1.4;  ///< Δ_n
  double gamma = 10.0;
  /// false: unclamped weights, β_p = γ(d − Δ_p), β_n = γ(Δ_n − d).
  /// true: weights clamped at zero, so far negatives and close positives stop
  /// contributing.
  bool clamp_weights = false;

  void validate() const;
};

struct CircleAnchor {
  std::vector<double> positive_distances;  ///< d_i^j over the positive set
  std::vector<double> positive_overlaps;   ///< o_i^j in [0, 1]
  std::vector<double> negative_distances;  ///< d_i^k over the negative set
};

/// Mean over anchors of log(1 + Σ_pos exp(λ β_p (d − Δ_p)) · Σ_neg exp(β_n (Δ_n − d))),
/// with λ = √o. Evaluated as softplus(logsumexp_pos + logsumexp_neg).
double circle_loss(std::span<const CircleAnchor> anchors, const CircleLossParams& params);

/// Gradient of circle_loss with respect to every distance, laid out like the input.
struct CircleLossGradient {
  std::vector<std::vector<double>> positive;
  std::vector<std::vector<double>> negative;
};
CircleLossGradient circle_loss_gradient(std::span<const CircleAnchor> anchors, const CircleLossParams& params);

/// Mean over foreground points of ‖o_i − (c_i − p_i)‖.
double offset_l1_loss(std::span<const Vec3> offsets, std::span<const Vec3> points, std::span<const Vec3> centroids,
                      const std::vector<bool>& foreground);
std::vector<Vec3> offset_l1_gradient(std::span<const Vec3> offsets, std::span<const Vec3> points,
                                     std::span<const Vec3> centroids, const std::vector<bool>& foreground);

struct DirectionLossResult {
  double value = 0.0;
  std::size_t zero_norm_terms = 0;  ///< counted in the denominator, contribute 0
};

/// Negative mean cosine similarity between o_i and c_i − p_i over foreground.
DirectionLossResult direction_loss(std::span<const Vec3> offsets, std::span<const Vec3> points,
                                   std::span<const Vec3> centroids, const std::vector<bool>& foreground);
std::vector<Vec3> direction_loss_gradient(std::span<const Vec3> offsets, std::span<const Vec3> points,
                                          std::span<const Vec3> centroids, const std::vector<bool>& foreground);

struct MatchSupervision {
  std::vector<std::pair<std::size_t, std::size_t>> matched;  ///< ground-truth (row, col) pairs
  std::vector<std::size_t> unmatched_rows;
  std::vector<std::size_t> unmatched_cols;
};

struct NllResult {
  double value = 0.0;
  std::string diagnostic;  ///< set when a required cell holds zero mass
};

/// Per-plan NLL over required cells (matched pairs, row/column dustbins) for
/// each plan, then the mean over plans.
NllResult nll_matching_loss(std::span<const Eigen::MatrixXd> plans, std::span<const MatchSupervision> supervision);
/// d(loss)/d(plan) for each plan.
std::vector<Eigen::MatrixXd> nll_matching_gradient(std::span<const Eigen::MatrixXd> plans,
                                                   std::span<const MatchSupervision> supervision);

struct MaskLossOptions {
  /// Conventional dice, 1 − (2·m·g + 1)/(|m| + |g| + 1), zero at a perfect match.
  bool standard_dice = false;
};

/// BCE(m, g) + 1 − 2(m·g + 1)/(|m| + |g| + 1), where |·| sums entries and BCE
/// is the mean over entries with logs clamped at 1e-12.
double mask_loss(std::span<const double> predicted, std::span<const double> target, const MaskLossOptions& options = {});
std::vector<double> mask_loss_gradient(std::span<const double> predicted, std::span<const double> target,
                                       const MaskLossOptions& options = {});
/// Mean of mask_loss over masks.
double mask_loss_batch(std::span<const std::vector<double>> predicted, std::span<const std::vector<double>> target,
                       const MaskLossOptions& options = {});

struct FocusingLossTerms {
  double circle = 0.0, reg = 0.0, dir = 0.0;
};
struct MatchingLossTerms {
  double circle = 0.0, nll = 0.0, overlap_mask = 0.0, instance_mask = 0.0;
};
struct TotalLosses {
  double focusing = 0.0, matching = 0.0;
};

/// Unweighted sums. Throws on any non-finite component.
TotalLosses total_losses(const FocusingLossTerms& focusing, const MatchingLossTerms& matching);

// ---------------------------------------------------------------------------

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;  ///< ‖fd − reference‖∞ / max(‖reference‖∞, 1e-8)
  bool used_analytic = false;
  bool non_smooth = false;     ///< a kink or jump was detected around the point
  std::size_t worst_coordinate = 0;
  bool passed = false;
};

/// Central differences at step h. With an analytic gradient, compares against
/// it; without one, compares steps h and h/2 (Richardson self-consistency).
/// Points where forward and backward differences disagree beyond smooth-curvature
/// scale, or where halving the step changes the estimate markedly, are flagged
/// non-smooth instead of failed.
GradCheckReport grad_check(const ScalarFn& fn, std::span<const double> x, double h, double tolerance,
                           const GradientFn& analytic = {});

}  // namespace fmreg
