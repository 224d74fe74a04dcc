#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "types.hpp"

namespace fmreg {

/// Per-point descriptor rows (one row per point, `dim()` columns).
struct FeatureMap {
  Eigen::MatrixXd vectors;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  void validate(std::size_t expected_rows) const;
};

/// Gathers rows by index.
FeatureMap gather(const FeatureMap& features, std::span<const std::size_t> rows);
/// Mean of member rows per group (e.g. voxel or patch pooling).
FeatureMap pool_mean(const FeatureMap& features, const std::vector<std::vector<std::size_t>>& groups);
/// Row-wise L2 normalization; zero rows stay zero.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

// ---------------------------------------------------------------------------
// Attention blocks. Single-head scaled dot-product attention with a residual
// connection. Weights act on column vectors:
//   out_i = x_i + W_O Σ_j softmax_j((W_Q x_i)·(W_K c_j) / √D) W_V c_j

struct AttentionLayer {
  Eigen::MatrixXd W_Q, W_K, W_V, W_O;
};

struct AttentionWeights {
  std::size_t dim = 0;
  std::vector<AttentionLayer> layers;

  void validate() const;
  static AttentionWeights random(std::size_t dim, std::size_t layers, std::uint64_t seed, double scale);
};

/// One attention layer. With `residual` false the input is not added back.
Eigen::MatrixXd attention_layer(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& context,
                                const AttentionLayer& layer, bool residual = true);
/// Row-wise softmax of the scaled query/key logits (exposed for tests).
Eigen::MatrixXd attention_scores(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& context,
                                 const AttentionLayer& layer);

/// Stacked self-attention: each layer attends over its own input.
FeatureMap self_attention(const FeatureMap& features, const AttentionWeights& weights);
/// Stacked cross-attention: the output of each layer is the query input of the
/// next; keys and values always come from `context`.
FeatureMap cross_attention(const FeatureMap& queries, const FeatureMap& context, const AttentionWeights& weights);

/// Binary container: "FMAT", u32 version (1), u32 layer count, u32 D, then per
/// layer W_Q, W_K, W_V, W_O as D×D row-major float32, all little-endian.
void write_attention_weights(const std::string& path, const AttentionWeights& weights);
AttentionWeights read_attention_weights(const std::string& path);

// ---------------------------------------------------------------------------
// Descriptor providers.

enum class ProviderKind { Oracle, Covariance, AttentionEnhanced };

std::string to_string(ProviderKind kind);
ProviderKind parse_provider_kind(const std::string& name);

struct DescriptorProviderConfig {
  ProviderKind kind = ProviderKind::Covariance;
  double sigma_f = 0.0;  ///< oracle corruption, in feature-norm units
  double radius = 0.1;   ///< covariance neighborhood radius (m)
  std::size_t dim = 32;

  void validate() const;
};

struct OracleFeatures {
  FeatureMap scene;
  FeatureMap model;
};

/// Test-harness stand-in for learned features. Model point i gets a unit
/// pseudo-random vector keyed by (seed, i). A labeled scene point copies the
/// vector of the nearest model point under its instance's inverse pose and
/// adds N(0, σ_f²/D) per component, so the noise norm is about σ_f. Background
/// points get independent unit vectors. The noise draws do not depend on σ_f,
/// so sweeps over σ_f share random numbers.
OracleFeatures oracle_descriptor(const PointCloud& scene, std::span<const Vec3> model,
                                 std::span<const RigidTransform> gt_poses, double sigma_f, std::size_t dim,
                                 std::uint64_t seed);

constexpr std::size_t kCovarianceWidth = 8;

struct CovarianceFeatures {
  FeatureMap features;
  std::vector<bool> degenerate;  ///< neighborhoods with fewer than 3 points
};

/// Per point, from the covariance of its radius neighborhood:
/// [λ1, λ2, λ3]/trace (descending), linearity, planarity, sphericity,
/// omnivariance/trace, log(1 + neighbor count)/10.
CovarianceFeatures covariance_descriptor(std::span<const Vec3> points, double radius);

/// `dim / 8` scales of covariance features at radius·{1, 1.5, 2, 3, ...}.
FeatureMap multiscale_covariance(std::span<const Vec3> points, double radius, std::size_t dim);

/// Sinusoidal encoding at E/2 frequencies with periods base_period / 2^k:
/// (sin, cos) pairs. Infinite distances map to the zero vector.
Eigen::MatrixXd geodesic_embedding(std::span<const double> distances, std::size_t width, double base_period);

}  // namespace fmreg
