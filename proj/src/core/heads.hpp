#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fmreg {

/// Two-layer perceptron applied row-wise: W2·relu(W1·x + b1) + b2.
struct Perceptron {
  Eigen::MatrixXd W1;  ///< hidden × in
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;  ///< out × hidden
  Eigen::VectorXd b2;

  std::size_t in() const noexcept { return static_cast<std::size_t>(W1.cols()); }
  std::size_t hidden() const noexcept { return static_cast<std::size_t>(W1.rows()); }
  std::size_t out() const noexcept { return static_cast<std::size_t>(W2.rows()); }

  void validate() const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& rows) const;

  static Perceptron zeros(std::size_t in, std::size_t hidden, std::size_t out);
  static Perceptron random(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, double scale = 1.0);
  /// Zero weights with a large positive output bias: every mask score ≈ 1.
  static Perceptron pass_through_mask(std::size_t in, std::size_t hidden);
};

Eigen::MatrixXd logistic(const Eigen::MatrixXd& logits);

/// Stage-one heads: offsets from features (D → 2D → 3) and the point mask from
/// features concatenated with the geodesic embedding (D+E → 2D → 1).
struct FocusHeads {
  Perceptron offset;
  Perceptron mask;

  void validate(std::size_t dim, std::size_t geo_width) const;
  /// Untrained fallback: zero offsets and pass-through masks.
  static FocusHeads untrained(std::size_t dim, std::size_t geo_width);
};

/// Stage-two heads: instance mask and overlap mask, both D+E → 2D → 1.
struct MatchHeads {
  Perceptron instance_mask;
  Perceptron overlap_mask;

  void validate(std::size_t dim, std::size_t geo_width) const;
  static MatchHeads untrained(std::size_t dim, std::size_t geo_width);
};

/// Binary container: "FMHD", u32 version (1), u32 count, then per perceptron
/// u32 in, hidden, out followed by W1, b1, W2, b2 as row-major float32.
void write_perceptrons(const std::string& path, const std::vector<Perceptron>& heads);
std::vector<Perceptron> read_perceptrons(const std::string& path);

}  // namespace fmreg
