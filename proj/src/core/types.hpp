#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace fmreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = std::vector<Vec3>;

/// Ordered 3D points in meters with optional per-point instance labels
/// (-1 = background) and optional unit normals.
struct PointCloud {
  Points points;
  std::optional<std::vector<int>> labels;
  std::optional<Points> normals;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  /// Throws Error(Invariant) when coordinates are non-finite, or when labels or
  /// normals disagree with the point count, or a normal is not unit length.
  void validate() const;
};

PointCloud gather(const PointCloud& cloud, std::span<const std::size_t> indices);

struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  RigidTransform operator*(const RigidTransform& rhs) const { return {R * rhs.R, R * rhs.t + t}; }

  /// RᵀR = I and det(R) = 1 within `tol`.
  bool is_valid(double tol = 1e-9) const;
};

Points transform(const RigidTransform& T, std::span<const Vec3> pts);

Vec3 centroid(std::span<const Vec3> pts);

}  // namespace fmreg
