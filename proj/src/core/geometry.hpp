#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spatial_index.hpp"
#include "types.hpp"

namespace fmreg {

struct Downsampled {
  PointCloud cloud;
  /// For each output point, the source indices it summarizes (ascending).
  std::vector<std::vector<std::size_t>> sources;
};

/// One output point per occupied voxel: the centroid of its members, with the
/// majority label (ties to the smaller label). Output order follows the first
/// source point of each voxel.
Downsampled voxel_downsample(const PointCloud& cloud, double voxel);

/// argmin_T Σ w_k ‖T(src_k) − dst_k‖². Throws Error(Degenerate) for fewer than
/// three weighted points or collinear/coincident configurations.
RigidTransform weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> dst,
                               std::span<const double> weights);
RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Relative rotation error in degrees, in [0, 180].
double rre(const Mat3& R_pred, const Mat3& R_gt);
/// Relative translation error in meters.
double rte(const Vec3& t_pred, const Vec3& t_gt);

/// Rotation of `angle` radians about `axis` (normalized internally).
Mat3 axis_angle(const Vec3& axis, double angle);

/// Multi-source shortest-path distances over the symmetric kNN graph of `points`
/// (edge kept if either endpoint selects it; weight = Euclidean length).
/// Unreachable points get +infinity.
std::vector<double> geodesic_distances(std::span<const Vec3> points, std::size_t k,
                                       std::span<const std::size_t> sources);

/// Max distance from the centroid to any point.
double cloud_radius(std::span<const Vec3> points);

}  // namespace fmreg
