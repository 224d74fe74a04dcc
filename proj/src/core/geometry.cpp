#include "geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <unordered_map>

#include "error.hpp"

namespace fmreg {

void PointCloud::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) fail(ErrorCode::Invariant, "non-finite coordinate at point " + std::to_string(i));
  }
  if (labels && labels->size() != points.size()) fail(ErrorCode::Invariant, "label count differs from point count");
  if (normals) {
    if (normals->size() != points.size()) fail(ErrorCode::Invariant, "normal count differs from point count");
    for (std::size_t i = 0; i < normals->size(); ++i) {
      if (std::abs((*normals)[i].norm() - 1.0) > 1e-6)
        fail(ErrorCode::Invariant, "normal " + std::to_string(i) + " is not unit length");
    }
  }
}

PointCloud gather(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  if (cloud.labels) out.labels.emplace().reserve(indices.size());
  if (cloud.normals) out.normals.emplace().reserve(indices.size());
  for (auto i : indices) {
    out.points.push_back(cloud.points.at(i));
    if (cloud.labels) out.labels->push_back((*cloud.labels)[i]);
    if (cloud.normals) out.normals->push_back((*cloud.normals)[i]);
  }
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  if (!R.allFinite() || !t.allFinite()) return false;
  if (((R.transpose() * R) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

Points transform(const RigidTransform& T, std::span<const Vec3> pts) {
  Points out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(T.apply(p));
  return out;
}

Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 sum = Vec3::Zero();
  for (const auto& p : pts) sum += p;
  return pts.empty() ? sum : Vec3(sum / static_cast<double>(pts.size()));
}

double cloud_radius(std::span<const Vec3> points) {
  const Vec3 c = centroid(points);
  double r = 0.0;
  for (const auto& p : points) r = std::max(r, (p - c).norm());
  return r;
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

Downsampled voxel_downsample(const PointCloud& cloud, double voxel) {
  require(voxel > 0.0, "voxel size must be positive");
  Downsampled out;
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> cells;
  cells.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                       static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                       static_cast<std::int64_t>(std::floor(p.z() / voxel))};
    auto [it, inserted] = cells.try_emplace(key, out.sources.size());
    if (inserted) out.sources.emplace_back();
    out.sources[it->second].push_back(i);
  }

  const std::size_t n = out.sources.size();
  out.cloud.points.resize(n);
  if (cloud.labels) out.cloud.labels.emplace(n, -1);
  if (cloud.normals) out.cloud.normals.emplace(n, Vec3::UnitZ());
  for (std::size_t v = 0; v < n; ++v) {
    const auto& members = out.sources[v];
    Vec3 sum = Vec3::Zero();
    for (auto i : members) sum += cloud.points[i];
    out.cloud.points[v] = sum / static_cast<double>(members.size());

    if (cloud.labels) {
      std::map<int, std::size_t> votes;
      for (auto i : members) ++votes[(*cloud.labels)[i]];
      int best = votes.begin()->first;
      std::size_t best_count = 0;
      for (auto [label, count] : votes) {
        if (count > best_count) {
          best = label;
          best_count = count;
        }
      }
      (*out.cloud.labels)[v] = best;
    }
    if (cloud.normals) {
      Vec3 nsum = Vec3::Zero();
      for (auto i : members) nsum += (*cloud.normals)[i];
      const double len = nsum.norm();
      (*out.cloud.normals)[v] = len > 1e-12 ? Vec3(nsum / len) : (*cloud.normals)[members.front()];
    }
  }
  return out;
}

RigidTransform weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> dst,
                               std::span<const double> weights) {
  require(src.size() == dst.size() && src.size() == weights.size(), "kabsch: input lengths differ");
  double wsum = 0.0;
  std::size_t effective = 0;
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    require(weights[k] >= 0.0 && std::isfinite(weights[k]), "kabsch: weights must be finite and non-negative");
    if (weights[k] == 0.0) continue;
    ++effective;
    wsum += weights[k];
    cs += weights[k] * src[k];
    cd += weights[k] * dst[k];
  }
  if (effective < 3 || !(wsum > 0.0)) fail(ErrorCode::Degenerate, "kabsch: fewer than three weighted points");
  cs /= wsum;
  cd /= wsum;

  Mat3 H = Mat3::Zero(), Ss = Mat3::Zero(), Sd = Mat3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const Vec3 a = src[k] - cs, b = dst[k] - cd;
    H += weights[k] * a * b.transpose();
    Ss += weights[k] * a * a.transpose();
    Sd += weights[k] * b * b.transpose();
  }

  // Rank-2 spread on both sides is needed for a unique rotation.
  auto collinear = [](const Mat3& S) {
    Eigen::JacobiSVD<Mat3> svd(S);
    const auto s = svd.singularValues();
    return !(s[0] > 0.0) || s[1] <= 1e-12 * s[0];
  };
  if (collinear(Ss) || collinear(Sd)) fail(ErrorCode::Degenerate, "kabsch: collinear or coincident points");

  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& U = svd.matrixU();
  const Mat3& V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  if ((V * U.transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  RigidTransform T;
  T.R = V * D * U.transpose();
  T.t = cd - T.R * cs;
  return T;
}

RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst) {
  std::vector<double> w(src.size(), 1.0);
  return weighted_kabsch(src, dst, w);
}

double rre(const Mat3& R_pred, const Mat3& R_gt) {
  // M = R_gtᵀ R_pred, formed element-wise so rre(A, B) and rre(B, A) see the
  // same products. atan2 of (sin, cos) equals the arccos-of-trace form on
  // [0, π] but keeps full precision near 0 and π.
  Mat3 M;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) M(i, j) = R_gt(0, i) * R_pred(0, j) + R_gt(1, i) * R_pred(1, j) + R_gt(2, i) * R_pred(2, j);
  const double c = std::clamp((M(0, 0) + M(1, 1) + M(2, 2) - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 axis(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
  const double s = 0.5 * axis.norm();
  return std::atan2(s, c) * 180.0 / 3.14159265358979323846;
}

double rte(const Vec3& t_pred, const Vec3& t_gt) { return (t_pred - t_gt).norm(); }

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

std::vector<double> geodesic_distances(std::span<const Vec3> points, std::size_t k,
                                       std::span<const std::size_t> sources) {
  require(k >= 2, "geodesic_distances: k must be at least 2");
  if (sources.empty()) fail(ErrorCode::InvalidArgument, "geodesic_distances: empty source set");
  const std::size_t n = points.size();
  for (auto s : sources) require(s < n, "geodesic_distances: source index out of range");

  // knn includes the query point itself, hence k + 1.
  KdTree tree(points);
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : tree.knn(points[i], k + 1)) {
      if (j == i) continue;
      const double w = (points[i] - points[j]).norm();
      adj[i].emplace_back(j, w);
      adj[j].emplace_back(i, w);
    }
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, inf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  for (auto s : sources) {
    dist[s] = 0.0;
    queue.emplace(0.0, s);
  }
  while (!queue.empty()) {
    auto [d, u] = queue.top();
    queue.pop();
    if (d > dist[u]) continue;
    for (auto [v, w] : adj[u]) {
      if (d + w < dist[v]) {
        dist[v] = d + w;
        queue.emplace(dist[v], v);
      }
    }
  }
  return dist;
}

}  // namespace fmreg
