#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "types.hpp"

namespace fmreg {

/// Immutable k-d tree over a copy of the input points.
///
/// Radius queries are boundary-inclusive and return exactly the brute-force
/// set, sorted by index. kNN results are ordered by (distance, index), so equal
/// distances resolve to the lower index.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const noexcept { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }
  const Points& points() const noexcept { return points_; }

  std::vector<std::size_t> radius_search(const Vec3& center, double radius) const;
  std::size_t radius_count(const Vec3& center, double radius) const;
  std::vector<std::size_t> knn(const Vec3& query, std::size_t k) const;
  /// Nearest point index; the index must be non-empty.
  std::size_t nearest(const Vec3& query) const;

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  template <class Visit>
  void visit_radius(std::size_t node, const Vec3& c, double r2, Visit&& visit) const;

  Points points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Indices i with ‖p_i − center‖ ≤ radius, ascending.
std::vector<std::size_t> ball_query(const KdTree& index, const Vec3& center, double radius);

}  // namespace fmreg
