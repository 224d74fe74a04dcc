#include "spatial_index.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

#include "error.hpp"

namespace fmreg {

namespace {
constexpr std::size_t kLeafSize = 12;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  if (!points_.empty()) build(0, points_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident: keep as leaf

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <class Visit>
void KdTree::visit_radius(std::size_t node, const Vec3& c, double r2, Visit&& visit) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) {
      const std::size_t idx = order_[i];
      if ((points_[idx] - c).squaredNorm() <= r2) visit(idx);
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double d = c[n.axis] - n.split;
  if (d <= 0.0 || d * d <= r2) visit_radius(n.left, c, r2, visit);
  if (d >= 0.0 || d * d <= r2) visit_radius(n.right, c, r2, visit);
}

std::vector<std::size_t> KdTree::radius_search(const Vec3& center, double radius) const {
  require(radius >= 0.0, "radius must be non-negative");
  std::vector<std::size_t> out;
  if (points_.empty()) return out;
  visit_radius(0, center, radius * radius, [&](std::size_t i) { out.push_back(i); });
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t KdTree::radius_count(const Vec3& center, double radius) const {
  std::size_t count = 0;
  if (points_.empty()) return count;
  visit_radius(0, center, radius * radius, [&](std::size_t) { ++count; });
  return count;
}

std::vector<std::size_t> KdTree::knn(const Vec3& query, std::size_t k) const {
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;  // max-heap on (dist², index)
  k = std::min(k, points_.size());
  if (k == 0) return {};

  auto worst = [&] { return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().first; };
  auto offer = [&](std::size_t idx) {
    const Entry e{(points_[idx] - query).squaredNorm(), idx};
    if (heap.size() < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  };

  std::vector<std::pair<std::size_t, double>> pending;  // (node, lower bound on dist²)
  pending.emplace_back(0, 0.0);
  while (!pending.empty()) {
    auto [node, bound] = pending.back();
    pending.pop_back();
    if (bound > worst()) continue;
    const Node& n = nodes_[node];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) offer(order_[i]);
      continue;
    }
    const double d = query[n.axis] - n.split;
    const std::size_t near = d <= 0.0 ? n.left : n.right;
    const std::size_t far = d <= 0.0 ? n.right : n.left;
    pending.emplace_back(far, std::max(bound, d * d));
    pending.emplace_back(near, bound);
  }

  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

std::size_t KdTree::nearest(const Vec3& query) const {
  require(!points_.empty(), "nearest() on an empty index");
  return knn(query, 1).front();
}

std::vector<std::size_t> ball_query(const KdTree& index, const Vec3& center, double radius) {
  return index.radius_search(center, radius);
}

}  // namespace fmreg
