#include <doctest.h>

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <tuple>

#include "core/error.hpp"
#include "core/geometry.hpp"
#include "core/spatial_index.hpp"
#include "test_util.hpp"

using namespace fmreg;
using namespace fmreg::test;

namespace {

using Key = std::tuple<long long, long long, long long>;

Key bin_of(const Vec3& p, double v) {
  return {static_cast<long long>(std::floor(p.x() / v)), static_cast<long long>(std::floor(p.y() / v)),
          static_cast<long long>(std::floor(p.z() / v))};
}

std::vector<std::size_t> linear_ball(const Points& pts, const Vec3& c, double r) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if ((pts[i] - c).norm() <= r) out.push_back(i);
  return out;
}

double quaternion_angle_deg(const Mat3& a, const Mat3& b) {
  Eigen::Quaterniond q(Mat3(b.transpose() * a));
  q.normalize();
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())) * 180.0 / M_PI;
}

double rms(const RigidTransform& T, const Points& src, const Points& dst) {
  double s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) s += (T.apply(src[i]) - dst[i]).squaredNorm();
  return std::sqrt(s / static_cast<double>(src.size()));
}

}  // namespace

TEST_CASE("voxel_downsample: single voxel centroid") {
  PointCloud c;
  for (int i = 0; i < 8; ++i) c.points.push_back(Vec3((i & 1) * 0.01, ((i >> 1) & 1) * 0.01, ((i >> 2) & 1) * 0.01) + Vec3(0.02, 0.02, 0.02));
  const auto d = voxel_downsample(c, 0.1);
  REQUIRE(d.cloud.size() == 1);
  CHECK((d.cloud.points[0] - Vec3(0.025, 0.025, 0.025)).norm() < 1e-12);
  CHECK(d.sources[0].size() == 8);
}

TEST_CASE("voxel_downsample: separate voxels keep points") {
  PointCloud c;
  c.points = {Vec3(0.001, 0.001, 0.001), Vec3(1.001, 0.001, 0.001)};
  const auto d = voxel_downsample(c, 0.025);
  REQUIRE(d.cloud.size() == 2);
  CHECK((d.cloud.points[0] - c.points[0]).norm() < 1e-15);
  CHECK((d.cloud.points[1] - c.points[1]).norm() < 1e-15);
}

TEST_CASE("voxel_downsample: empty cloud and bad voxel") {
  PointCloud c;
  CHECK(voxel_downsample(c, 0.1).cloud.empty());
  c.points = {Vec3::Zero()};
  CHECK_THROWS_AS(voxel_downsample(c, 0.0), Error);
}

TEST_CASE("voxel_downsample: brute-force binning oracle") {
  Rng rng(11);
  PointCloud c;
  c.points = random_points(rng, 10000, 0.0, 1.0);
  const double v = 0.1;
  const auto d = voxel_downsample(c, v);

  std::map<Key, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < c.size(); ++i) bins[bin_of(c.points[i], v)].push_back(i);
  REQUIRE(d.cloud.size() == bins.size());

  std::set<std::size_t> seen;
  for (std::size_t k = 0; k < d.cloud.size(); ++k) {
    const auto& src = d.sources[k];
    REQUIRE(!src.empty());
    CHECK(std::is_sorted(src.begin(), src.end()));
    const auto& expect = bins.at(bin_of(c.points[src[0]], v));
    CHECK(src == expect);
    Vec3 mean = Vec3::Zero();
    for (auto i : src) mean += c.points[i];
    mean /= static_cast<double>(src.size());
    CHECK((mean - d.cloud.points[k]).norm() < 1e-12);
    for (auto i : src) seen.insert(i);
  }
  CHECK(seen.size() == c.size());
}

TEST_CASE("voxel_downsample: majority label, ties to the smaller label") {
  PointCloud c;
  c.points = {Vec3(0.01, 0, 0), Vec3(0.02, 0, 0), Vec3(0.03, 0, 0), Vec3(0.04, 0, 0)};
  c.labels = std::vector<int>{3, 1, 3, 1};
  auto d = voxel_downsample(c, 0.1);
  REQUIRE(d.cloud.labels);
  CHECK((*d.cloud.labels)[0] == 1);
  c.labels = std::vector<int>{-1, 2, 2, -1};
  c.points.push_back(Vec3(0.05, 0, 0));
  c.labels->push_back(2);
  d = voxel_downsample(c, 0.1);
  CHECK((*d.cloud.labels)[0] == 2);
}

TEST_CASE("voxel_downsample: idempotent at fixed voxel") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c;
    c.points = random_points(rng, 2000, -2.0, 2.0);
    const double v = uniform(rng, 0.05, 0.5);
    const auto once = voxel_downsample(c, v);
    const auto twice = voxel_downsample(once.cloud, v);
    REQUIRE(twice.cloud.size() == once.cloud.size());
    for (std::size_t i = 0; i < once.cloud.size(); ++i) CHECK(twice.cloud.points[i] == once.cloud.points[i]);
  }
}

TEST_CASE("ball_query: trivial cases") {
  Points pts = {Vec3(0.5, 0, 0), Vec3(2, 0, 0)};
  KdTree tree(pts);
  CHECK(ball_query(tree, Vec3::Zero(), 1.0) == std::vector<std::size_t>{0});
  CHECK(ball_query(tree, Vec3(2, 0, 0), 0.0) == std::vector<std::size_t>{1});
  CHECK(ball_query(tree, Vec3(10, 0, 0), 1.0).empty());
}

TEST_CASE("ball_query and kNN: linear-scan oracle") {
  Rng rng(13);
  const Points pts = random_points(rng, 5000);
  KdTree tree(pts);
  for (int q = 0; q < 100; ++q) {
    const Vec3 c = random_vec(rng, -1.2, 1.2);
    const double r = uniform(rng, 0.0, 0.4);
    CHECK(ball_query(tree, c, r) == linear_ball(pts, c, r));
    CHECK(tree.radius_count(c, r) == linear_ball(pts, c, r).size());

    const std::size_t k = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 20));
    std::vector<std::size_t> order(pts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (pts[a] - c).norm() < (pts[b] - c).norm();
    });
    order.resize(k);
    CHECK(tree.knn(c, k) == order);
    CHECK(tree.nearest(c) == order[0]);
  }
}

TEST_CASE("ball_query: boundary inclusive on grid points") {
  Points pts;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) pts.push_back(Vec3(i, j, 0));
  KdTree tree(pts);
  for (double r : {0.0, 1.0, 2.0, std::sqrt(2.0), 3.0}) CHECK(ball_query(tree, Vec3::Zero(), r) == linear_ball(pts, Vec3::Zero(), r));
}

TEST_CASE("weighted_kabsch: identity and exact construction") {
  const Points src = {Vec3(0, 0, 0), Vec3(1, 0.2, 0), Vec3(0.3, 1, 0.1), Vec3(0.2, 0.4, 1)};
  const std::vector<double> w(src.size(), 1.0);
  const auto I = weighted_kabsch(src, src, w);
  CHECK((I.R - Mat3::Identity()).norm() < 1e-9);
  CHECK(I.t.norm() < 1e-9);

  const RigidTransform T{axis_angle(Vec3::UnitZ(), M_PI / 2), Vec3(1, 2, 3)};
  const auto dst = transform(T, src);
  const auto E = weighted_kabsch(src, dst, w);
  CHECK((E.R - T.R).norm() < 1e-9);
  CHECK((E.t - T.t).norm() < 1e-9);
}

TEST_CASE("weighted_kabsch: degenerate configurations") {
  const Points line = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
  const std::vector<double> w(4, 1.0);
  try {
    weighted_kabsch(line, line, w);
    FAIL("expected a degenerate error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Degenerate);
  }
  const Points two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS_AS(kabsch(two, two), Error);
  const Points tri = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  const std::vector<double> zero(3, 0.0);
  CHECK_THROWS_AS(weighted_kabsch(tri, tri, zero), Error);
  const std::vector<double> neg = {1.0, -1.0, 1.0};
  CHECK_THROWS_AS(weighted_kabsch(tri, tri, neg), Error);
}

TEST_CASE("weighted_kabsch: three points suffice") {
  Rng rng(14);
  const Points src = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  const auto T = random_transform(rng);
  const auto E = kabsch(src, transform(T, src));
  CHECK(E.is_valid());
  CHECK(rre(E.R, T.R) < 1e-7);
}

TEST_CASE("weighted_kabsch: mirrored inputs never return a reflection") {
  Rng rng(15);
  Mat3 mirror = Mat3::Identity();
  mirror(0, 0) = -1.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Points src = random_points(rng, 3 + trial % 20);
    Points dst;
    for (const auto& p : src) dst.push_back(mirror * p);
    std::vector<double> w(src.size());
    for (auto& x : w) x = uniform(rng, 0.1, 2.0);
    const auto E = weighted_kabsch(src, dst, w);
    CHECK(E.is_valid(1e-9));
    CHECK(E.R.determinant() > 0.0);
  }
}

TEST_CASE("weighted_kabsch: zero-weight points are ignored") {
  Rng rng(16);
  const Points src = random_points(rng, 30);
  const auto T = random_transform(rng);
  Points dst = transform(T, src);
  std::vector<double> w(src.size(), 1.0);
  for (std::size_t i = 0; i < 10; ++i) {
    dst[i] += random_vec(rng, -5, 5);
    w[i] = 0.0;
  }
  const auto E = weighted_kabsch(src, dst, w);
  CHECK(rre(E.R, T.R) < 1e-7);
  CHECK(rte(E.t, T.t) < 1e-9);
}

TEST_CASE("weighted_kabsch: noisy fit beats a dense random search") {
  Rng rng(17);
  const Points src = random_points(rng, 100);
  const auto T = random_transform(rng, 1.0);
  Points dst = transform(T, src);
  for (auto& p : dst) p += 0.01 * Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  const auto E = kabsch(src, dst);
  const double best_fit = rms(E, src, dst);

  double best_search = std::numeric_limits<double>::infinity();
  for (int c = 0; c < 100000; ++c) {
    const double scale = c < 50000 ? 0.02 : 0.002;
    const Vec3 axis = random_vec(rng);
    const RigidTransform P{axis_angle(axis, scale * standard_normal(rng)) * T.R, T.t + scale * random_vec(rng)};
    best_search = std::min(best_search, rms(P, src, dst));
  }
  CHECK(best_fit <= best_search);
}

TEST_CASE("rre / rte: trivial values") {
  const Mat3 I = Mat3::Identity();
  CHECK(rre(I, I) == 0.0);
  CHECK(std::abs(rre(axis_angle(Vec3::UnitZ(), M_PI / 2), I) - 90.0) < 1e-12);
  CHECK(std::abs(rre(axis_angle(Vec3::UnitX(), M_PI), I) - 180.0) < 1e-9);
  CHECK(rte(Vec3::Zero(), Vec3::Zero()) == 0.0);
  CHECK(std::abs(rte(Vec3::Zero(), Vec3(0.1, 0, 0)) - 0.1) < 1e-15);
}

TEST_CASE("rre: quaternion-angle oracle, symmetry and triangle inequality") {
  Rng rng(18);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 A = random_rotation(rng), B = random_rotation(rng), C = random_rotation(rng);
    const double ab = rre(A, B);
    CHECK(std::abs(ab - quaternion_angle_deg(A, B)) < 1e-9);
    CHECK(std::abs(ab - rre(B, A)) < 1e-12);
    CHECK(rre(A, A) < 1e-6);
    CHECK(rre(A, C) <= ab + rre(B, C) + 1e-6);
    CHECK(ab >= 0.0);
    CHECK(ab <= 180.0);
  }
}

TEST_CASE("rre: small angles stay accurate") {
  for (double deg : {1e-9, 1e-7, 1e-5, 1e-3}) {
    const Mat3 R = axis_angle(Vec3(1, 2, 3), deg * M_PI / 180.0);
    CHECK(std::abs(rre(R, Mat3::Identity()) - deg) < 1e-12);
  }
}

TEST_CASE("rte: componentwise formula") {
  Rng rng(19);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 a = random_vec(rng, -10, 10), b = random_vec(rng, -10, 10);
    const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
    CHECK(std::abs(rte(a, b) - std::sqrt(dx * dx + dy * dy + dz * dz)) < 1e-12);
  }
}

TEST_CASE("transform round trip") {
  Rng rng(20);
  for (int i = 0; i < 1000; ++i) {
    const auto T = random_transform(rng);
    const Vec3 p = random_vec(rng, -10, 10);
    CHECK((T.inverse().apply(T.apply(p)) - p).norm() < 1e-9);
    CHECK((T * T.inverse()).is_valid());
  }
}

TEST_CASE("geodesic_distances: chain") {
  Points chain;
  for (int i = 0; i < 5; ++i) chain.push_back(Vec3(i, 0, 0));
  const std::vector<std::size_t> src = {0};
  const auto d = geodesic_distances(chain, 2, src);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(d[i] - i) < 1e-12);
}

TEST_CASE("geodesic_distances: complete graph equals Euclidean") {
  Rng rng(21);
  const Points pts = random_points(rng, 6);
  const std::vector<std::size_t> src = {2};
  const auto d = geodesic_distances(pts, 5, src);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(d[i] - (pts[i] - pts[2]).norm()) < 1e-12);
}

TEST_CASE("geodesic_distances: unreachable and invalid inputs") {
  Points pts = {Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(0.2, 0, 0), Vec3(100, 0, 0), Vec3(100.1, 0, 0), Vec3(100.2, 0, 0)};
  const std::vector<std::size_t> src = {0};
  const auto d = geodesic_distances(pts, 2, src);
  CHECK(std::isfinite(d[2]));
  CHECK(std::isinf(d[4]));
  CHECK_THROWS_AS(geodesic_distances(pts, 2, std::vector<std::size_t>{}), Error);
  CHECK_THROWS_AS(geodesic_distances(pts, 1, src), Error);
}

TEST_CASE("geodesic_distances: Floyd-Warshall oracle") {
  Rng rng(22);
  const std::size_t n = 200, k = 6;
  const Points pts = random_points(rng, n);
  // symmetric kNN graph, built by brute force
  std::vector<std::vector<double>> w(n, std::vector<double>(n, std::numeric_limits<double>::infinity()));
  for (std::size_t i = 0; i < n; ++i) {
    w[i][i] = 0.0;
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (pts[a] - pts[i]).norm() < (pts[b] - pts[i]).norm();
    });
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t j = order[m];
      w[i][j] = w[j][i] = (pts[i] - pts[j]).norm();
    }
  }
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) w[i][j] = std::min(w[i][j], w[i][m] + w[m][j]);

  const std::vector<std::size_t> sources = {0, 57, 123};
  const auto d = geodesic_distances(pts, k, sources);
  for (std::size_t i = 0; i < n; ++i) {
    double expect = std::numeric_limits<double>::infinity();
    for (auto s : sources) expect = std::min(expect, w[s][i]);
    if (std::isinf(expect))
      CHECK(std::isinf(d[i]));
    else
      CHECK(std::abs(d[i] - expect) < 1e-9);
  }
}

TEST_CASE("cloud_radius") {
  const Points pts = {Vec3(-1, 0, 0), Vec3(1, 0, 0), Vec3(0, 0.5, 0)};
  const Vec3 c = centroid(pts);
  double r = 0.0;
  for (const auto& p : pts) r = std::max(r, (p - c).norm());
  CHECK(std::abs(cloud_radius(pts) - r) < 1e-15);
}
