#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/error.hpp"
#include "core/focusing.hpp"
#include "core/geometry.hpp"
#include "core/scene.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

using namespace fmreg;
using fmreg::test::random_points;
using fmreg::test::random_vec;

namespace {

Eigen::VectorXd mlp_row(const Perceptron& p, const Eigen::VectorXd& x) {
  Eigen::VectorXd h(p.hidden());
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    double s = p.b1(i);
    for (Eigen::Index j = 0; j < x.size(); ++j) s += p.W1(i, j) * x(j);
    h(i) = s > 0.0 ? s : 0.0;
  }
  Eigen::VectorXd y(p.out());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double s = p.b2(i);
    for (Eigen::Index j = 0; j < h.size(); ++j) s += p.W2(i, j) * h(j);
    y(i) = s;
  }
  return y;
}

Points blob(Rng& rng, const Vec3& c, std::size_t n, double r) {
  Points p(n);
  for (auto& x : p) x = c + random_vec(rng, -r, r);
  return p;
}

}  // namespace

TEST_CASE("predict_offsets matches a per-row perceptron") {
  Rng rng(1);
  FocusHeads heads;
  heads.offset = Perceptron::random(6, 12, 3, 7);
  FeatureMap f{fmreg::test::random_matrix(rng, 20, 6)};
  const auto off = predict_offsets(f, heads);
  REQUIRE(off.size() == 20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const Eigen::VectorXd y = mlp_row(heads.offset, f.vectors.row(i).transpose());
    for (int k = 0; k < 3; ++k) CHECK(std::abs(off[static_cast<std::size_t>(i)](k) - y(k)) < 1e-12);
  }
}

TEST_CASE("predict_point_mask is the logistic of the mask head over [features | embedding]") {
  Rng rng(2);
  const Perceptron head = Perceptron::random(4 + 2, 8, 1, 11);
  FeatureMap f{fmreg::test::random_matrix(rng, 15, 4)};
  const Eigen::MatrixXd geo = fmreg::test::random_matrix(rng, 15, 2);
  const auto m = predict_point_mask(f, geo, head);
  REQUIRE(m.size() == 15);
  for (Eigen::Index i = 0; i < 15; ++i) {
    Eigen::VectorXd x(6);
    x << f.vectors.row(i).transpose(), geo.row(i).transpose();
    const double z = mlp_row(head, x)(0);
    const double expect = 1.0 / (1.0 + std::exp(-z));
    CHECK(std::abs(m[static_cast<std::size_t>(i)] - expect) < 1e-12);
    CHECK(m[static_cast<std::size_t>(i)] > 0.0);
    CHECK(m[static_cast<std::size_t>(i)] < 1.0);
  }
  CHECK_THROWS_AS(predict_point_mask(f, fmreg::test::random_matrix(rng, 14, 2), head), Error);
}

TEST_CASE("shift_and_filter keeps points strictly above the threshold") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 60));
    const Points p = random_points(rng, n), v = random_points(rng, n);
    std::vector<double> mask(n);
    for (auto& s : mask) s = uniform01(rng) < 0.2 ? 0.5 : uniform01(rng);
    const auto out = shift_and_filter(p, v, mask, 0.5);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i] > 0.5) expect.push_back(i);
    REQUIRE(out.index == expect);
    REQUIRE(out.points.size() == expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK((out.points[k] - (p[expect[k]] + v[expect[k]])).norm() == 0.0);
  }
  const Points one{Vec3::Zero()};
  const std::vector<double> m1{0.9};
  CHECK_THROWS_AS(shift_and_filter(one, one, m1, 0.0), Error);
  CHECK_THROWS_AS(shift_and_filter(one, Points{}, m1, 0.5), Error);
}

TEST_CASE("dbscan matches the quadratic reference labels") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 0, 300));
    Points p;
    const int blobs = static_cast<int>(uniform_int(rng, 1, 5));
    for (std::size_t i = 0; i < n; ++i) {
      const int b = static_cast<int>(uniform_int(rng, 0, blobs));
      p.push_back(b == blobs ? random_vec(rng, -4, 4) : Vec3(2.0 * b, 0.5 * b, 0) + random_vec(rng, -0.3, 0.3));
    }
    const double eps = uniform(rng, 0.05, 0.6);
    const auto min_pts = static_cast<std::size_t>(uniform_int(rng, 1, 8));
    const auto got = dbscan(p, eps, min_pts);
    const auto ref = oracle::dbscan(p, eps, min_pts);
    REQUIRE(got == ref);
  }
}

TEST_CASE("dbscan partition is invariant under point permutation") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Points p = blob(rng, Vec3::Zero(), 80, 0.4);
    const Points q = blob(rng, Vec3(3, 0, 0), 60, 0.4);
    p.insert(p.end(), q.begin(), q.end());
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Points pp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) pp[i] = p[perm[i]];
    const auto a = dbscan(p, 0.3, 4);
    const auto b = dbscan(pp, 0.3, 4);
    // relabel b back into original order; compare cores' grouping
    std::vector<int> back(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) back[perm[i]] = b[i];
    // border points may flip clusters; with well separated blobs there are none across blobs
    CHECK(oracle::partition(a) == oracle::partition(back));
  }
}

TEST_CASE("dbscan basics: two blobs, isolated point, empty input") {
  Rng rng(6);
  Points p = blob(rng, Vec3::Zero(), 50, 0.2);
  const Points q = blob(rng, Vec3(5, 5, 5), 50, 0.2);
  p.insert(p.end(), q.begin(), q.end());
  p.push_back(Vec3(-10, -10, -10));
  const auto l = dbscan(p, 0.3, 5);
  CHECK(l.back() == -1);
  CHECK(std::all_of(l.begin(), l.begin() + 50, [](int x) { return x == 0; }));
  CHECK(std::all_of(l.begin() + 50, l.begin() + 100, [](int x) { return x == 1; }));
  CHECK(dbscan(Points{}, 0.1, 3).empty());
  CHECK(dbscan(Points{Vec3::Zero()}, 0.1, 1) == std::vector<int>{0});
  CHECK_THROWS_AS(dbscan(p, 0.0, 3), Error);
  CHECK_THROWS_AS(dbscan(p, 0.1, 0), Error);
}

TEST_CASE("compute_centers is the member mean and lies in the members' bounding box") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 1, 100));
    const Points p = random_points(rng, n, -3, 3);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(uniform_int(rng, -1, 3));
    const auto cs = compute_centers(p, labels);
    REQUIRE(cs.centers.size() == cs.members.size());
    std::size_t k = 0;
    for (int c = 0; c <= 3; ++c) {
      std::vector<std::size_t> mem;
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == c) mem.push_back(i);
      if (mem.empty()) continue;
      REQUIRE(k < cs.members.size());
      CHECK(cs.members[k] == mem);
      Vec3 s = Vec3::Zero(), lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
      for (auto i : mem) {
        s += p[i];
        lo = lo.cwiseMin(p[i]);
        hi = hi.cwiseMax(p[i]);
      }
      s /= static_cast<double>(mem.size());
      CHECK((cs.centers[k] - s).norm() < 1e-12);
      CHECK((cs.centers[k].array() >= lo.array() - 1e-12).all());
      CHECK((cs.centers[k].array() <= hi.array() + 1e-12).all());
      ++k;
    }
    CHECK(k == cs.centers.size());
  }
}

TEST_CASE("generate_proposals: linear-scan balls, lexicographic order, dropped centers") {
  Rng rng(8);
  PointCloud scene;
  scene.points = random_points(rng, 800, -2, 2);
  CenterSet cs;
  cs.centers = {Vec3(1, 0, 0), Vec3(-1, 0.5, 0), Vec3(50, 50, 50), Vec3(0, 0, 0)};
  cs.members.resize(4);
  const auto ps = generate_proposals(scene, cs, 0.5, 1.2, 100000, 0);
  REQUIRE(ps.proposals.size() == 3);
  REQUIRE(ps.dropped.size() == 1);
  CHECK(ps.dropped[0].center == Vec3(50, 50, 50));
  CHECK_FALSE(ps.dropped[0].diagnostic.empty());
  CHECK(ps.proposals[0].center == Vec3(-1, 0.5, 0));
  CHECK(ps.proposals[1].center == Vec3(0, 0, 0));
  CHECK(ps.proposals[2].center == Vec3(1, 0, 0));
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& pr = ps.proposals[k];
    CHECK(pr.id == k);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < scene.size(); ++i)
      if ((scene.points[i] - pr.center).norm() <= 0.6) expect.push_back(i);
    CHECK(pr.indices == expect);
    CHECK(pr.cloud.size() == expect.size());
  }
}

TEST_CASE("generate_proposals: larger radius never shrinks a proposal; subsampling is seeded") {
  Rng rng(9);
  PointCloud scene;
  scene.points = random_points(rng, 2000, -2, 2);
  CenterSet cs;
  cs.centers = {Vec3(0.3, -0.2, 0.1)};
  cs.members.resize(1);
  std::size_t prev = 0;
  for (double s : {0.5, 0.8, 1.0, 1.2, 1.6}) {
    const auto ps = generate_proposals(scene, cs, 1.0, s, 1u << 20, 0);
    const std::size_t n = ps.proposals.empty() ? 0 : ps.proposals[0].indices.size();
    CHECK(n >= prev);
    prev = n;
  }
  const auto a = generate_proposals(scene, cs, 1.0, 1.2, 50, 42);
  const auto b = generate_proposals(scene, cs, 1.0, 1.2, 50, 42);
  REQUIRE(a.proposals.size() == 1);
  CHECK(a.proposals[0].indices.size() == 50);
  CHECK(a.proposals[0].indices == b.proposals[0].indices);
  CHECK(std::is_sorted(a.proposals[0].indices.begin(), a.proposals[0].indices.end()));
}

TEST_CASE("spaced_seeds covers the cloud at the requested spacing") {
  Rng rng(10);
  const Points p = random_points(rng, 500, -1, 1);
  const auto seeds = spaced_seeds(p, 0.5);
  REQUIRE(!seeds.empty());
  CHECK(seeds[0] == 0);
  for (const auto& x : p) {
    double d = 1e9;
    for (auto s : seeds) d = std::min(d, (x - p[s]).norm());
    CHECK(d < 0.5);
  }
  for (std::size_t a = 0; a < seeds.size(); ++a)
    for (std::size_t b = a + 1; b < seeds.size(); ++b) CHECK((p[seeds[a]] - p[seeds[b]]).norm() >= 0.5);
  CHECK(spaced_seeds(Points{}, 1.0).empty());
  CHECK(spaced_seeds(Points(5, Vec3::Zero()), 1.0).size() == 1);
}

namespace {

struct OracleScene {
  Scene scene;
  Points model;
  double radius;
};

OracleScene make_scene(std::size_t k, double occlusion, std::uint64_t seed) {
  const auto prof = builtin_profile("scan2cad-like");
  OracleScene s;
  s.model = builtin_model(prof.model, prof.model_spacing);
  auto spec = spec_from_profile(prof, s.model, seed);
  spec.instances_min = spec.instances_max = k;
  spec.occlusion_min = spec.occlusion_max = occlusion;
  spec.noise_sigma = 0.0;
  s.scene = build_scene(spec, "focus-test");
  s.radius = cloud_radius(s.model);
  return s;
}

}  // namespace

TEST_CASE("oracle focusing finds one proposal per instance") {
  const auto prof = builtin_profile("scan2cad-like");
  for (std::size_t k : {4u, 16u}) {
    const auto s = make_scene(k, 0.0, 100 + k);
    const auto dense = voxel_downsample(s.scene.cloud, prof.voxel).cloud;
    FeatureMap sf{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dense.size()), 4)};
    FeatureMap mf{Eigen::MatrixXd::Zero(1, 4)};
    FocusOracle orc;
    orc.instance_centroids = s.scene.truth.visible_centroids();
    const auto heads = FocusHeads::untrained(4, 8);
    FocusInputs in;
    in.scene_dense = &dense;
    in.scene_features = &sf;
    in.model_features = &mf;
    in.model_radius = s.radius;
    in.heads = &heads;
    in.oracle = &orc;
    FocusParams fp;
    fp.sampled_voxel = 8.0 * prof.voxel;
    const auto r = focus_pipeline(in, fp);
    CHECK(r.proposals.proposals.size() == k);
    CHECK(r.proposals.dropped.empty());
    // each centroid has a center within a voxel
    for (const auto& c : orc.instance_centroids) {
      double d = 1e9;
      for (const auto& x : r.centers.centers) d = std::min(d, (x - c).norm());
      CHECK(d < 1e-9);
    }
  }
}

TEST_CASE("focusing with no instances yields no proposals") {
  Rng rng(11);
  PointCloud dense;
  dense.points = random_points(rng, 300, -3, 3);
  dense.labels = std::vector<int>(300, -1);
  FeatureMap sf{Eigen::MatrixXd::Zero(300, 4)};
  FeatureMap mf{Eigen::MatrixXd::Zero(1, 4)};
  FocusOracle orc;
  const auto heads = FocusHeads::untrained(4, 8);
  FocusInputs in;
  in.scene_dense = &dense;
  in.scene_features = &sf;
  in.model_features = &mf;
  in.model_radius = 1.0;
  in.heads = &heads;
  in.oracle = &orc;
  const auto r = focus_pipeline(in, FocusParams{});
  CHECK(r.proposals.proposals.empty());
  CHECK(r.shifted.points.empty());
}
