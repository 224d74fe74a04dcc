#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/descriptors.hpp"
#include "core/error.hpp"
#include "core/spatial_index.hpp"
#include "test_util.hpp"

using namespace fmreg;
using namespace fmreg::test;

namespace {

// out_i = x_i + W_O Σ_j softmax_j((W_Q x_i)·(W_K c_j)/√D) W_V c_j, written as plain loops
Eigen::MatrixXd dense_attention(const Eigen::MatrixXd& X, const Eigen::MatrixXd& C, const AttentionLayer& L, bool residual) {
  const Eigen::Index n = X.rows(), m = C.rows(), d = X.cols();
  Eigen::MatrixXd out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> q(d, 0.0);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) q[a] += L.W_Q(a, b) * X(i, b);
    std::vector<double> logit(m, 0.0);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index a = 0; a < d; ++a) {
        double k = 0.0;
        for (Eigen::Index b = 0; b < d; ++b) k += L.W_K(a, b) * C(j, b);
        logit[j] += q[a] * k;
      }
      logit[j] /= std::sqrt(static_cast<double>(d));
    }
    double mx = logit[0];
    for (double v : logit) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : logit) z += (v = std::exp(v - mx));
    std::vector<double> mix(d, 0.0);
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index a = 0; a < d; ++a) {
        double v = 0.0;
        for (Eigen::Index b = 0; b < d; ++b) v += L.W_V(a, b) * C(j, b);
        mix[a] += logit[j] / z * v;
      }
    for (Eigen::Index a = 0; a < d; ++a) {
      double o = residual ? X(i, a) : 0.0;
      for (Eigen::Index b = 0; b < d; ++b) o += L.W_O(a, b) * mix[b];
      out(i, a) = o;
    }
  }
  return out;
}

AttentionLayer random_layer(Rng& rng, Eigen::Index d) {
  return {random_matrix(rng, d, d, 0.5), random_matrix(rng, d, d, 0.5), random_matrix(rng, d, d, 0.5), random_matrix(rng, d, d, 0.5)};
}

FeatureMap fm(const Eigen::MatrixXd& m) { return FeatureMap{m}; }

}  // namespace

TEST_CASE("attention: single point self-attention") {
  Rng rng(1);
  const auto L = random_layer(rng, 4);
  const Eigen::MatrixXd x = random_matrix(rng, 1, 4);
  const Eigen::MatrixXd out = attention_layer(x, x, L);
  const Eigen::VectorXd expect = x.row(0).transpose() + L.W_O * L.W_V * x.row(0).transpose();
  CHECK((out.row(0).transpose() - expect).norm() < 1e-12);
}

TEST_CASE("attention: zero input gives zero output") {
  Rng rng(2);
  AttentionWeights w;
  w.dim = 4;
  w.layers = {random_layer(rng, 4), random_layer(rng, 4)};
  const auto out = self_attention(fm(Eigen::MatrixXd::Zero(5, 4)), w);
  CHECK(out.vectors.norm() == 0.0);
}

TEST_CASE("attention: dense oracle, self and cross") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto L = random_layer(rng, 4);
    const Eigen::MatrixXd X = random_matrix(rng, 5, 4);
    CHECK((attention_layer(X, X, L) - dense_attention(X, X, L, true)).cwiseAbs().maxCoeff() < 1e-10);
    const auto L8 = random_layer(rng, 8);
    const Eigen::MatrixXd Q = random_matrix(rng, 6, 8), C = random_matrix(rng, 4, 8);
    CHECK((attention_layer(Q, C, L8) - dense_attention(Q, C, L8, true)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((attention_layer(Q, C, L8, false) - dense_attention(Q, C, L8, false)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("attention: stacked layers compose as dense oracles") {
  Rng rng(4);
  AttentionWeights w;
  w.dim = 8;
  w.layers = {random_layer(rng, 8), random_layer(rng, 8), random_layer(rng, 8)};
  const Eigen::MatrixXd Q = random_matrix(rng, 6, 8), C = random_matrix(rng, 4, 8);

  Eigen::MatrixXd expect = Q;
  for (const auto& L : w.layers) expect = dense_attention(expect, C, L, true);
  CHECK((cross_attention(fm(Q), fm(C), w).vectors - expect).cwiseAbs().maxCoeff() < 1e-10);

  Eigen::MatrixXd self = Q;
  for (const auto& L : w.layers) self = dense_attention(self, self, L, true);
  CHECK((self_attention(fm(Q), w).vectors - self).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("attention: context = queries equals self-attention for one layer") {
  Rng rng(5);
  AttentionWeights w;
  w.dim = 6;
  w.layers = {random_layer(rng, 6)};
  const Eigen::MatrixXd X = random_matrix(rng, 7, 6);
  CHECK((cross_attention(fm(X), fm(X), w).vectors - self_attention(fm(X), w).vectors).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention: one-point context") {
  Rng rng(6);
  const auto L = random_layer(rng, 4);
  const Eigen::MatrixXd Q = random_matrix(rng, 5, 4), C = random_matrix(rng, 1, 4);
  const Eigen::MatrixXd out = attention_layer(Q, C, L);
  const Eigen::RowVectorXd shared = (L.W_O * L.W_V * C.row(0).transpose()).transpose();
  for (Eigen::Index i = 0; i < Q.rows(); ++i) CHECK((out.row(i) - Q.row(i) - shared).norm() < 1e-12);
}

TEST_CASE("attention: softmax rows sum to one; outputs in the convex hull of the context") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 3;
    AttentionLayer L = random_layer(rng, d);
    L.W_V = Eigen::MatrixXd::Identity(d, d);
    L.W_O = Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd Q = random_matrix(rng, 4, d, 2.0), C = random_matrix(rng, 6, d);
    const Eigen::MatrixXd S = attention_scores(Q, C, L);
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      CHECK(std::abs(S.row(i).sum() - 1.0) < 1e-12);
      CHECK(S.row(i).minCoeff() >= 0.0);
    }
    const Eigen::MatrixXd out = attention_layer(Q, C, L, false);
    // convex weights recovered from the scores reproduce the output
    CHECK((out - S * C).cwiseAbs().maxCoeff() < 1e-12);
    for (Eigen::Index a = 0; a < d; ++a) {
      CHECK(out.col(a).maxCoeff() <= C.col(a).maxCoeff() + 1e-12);
      CHECK(out.col(a).minCoeff() >= C.col(a).minCoeff() - 1e-12);
    }
  }
}

TEST_CASE("attention: width mismatch and invalid weights") {
  Rng rng(8);
  AttentionWeights w;
  w.dim = 4;
  w.layers = {random_layer(rng, 4)};
  CHECK_THROWS_AS(self_attention(fm(random_matrix(rng, 3, 5)), w), Error);
  CHECK_THROWS_AS(cross_attention(fm(random_matrix(rng, 3, 4)), fm(random_matrix(rng, 3, 5)), w), Error);
  w.layers[0].W_Q(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(w.validate(), Error);
}

TEST_CASE("attention weights: file round trip at float32 precision") {
  const auto w = AttentionWeights::random(8, 3, 42, 0.3);
  const auto path = (std::filesystem::temp_directory_path() / "fmreg_attn_test.bin").string();
  write_attention_weights(path, w);
  const auto r = read_attention_weights(path);
  REQUIRE(r.dim == 8);
  REQUIRE(r.layers.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    const Eigen::MatrixXd f = w.layers[l].W_K.cast<float>().cast<double>();
    CHECK((r.layers[l].W_K - f).norm() == 0.0);
  }
  {
    std::ofstream out(path, std::ios::binary);
    out << "FMAT";
  }
  CHECK_THROWS_AS(read_attention_weights(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("oracle_descriptor: sigma 0 copies model features; determinism") {
  Rng rng(9);
  const Points model = random_points(rng, 200);
  const RigidTransform T = random_transform(rng);
  PointCloud scene;
  scene.points = transform(T, model);
  scene.labels = std::vector<int>(model.size(), 0);
  for (int i = 0; i < 50; ++i) {
    scene.points.push_back(random_vec(rng, 10, 11));
    scene.labels->push_back(-1);
  }
  const std::vector<RigidTransform> poses = {T};
  const auto a = oracle_descriptor(scene, model, poses, 0.0, 16, 77);
  const auto b = oracle_descriptor(scene, model, poses, 0.0, 16, 77);
  CHECK(a.scene.vectors == b.scene.vectors);
  CHECK(a.model.vectors == b.model.vectors);
  for (std::size_t i = 0; i < model.size(); ++i)
    CHECK(a.scene.vectors.row(static_cast<Eigen::Index>(i)) == a.model.vectors.row(static_cast<Eigen::Index>(i)));

  // nearest neighbor in feature space recovers the ground-truth partner
  const Eigen::MatrixXd sim = a.scene.vectors.topRows(static_cast<Eigen::Index>(model.size())) * a.model.vectors.transpose();
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index j;
    sim.row(i).maxCoeff(&j);
    CHECK(j == i);
  }
}

TEST_CASE("oracle_descriptor: background features are uncorrelated with the model") {
  Rng rng(10);
  const Points model = random_points(rng, 100);
  PointCloud scene;
  scene.points = random_points(rng, 1000, 5, 6);
  scene.labels = std::vector<int>(1000, -1);
  const auto f = oracle_descriptor(scene, model, {}, 0.0, 32, 3);
  const Eigen::MatrixXd dots = f.scene.vectors * f.model.vectors.transpose();
  const double mean = dots.mean();
  // each dot of independent unit vectors has variance 1/D
  const double se = std::sqrt(1.0 / 32.0 / static_cast<double>(dots.size()));
  CHECK(std::abs(mean) < 5.0 * se);
}

TEST_CASE("oracle_descriptor: noise norm scales with sigma; missing labels rejected") {
  Rng rng(11);
  const Points model = random_points(rng, 300);
  PointCloud scene;
  scene.points = model;
  scene.labels = std::vector<int>(model.size(), 0);
  const std::vector<RigidTransform> poses = {RigidTransform{}};
  const auto f0 = oracle_descriptor(scene, model, poses, 0.0, 32, 5);
  const auto f1 = oracle_descriptor(scene, model, poses, 0.5, 32, 5);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < f0.scene.vectors.rows(); ++i) sq += (f1.scene.vectors.row(i) - f0.scene.vectors.row(i)).squaredNorm();
  CHECK(std::sqrt(sq / 300.0) == doctest::Approx(0.5).epsilon(0.05));

  PointCloud unlabeled;
  unlabeled.points = model;
  CHECK_THROWS_AS(oracle_descriptor(unlabeled, model, poses, 0.0, 32, 5), Error);
  CHECK_THROWS_AS(oracle_descriptor(scene, model, poses, -1.0, 32, 5), Error);
  scene.labels->at(0) = 3;
  CHECK_THROWS_AS(oracle_descriptor(scene, model, poses, 0.0, 32, 5), Error);
}

TEST_CASE("covariance_descriptor: plane and isotropic blob") {
  Rng rng(12);
  Points plane;
  for (int i = 0; i < 400; ++i) plane.push_back(Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), 0.0));
  const auto p = covariance_descriptor(plane, 0.5);
  const auto row = p.features.vectors.row(0);
  CHECK(row(2) < 1e-12);          // smallest eigenvalue share
  CHECK(row(5) < 1e-12);          // sphericity
  CHECK(row(4) > row(3));         // planarity dominates linearity

  Points blob;
  for (int i = 0; i < 20000; ++i) blob.push_back(Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)));
  blob[0] = Vec3::Zero();
  const auto b = covariance_descriptor(std::span<const Vec3>(blob), 100.0);
  const auto r0 = b.features.vectors.row(0);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(r0(k) - 1.0 / 3.0) < 0.02);
}

TEST_CASE("covariance_descriptor: rigid invariance and degenerate flags") {
  Rng rng(13);
  const Points pts = random_points(rng, 500);
  const auto T = random_transform(rng);
  const auto a = covariance_descriptor(pts, 0.4);
  const auto b = covariance_descriptor(transform(T, pts), 0.4);
  CHECK((a.features.vectors - b.features.vectors).cwiseAbs().maxCoeff() < 1e-6);

  const Points sparse = {Vec3(0, 0, 0), Vec3(10, 0, 0), Vec3(20, 0, 0)};
  const auto s = covariance_descriptor(sparse, 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.degenerate[i]);
  CHECK(s.features.vectors.topLeftCorner(3, 7).norm() == 0.0);
  CHECK_THROWS_AS(covariance_descriptor(pts, 0.0), Error);
}

TEST_CASE("multiscale_covariance: width and invariance") {
  Rng rng(14);
  const Points pts = random_points(rng, 300);
  const auto f = multiscale_covariance(pts, 0.3, 32);
  CHECK(f.dim() == 32);
  CHECK(f.rows() == 300);
  const auto g = multiscale_covariance(transform(random_transform(rng), pts), 0.3, 32);
  CHECK((f.vectors - g.vectors).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("geodesic_embedding: zero, sentinel, purity") {
  const std::vector<double> d = {0.0, std::numeric_limits<double>::infinity(), 0.7, 0.7};
  const auto e = geodesic_embedding(d, 8, 2.0);
  for (Eigen::Index k = 0; k < 8; ++k) CHECK(e(0, k) == (k % 2 == 0 ? 0.0 : 1.0));
  CHECK(e.row(1).norm() == 0.0);
  CHECK(e.row(2) == e.row(3));
  CHECK(std::abs(e(2, 0) - std::sin(2 * M_PI * 0.7 / 2.0)) < 1e-15);
  CHECK(std::abs(e(2, 3) - std::cos(2 * M_PI * 0.7 / 1.0)) < 1e-15);
  CHECK_THROWS_AS(geodesic_embedding(d, 7, 2.0), Error);
}

TEST_CASE("feature helpers: gather, pool_mean, normalize_rows") {
  Rng rng(15);
  const FeatureMap f{random_matrix(rng, 6, 3)};
  const std::vector<std::size_t> idx = {4, 1};
  const auto g = gather(f, idx);
  CHECK(g.vectors.row(0) == f.vectors.row(4));
  const std::vector<std::vector<std::size_t>> groups = {{0, 1, 2}, {5}};
  const auto p = pool_mean(f, groups);
  CHECK((p.vectors.row(0) - (f.vectors.row(0) + f.vectors.row(1) + f.vectors.row(2)) / 3.0).norm() < 1e-15);
  CHECK(p.vectors.row(1) == f.vectors.row(5));
  Eigen::MatrixXd m = random_matrix(rng, 4, 3);
  m.row(2).setZero();
  const auto n = normalize_rows(m);
  CHECK(std::abs(n.row(0).norm() - 1.0) < 1e-15);
  CHECK(n.row(2).norm() == 0.0);
  FeatureMap bad{Eigen::MatrixXd::Constant(2, 2, std::numeric_limits<double>::infinity())};
  CHECK_THROWS_AS(bad.validate(2), Error);
  CHECK_THROWS_AS(f.validate(5), Error);
}
