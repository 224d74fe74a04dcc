#include "descriptors.hpp"

#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "error.hpp"
#include "rng.hpp"
#include "spatial_index.hpp"

namespace fmreg {

void FeatureMap::validate(std::size_t expected_rows) const {
  if (rows() != expected_rows)
    fail(ErrorCode::Invariant, "feature map has " + std::to_string(rows()) + " rows, expected " + std::to_string(expected_rows));
  if (!vectors.allFinite()) fail(ErrorCode::Invariant, "feature map has non-finite entries");
}

FeatureMap gather(const FeatureMap& features, std::span<const std::size_t> rows) {
  FeatureMap out;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), features.vectors.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.vectors.row(static_cast<Eigen::Index>(i)) = features.vectors.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

FeatureMap pool_mean(const FeatureMap& features, const std::vector<std::vector<std::size_t>>& groups) {
  FeatureMap out;
  out.vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), features.vectors.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    auto row = out.vectors.row(static_cast<Eigen::Index>(g));
    for (auto i : groups[g]) row += features.vectors.row(static_cast<Eigen::Index>(i));
    row /= static_cast<double>(groups[g].size());
  }
  return out;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------

void AttentionWeights::validate() const {
  require(dim > 0, "attention weights: zero width");
  const auto d = static_cast<Eigen::Index>(dim);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (const auto* m : {&layers[l].W_Q, &layers[l].W_K, &layers[l].W_V, &layers[l].W_O}) {
      if (m->rows() != d || m->cols() != d)
        fail(ErrorCode::Invariant, "attention layer " + std::to_string(l) + ": matrix is not " + std::to_string(dim) + "x" + std::to_string(dim));
      if (!m->allFinite()) fail(ErrorCode::Invariant, "attention layer " + std::to_string(l) + ": non-finite weight");
    }
  }
}

AttentionWeights AttentionWeights::random(std::size_t dim, std::size_t layers, std::uint64_t seed, double scale) {
  AttentionWeights w;
  w.dim = dim;
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dim);
  const double s = scale / std::sqrt(static_cast<double>(dim));
  auto mat = [&] {
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = s * standard_normal(rng);
    return m;
  };
  for (std::size_t l = 0; l < layers; ++l) {
    AttentionLayer layer;
    layer.W_Q = mat();
    layer.W_K = mat();
    layer.W_V = mat();
    layer.W_O = mat();
    w.layers.push_back(std::move(layer));
  }
  return w;
}

namespace {

void check_width(const Eigen::MatrixXd& m, const AttentionLayer& layer, const char* what) {
  if (m.cols() != layer.W_Q.rows())
    fail(ErrorCode::InvalidArgument, std::string("attention: ") + what + " width " + std::to_string(m.cols()) +
                                         " does not match weight width " + std::to_string(layer.W_Q.rows()));
}

}  // namespace

Eigen::MatrixXd attention_scores(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& context,
                                 const AttentionLayer& layer) {
  check_width(queries, layer, "query");
  check_width(context, layer, "context");
  const Eigen::MatrixXd q = queries * layer.W_Q.transpose();
  const Eigen::MatrixXd k = context * layer.W_K.transpose();
  Eigen::MatrixXd logits = (q * k.transpose()) / std::sqrt(static_cast<double>(layer.W_Q.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return logits;
}

Eigen::MatrixXd attention_layer(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& context,
                                const AttentionLayer& layer, bool residual) {
  if (context.rows() == 0) fail(ErrorCode::InvalidArgument, "attention: empty context");
  const Eigen::MatrixXd a = attention_scores(queries, context, layer);
  const Eigen::MatrixXd v = context * layer.W_V.transpose();
  Eigen::MatrixXd out = (a * v) * layer.W_O.transpose();
  if (residual) out += queries;
  return out;
}

FeatureMap self_attention(const FeatureMap& features, const AttentionWeights& weights) {
  FeatureMap out = features;
  for (const auto& layer : weights.layers) out.vectors = attention_layer(out.vectors, out.vectors, layer);
  return out;
}

FeatureMap cross_attention(const FeatureMap& queries, const FeatureMap& context, const AttentionWeights& weights) {
  FeatureMap out = queries;
  for (const auto& layer : weights.layers) out.vectors = attention_layer(out.vectors, context.vectors, layer);
  return out;
}

namespace {

constexpr char kAttentionMagic[4] = {'F', 'M', 'A', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) fail(ErrorCode::Parse, path + ": truncated header");
  return v;
}

}  // namespace

void write_attention_weights(const std::string& path, const AttentionWeights& weights) {
  weights.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path + "'");
  out.write(kAttentionMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(weights.layers.size()));
  put_u32(out, static_cast<std::uint32_t>(weights.dim));
  for (const auto& layer : weights.layers) {
    for (const auto* m : {&layer.W_Q, &layer.W_K, &layer.W_V, &layer.W_O}) {
      for (Eigen::Index i = 0; i < m->rows(); ++i)
        for (Eigen::Index j = 0; j < m->cols(); ++j) {
          const float f = static_cast<float>((*m)(i, j));
          out.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
  }
  if (!out) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

AttentionWeights read_attention_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kAttentionMagic, 4) != 0)
    fail(ErrorCode::Parse, path + ": not an attention weight file");
  if (get_u32(in, path) != 1) fail(ErrorCode::Parse, path + ": unsupported version");
  const auto layers = get_u32(in, path);
  const auto dim = get_u32(in, path);
  if (dim == 0 || dim > 4096 || layers > 1024) fail(ErrorCode::Parse, path + ": implausible header");
  AttentionWeights w;
  w.dim = dim;
  const auto d = static_cast<Eigen::Index>(dim);
  for (std::uint32_t l = 0; l < layers; ++l) {
    AttentionLayer layer;
    for (auto* m : {&layer.W_Q, &layer.W_K, &layer.W_V, &layer.W_O}) {
      m->resize(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
          float f;
          if (!in.read(reinterpret_cast<char*>(&f), 4)) fail(ErrorCode::Parse, path + ": truncated payload");
          (*m)(i, j) = f;
        }
    }
    w.layers.push_back(std::move(layer));
  }
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------

std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::Oracle: return "oracle";
    case ProviderKind::Covariance: return "covariance";
    case ProviderKind::AttentionEnhanced: return "attention";
  }
  return "?";
}

ProviderKind parse_provider_kind(const std::string& name) {
  if (name == "oracle") return ProviderKind::Oracle;
  if (name == "covariance") return ProviderKind::Covariance;
  if (name == "attention" || name == "attention-enhanced") return ProviderKind::AttentionEnhanced;
  fail(ErrorCode::InvalidArgument, "unknown descriptor provider '" + name + "'");
}

void DescriptorProviderConfig::validate() const {
  require(sigma_f >= 0.0 && std::isfinite(sigma_f), "provider: sigma_f must be >= 0");
  require(radius > 0.0, "provider: radius must be > 0");
  require(dim > 0, "provider: dim must be > 0");
  if (kind != ProviderKind::Oracle)
    require(dim % kCovarianceWidth == 0, "provider: covariance width must be a multiple of 8");
}

namespace {

enum Stream : std::uint64_t { kModelStream = 1, kNoiseStream = 2, kBackgroundStream = 3 };

Eigen::RowVectorXd random_unit(Eigen::Index dim, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::RowVectorXd row(dim);
  for (Eigen::Index j = 0; j < dim; ++j) row[j] = standard_normal(rng);
  return row / row.norm();
}

}  // namespace

OracleFeatures oracle_descriptor(const PointCloud& scene, std::span<const Vec3> model,
                                 std::span<const RigidTransform> gt_poses, double sigma_f, std::size_t dim,
                                 std::uint64_t seed) {
  if (!scene.labels) fail(ErrorCode::InvalidArgument, "oracle descriptor: scene has no instance labels");
  require(sigma_f >= 0.0, "oracle descriptor: sigma_f must be >= 0");
  require(dim > 0, "oracle descriptor: dim must be > 0");
  require(!model.empty(), "oracle descriptor: empty model");
  const auto d = static_cast<Eigen::Index>(dim);

  OracleFeatures out;
  out.model.vectors.resize(static_cast<Eigen::Index>(model.size()), d);
  for (std::size_t i = 0; i < model.size(); ++i)
    out.model.vectors.row(static_cast<Eigen::Index>(i)) = random_unit(d, derive_seed({seed, kModelStream, i}));

  KdTree tree(model);
  std::vector<RigidTransform> inverse;
  for (const auto& T : gt_poses) inverse.push_back(T.inverse());

  const double noise = sigma_f / std::sqrt(static_cast<double>(dim));
  out.scene.vectors.resize(static_cast<Eigen::Index>(scene.size()), d);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    auto row = out.scene.vectors.row(static_cast<Eigen::Index>(i));
    const int label = (*scene.labels)[i];
    if (label < 0) {
      row = random_unit(d, derive_seed({seed, kBackgroundStream, i}));
      continue;
    }
    if (static_cast<std::size_t>(label) >= inverse.size())
      fail(ErrorCode::InvalidArgument, "oracle descriptor: label " + std::to_string(label) + " has no ground-truth pose");
    const std::size_t j = tree.nearest(inverse[static_cast<std::size_t>(label)].apply(scene.points[i]));
    row = out.model.vectors.row(static_cast<Eigen::Index>(j));
    if (sigma_f > 0.0) {
      Rng rng(derive_seed({seed, kNoiseStream, i}));
      for (Eigen::Index c = 0; c < d; ++c) row[c] += noise * standard_normal(rng);
    }
  }
  return out;
}

CovarianceFeatures covariance_descriptor(std::span<const Vec3> points, double radius) {
  require(radius > 0.0, "covariance descriptor: radius must be > 0");
  CovarianceFeatures out;
  out.features.vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), kCovarianceWidth);
  out.degenerate.assign(points.size(), false);
  KdTree tree(points);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nbrs = tree.radius_search(points[i], radius);
    if (nbrs.size() < 3) {
      out.degenerate[i] = true;
      continue;
    }
    Vec3 mean = Vec3::Zero();
    for (auto j : nbrs) mean += points[j];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (auto j : nbrs) {
      const Vec3 q = points[j] - mean;
      cov += q * q.transpose();
    }
    cov /= static_cast<double>(nbrs.size());
    const double tr = cov.trace();
    if (!(tr > 0.0)) {
      out.degenerate[i] = true;
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov, Eigen::EigenvaluesOnly);
    const Vec3 ev = es.eigenvalues();  // ascending
    const double l1 = std::max(ev[2], 0.0);
    // rounding-level eigenvalues are zero; cbrt would amplify them
    auto snap = [l1](double l) { return l > 1e-12 * l1 ? l : 0.0; };
    const double l2 = snap(ev[1]), l3 = snap(ev[0]);
    auto row = out.features.vectors.row(static_cast<Eigen::Index>(i));
    row[0] = l1 / tr;
    row[1] = l2 / tr;
    row[2] = l3 / tr;
    row[3] = (l1 - l2) / l1;
    row[4] = (l2 - l3) / l1;
    row[5] = l3 / l1;
    row[6] = std::cbrt(l1 * l2 * l3) / tr;
    row[7] = std::log1p(static_cast<double>(nbrs.size())) / 10.0;
  }
  return out;
}

FeatureMap multiscale_covariance(std::span<const Vec3> points, double radius, std::size_t dim) {
  require(dim % kCovarianceWidth == 0 && dim > 0, "multiscale covariance: width must be a multiple of 8");
  static constexpr std::array<double, 8> kScales{1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0};
  const std::size_t levels = dim / kCovarianceWidth;
  require(levels <= kScales.size(), "multiscale covariance: width too large");
  FeatureMap out;
  out.vectors.resize(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t l = 0; l < levels; ++l) {
    const auto f = covariance_descriptor(points, radius * kScales[l]);
    out.vectors.middleCols(static_cast<Eigen::Index>(l * kCovarianceWidth), kCovarianceWidth) = f.features.vectors;
  }
  return out;
}

Eigen::MatrixXd geodesic_embedding(std::span<const double> distances, std::size_t width, double base_period) {
  require(width > 0 && width % 2 == 0, "geodesic embedding: width must be even and positive");
  require(base_period > 0.0, "geodesic embedding: base period must be > 0");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(distances.size()), static_cast<Eigen::Index>(width));
  constexpr double kTwoPi = 6.283185307179586;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const double d = distances[i];
    if (!std::isfinite(d)) continue;
    double period = base_period;
    for (std::size_t k = 0; k < width / 2; ++k, period *= 0.5) {
      const double phase = kTwoPi * d / period;
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 * k)) = std::sin(phase);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 * k + 1)) = std::cos(phase);
    }
  }
  return out;
}

}  // namespace fmreg
