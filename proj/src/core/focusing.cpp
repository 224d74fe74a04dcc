#include "focusing.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <numeric>

#include "error.hpp"
#include "geometry.hpp"
#include "rng.hpp"
#include "spatial_index.hpp"

namespace fmreg {

OffsetField predict_offsets(const FeatureMap& features, const FocusHeads& heads) {
  const Eigen::MatrixXd out = heads.offset.forward(features.vectors);
  if (out.cols() != 3) fail(ErrorCode::InvalidArgument, "offset head must produce 3 outputs");
  OffsetField offsets(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) offsets[static_cast<std::size_t>(i)] = out.row(i).transpose();
  return offsets;
}

MaskScores predict_point_mask(const FeatureMap& features, const Eigen::MatrixXd& geo, const Perceptron& head) {
  if (geo.rows() != features.vectors.rows())
    fail(ErrorCode::InvalidArgument, "mask head: feature and embedding row counts differ");
  Eigen::MatrixXd input(features.vectors.rows(), features.vectors.cols() + geo.cols());
  input << features.vectors, geo;
  const Eigen::MatrixXd logits = head.forward(input);
  if (logits.cols() != 1) fail(ErrorCode::InvalidArgument, "mask head must produce 1 output");
  const Eigen::MatrixXd s = logistic(logits);
  return MaskScores(s.data(), s.data() + s.size());
}

ShiftedPoints shift_and_filter(std::span<const Vec3> points, std::span<const Vec3> offsets,
                               std::span<const double> mask, double threshold) {
  require(points.size() == offsets.size() && points.size() == mask.size(), "shift_and_filter: length mismatch");
  require(threshold > 0.0 && threshold < 1.0, "shift_and_filter: threshold must be in (0, 1)");
  ShiftedPoints out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (mask[i] > threshold) {
      out.points.push_back(points[i] + offsets[i]);
      out.index.push_back(i);
    }
  }
  return out;
}

std::vector<int> dbscan(std::span<const Vec3> points, double eps, std::size_t min_pts) {
  require(eps > 0.0, "dbscan: eps must be > 0");
  require(min_pts >= 1, "dbscan: min_pts must be >= 1");
  const std::size_t n = points.size();
  constexpr int kUnvisited = -2, kNoise = -1;
  std::vector<int> label(n, kUnvisited);
  if (n == 0) return {};
  KdTree tree(points);

  int cluster = 0;
  std::deque<std::size_t> frontier;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    auto nbrs = tree.radius_search(points[i], eps);
    if (nbrs.size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    label[i] = cluster;
    frontier.assign(nbrs.begin(), nbrs.end());
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      if (label[j] == kNoise) label[j] = cluster;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = cluster;
      auto more = tree.radius_search(points[j], eps);
      if (more.size() >= min_pts) frontier.insert(frontier.end(), more.begin(), more.end());
    }
    ++cluster;
  }
  return label;
}

CenterSet compute_centers(std::span<const Vec3> points, std::span<const int> labels) {
  require(points.size() == labels.size(), "compute_centers: labels not aligned with points");
  CenterSet out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= out.members.size()) out.members.resize(c + 1);
    out.members[c].push_back(i);
  }
  // Drop ids that never occur so the set stays dense.
  std::erase_if(out.members, [](const auto& m) { return m.empty(); });
  for (const auto& m : out.members) {
    Vec3 sum = Vec3::Zero();
    for (auto i : m) sum += points[i];
    out.centers.push_back(sum / static_cast<double>(m.size()));
  }
  return out;
}

namespace {

bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

}  // namespace

ProposalSet generate_proposals(const PointCloud& scene_dense, const CenterSet& centers, double model_radius,
                               double scale, std::size_t max_points, std::uint64_t seed) {
  require(model_radius > 0.0, "generate_proposals: model radius must be > 0");
  require(scale > 0.0, "generate_proposals: scale must be > 0");
  require(max_points >= 1, "generate_proposals: max_points must be >= 1");

  std::vector<Vec3> order(centers.centers);
  std::stable_sort(order.begin(), order.end(), lex_less);

  const double radius = scale * model_radius;
  KdTree tree(scene_dense.points);
  ProposalSet out;
  for (const auto& c : order) {
    auto idx = ball_query(tree, c, radius);
    if (idx.empty()) {
      out.dropped.push_back({c, "empty ball query: no scene points within " + std::to_string(radius) + " m"});
      continue;
    }
    Proposal p;
    p.id = out.proposals.size();
    p.center = c;
    p.radius = radius;
    if (idx.size() > max_points) {
      // Partial Fisher-Yates keyed by the proposal's position in sorted order.
      Rng rng(derive_seed({seed, 0x70726f70ULL, p.id}));
      for (std::size_t k = 0; k < max_points; ++k) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(k), static_cast<std::int64_t>(idx.size() - 1)));
        std::swap(idx[k], idx[j]);
      }
      idx.resize(max_points);
      std::sort(idx.begin(), idx.end());
    }
    p.indices = std::move(idx);
    p.cloud = gather(scene_dense, p.indices);
    out.proposals.push_back(std::move(p));
  }
  return out;
}

void FocusParams::validate() const {
  require(sampled_voxel > 0.0, "focus: sampled voxel must be > 0");
  require(eps_factor > 0.0, "focus: eps factor must be > 0");
  require(min_pts >= 1, "focus: min_pts must be >= 1");
  require(mask_threshold > 0.0 && mask_threshold < 1.0, "focus: mask threshold must be in (0, 1)");
  require(proposal_scale > 0.0, "focus: proposal scale must be > 0");
  require(max_points >= 1, "focus: max_points must be >= 1");
  require(geo_width > 0 && geo_width % 2 == 0, "focus: geodesic width must be even");
  require(geo_knn >= 2, "focus: geodesic k must be >= 2");
}

std::vector<std::size_t> spaced_seeds(std::span<const Vec3> points, double spacing) {
  std::vector<std::size_t> seeds;
  if (points.empty()) return seeds;
  std::vector<double> dist(points.size(), std::numeric_limits<double>::infinity());
  std::size_t next = 0;
  for (;;) {
    seeds.push_back(next);
    const Vec3 seed = points[next];
    double far = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      dist[i] = std::min(dist[i], (points[i] - seed).norm());
      if (dist[i] > far) {
        far = dist[i];
        next = i;
      }
    }
    if (far < spacing) break;
  }
  return seeds;
}

FocusResult focus_pipeline(const FocusInputs& in, const FocusParams& params) {
  params.validate();
  require(in.scene_dense && in.scene_features && in.model_features && in.heads, "focus: missing inputs");
  require(in.model_radius > 0.0, "focus: model radius must be > 0");
  in.scene_features->validate(in.scene_dense->size());

  FocusResult r;
  auto ds = voxel_downsample(*in.scene_dense, params.sampled_voxel);
  r.sampled = std::move(ds.cloud);
  r.sampled_sources = std::move(ds.sources);
  const std::size_t ns = r.sampled.size();
  if (ns == 0) return r;

  if (in.oracle) {
    if (!r.sampled.labels) fail(ErrorCode::InvalidArgument, "focus oracle requires scene labels");
    r.offsets.assign(ns, Vec3::Zero());
    r.mask.assign(ns, 0.0);
    for (std::size_t i = 0; i < ns; ++i) {
      const int label = (*r.sampled.labels)[i];
      if (label < 0) continue;
      if (static_cast<std::size_t>(label) >= in.oracle->instance_centroids.size())
        fail(ErrorCode::InvalidArgument, "focus oracle: label without centroid");
      r.offsets[i] = in.oracle->instance_centroids[static_cast<std::size_t>(label)] - r.sampled.points[i];
      r.mask[i] = 1.0;
    }
  } else {
    FeatureMap f = pool_mean(*in.scene_features, r.sampled_sources);
    FeatureMap fq = *in.model_features;
    if (in.self_weights) {
      f = self_attention(f, *in.self_weights);
      fq = self_attention(fq, *in.self_weights);
    }
    if (in.cross_weights) f = cross_attention(f, fq, *in.cross_weights);
    in.heads->validate(f.dim(), params.geo_width);

    const auto seeds = spaced_seeds(r.sampled.points, in.model_radius);
    const auto geo_dist = geodesic_distances(r.sampled.points, std::min(params.geo_knn, std::max<std::size_t>(ns - 1, 2)), seeds);
    const Eigen::MatrixXd geo = geodesic_embedding(geo_dist, params.geo_width, 4.0 * in.model_radius);
    r.offsets = predict_offsets(f, *in.heads);
    r.mask = predict_point_mask(f, geo, in.heads->mask);
  }

  r.shifted = shift_and_filter(r.sampled.points, r.offsets, r.mask, params.mask_threshold);
  r.cluster_labels = dbscan(r.shifted.points, params.eps_factor * in.model_radius, params.min_pts);
  r.centers = compute_centers(r.shifted.points, r.cluster_labels);
  r.proposals = generate_proposals(*in.scene_dense, r.centers, in.model_radius, params.proposal_scale, params.max_points, params.seed);
  return r;
}

}  // namespace fmreg
