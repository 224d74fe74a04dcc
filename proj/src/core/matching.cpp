#include "matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "error.hpp"
#include "geometry.hpp"
#include "spatial_index.hpp"

namespace fmreg {

PatchSet build_patches(std::span<const Vec3> dense, double anchor_voxel) {
  require(anchor_voxel > 0.0, "patches: anchor voxel must be > 0");
  PatchSet out;
  if (dense.empty()) return out;
  PointCloud cloud;
  cloud.points.assign(dense.begin(), dense.end());
  out.anchors = voxel_downsample(cloud, anchor_voxel).cloud.points;
  out.members.resize(out.anchors.size());
  out.owner.resize(dense.size());
  KdTree tree(out.anchors);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    const std::size_t a = tree.nearest(dense[i]);
    out.owner[i] = a;
    out.members[a].push_back(i);
  }
  return out;
}

std::vector<double> broadcast_to_dense(std::span<const double> anchor_values, const PatchSet& patches) {
  require(anchor_values.size() == patches.anchors.size(), "broadcast: one value per anchor expected");
  std::vector<double> out(patches.owner.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = anchor_values[patches.owner[i]];
  return out;
}

std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    return values[a] != values[b] ? values[a] > values[b] : a < b;
  });
  idx.resize(k);
  return idx;
}

namespace {

/// membership[r * cols + c] for mutual top-k selection over a dense matrix.
std::vector<PlanCell> mutual_cells(const Eigen::MatrixXd& m, std::size_t k) {
  const auto rows = static_cast<std::size_t>(m.rows()), cols = static_cast<std::size_t>(m.cols());
  std::vector<char> row_pick(rows * cols, 0);
  std::vector<double> buf;
  for (std::size_t r = 0; r < rows; ++r) {
    buf.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) buf[c] = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (auto c : top_k(buf, k)) row_pick[r * cols + c] = 1;
  }
  std::vector<PlanCell> out;
  for (std::size_t c = 0; c < cols; ++c) {
    buf.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) buf[r] = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (auto r : top_k(buf, k))
      if (row_pick[r * cols + c]) out.push_back({r, c, buf[r]});
  }
  std::sort(out.begin(), out.end(), [](const PlanCell& a, const PlanCell& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return out;
}

}  // namespace

std::vector<PlanCell> mutual_top_k(const Eigen::MatrixXd& interior, std::size_t k) {
  require(k >= 1, "mutual top-k: k must be >= 1");
  return mutual_cells(interior, k);
}

std::vector<CoarseMatch> coarse_match(const Eigen::MatrixXd& proposal_anchors, const Eigen::MatrixXd& model_anchors,
                                      std::size_t k) {
  require(k >= 1, "coarse match: k must be >= 1");
  if (proposal_anchors.rows() == 0 || model_anchors.rows() == 0) return {};
  require(proposal_anchors.cols() == model_anchors.cols(), "coarse match: feature widths differ");
  const Eigen::MatrixXd sim = normalize_rows(proposal_anchors) * normalize_rows(model_anchors).transpose();
  std::vector<CoarseMatch> out;
  for (const auto& cell : mutual_cells(sim, k)) out.push_back({cell.row, cell.col, cell.mass});
  std::stable_sort(out.begin(), out.end(), [](const CoarseMatch& a, const CoarseMatch& b) { return a.score > b.score; });
  return out;
}

AssignmentMatrix sinkhorn_transport(const Eigen::MatrixXd& scores, double dustbin, std::size_t iterations) {
  require(iterations >= 1, "sinkhorn: iterations must be >= 1");
  require(scores.rows() >= 1 && scores.cols() >= 1, "sinkhorn: empty score matrix");
  require(scores.allFinite() && std::isfinite(dustbin), "sinkhorn: scores must be finite");
  const Eigen::Index n = scores.rows(), m = scores.cols();

  Eigen::MatrixXd Z(n + 1, m + 1);
  Z.topLeftCorner(n, m) = scores;
  Z.col(m).setConstant(dustbin);
  Z.row(n).setConstant(dustbin);

  Eigen::VectorXd mu = Eigen::VectorXd::Ones(n + 1), nu = Eigen::VectorXd::Ones(m + 1);
  mu[n] = static_cast<double>(m);
  nu[m] = static_cast<double>(n);

  AssignmentMatrix out;
  const double hi = Z.maxCoeff(), lo = Z.minCoeff();
  if (hi - lo <= 250.0) {
    const Eigen::MatrixXd K = (Z.array() - hi).exp().matrix();
    Eigen::VectorXd a(n + 1), b = Eigen::VectorXd::Ones(m + 1);
    for (std::size_t it = 0; it < iterations; ++it) {
      a = mu.cwiseQuotient(K * b);
      b = nu.cwiseQuotient(K.transpose() * a);
    }
    out.plan = a.asDiagonal() * K * b.asDiagonal();
    return out;
  }

  const Eigen::VectorXd log_mu = mu.array().log(), log_nu = nu.array().log();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n + 1), v = Eigen::VectorXd::Zero(m + 1);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i <= n; ++i) {
      const Eigen::ArrayXd row = Z.row(i).transpose().array() + v.array();
      const double mx = row.maxCoeff();
      u[i] = log_mu[i] - (mx + std::log((row - mx).exp().sum()));
    }
    for (Eigen::Index j = 0; j <= m; ++j) {
      const Eigen::ArrayXd col = Z.col(j).array() + u.array();
      const double mx = col.maxCoeff();
      v[j] = log_nu[j] - (mx + std::log((col - mx).exp().sum()));
    }
  }
  out.plan = ((Z.colwise() + u).rowwise() + v.transpose()).array().exp().matrix();
  return out;
}

void DenseMatchParams::validate() const {
  require(mask_threshold >= 0.0 && mask_threshold < 1.0, "dense match: mask threshold must be in [0, 1)");
  require(k >= 1, "dense match: k must be >= 1");
  require(iterations >= 1, "dense match: Sinkhorn iterations must be >= 1");
  require(std::isfinite(dustbin), "dense match: dustbin score must be finite");
  require(score_scale > 0.0, "dense match: score scale must be > 0");
  require(min_confidence >= 0.0 && min_confidence < 1.0, "dense match: min confidence must be in [0, 1)");
}

std::vector<DenseCorrespondence> dense_match(const CoarseMatch& coarse, const PatchSet& proposal_patches,
                                             const PatchSet& model_patches, const Eigen::MatrixXd& proposal_features,
                                             const Eigen::MatrixXd& model_features,
                                             std::span<const double> instance_mask,
                                             std::span<const double> overlap_mask, const DenseMatchParams& params) {
  require(instance_mask.size() == proposal_patches.owner.size() && overlap_mask.size() == proposal_patches.owner.size(),
          "dense match: masks must be aligned with dense proposal points");
  require(coarse.proposal_anchor < proposal_patches.members.size() && coarse.model_anchor < model_patches.members.size(),
          "dense match: coarse match index out of range");

  std::vector<std::size_t> rows;
  for (auto i : proposal_patches.members[coarse.proposal_anchor])
    if (instance_mask[i] * overlap_mask[i] > params.mask_threshold) rows.push_back(i);
  const auto& cols = model_patches.members[coarse.model_anchor];
  if (rows.empty() || cols.empty()) return {};

  Eigen::MatrixXd pf(static_cast<Eigen::Index>(rows.size()), proposal_features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) pf.row(static_cast<Eigen::Index>(r)) = proposal_features.row(static_cast<Eigen::Index>(rows[r]));
  Eigen::MatrixXd mf(static_cast<Eigen::Index>(cols.size()), model_features.cols());
  for (std::size_t c = 0; c < cols.size(); ++c) mf.row(static_cast<Eigen::Index>(c)) = model_features.row(static_cast<Eigen::Index>(cols[c]));

  const Eigen::MatrixXd scores = params.score_scale * (normalize_rows(pf) * normalize_rows(mf).transpose());
  const AssignmentMatrix z = sinkhorn_transport(scores, params.dustbin, params.iterations);
  const Eigen::MatrixXd interior = z.plan.topLeftCorner(scores.rows(), scores.cols());

  std::vector<DenseCorrespondence> out;
  for (const auto& cell : mutual_cells(interior, params.k)) {
    if (cell.mass <= params.min_confidence) continue;
    out.push_back({rows[cell.row], cols[cell.col], cell.mass});
  }
  return out;
}

void LocalToGlobalParams::validate() const {
  require(inlier_radius > 0.0, "local-to-global: inlier radius must be > 0");
  require(tighten_floor > 0.0, "local-to-global: tighten floor must be > 0");
}

InstanceRegistration local_to_global(const std::vector<std::vector<DenseCorrespondence>>& groups,
                                     std::span<const Vec3> proposal_points, std::span<const Vec3> model_points,
                                     const LocalToGlobalParams& params) {
  params.validate();
  std::vector<DenseCorrespondence> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  require(!all.empty(), "local-to-global: no correspondences");
  for (const auto& c : all)
    require(c.proposal_index < proposal_points.size() && c.model_index < model_points.size(),
            "local-to-global: correspondence index out of range");

  auto inliers_within = [&](const RigidTransform& T, double radius) {
    const double r2 = radius * radius;
    std::vector<std::size_t> in;
    for (std::size_t k = 0; k < all.size(); ++k)
      if ((T.apply(model_points[all[k].model_index]) - proposal_points[all[k].proposal_index]).squaredNorm() <= r2) in.push_back(k);
    return in;
  };
  auto inliers_of = [&](const RigidTransform& T) { return inliers_within(T, params.inlier_radius); };
  auto solve = [&](std::span<const DenseCorrespondence> set) {
    Points src, dst;
    std::vector<double> w;
    for (const auto& c : set) {
      src.push_back(model_points[c.model_index]);
      dst.push_back(proposal_points[c.proposal_index]);
      w.push_back(c.weight);
    }
    return weighted_kabsch(src, dst, w);
  };

  InstanceRegistration out;
  bool have = false;
  std::vector<std::size_t> best_inliers;
  for (const auto& g : groups) {
    if (g.size() < 3) continue;
    RigidTransform T;
    try {
      T = solve(g);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Degenerate) continue;
      throw;
    }
    ++out.candidate_count;
    auto in = inliers_of(T);
    // polish once on the candidate's own consensus set before scoring
    if (in.size() >= 3) {
      std::vector<DenseCorrespondence> subset;
      for (auto k : in) subset.push_back(all[k]);
      try {
        const RigidTransform P = solve(subset);
        T = P;
        in = inliers_of(P);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Degenerate) throw;
      }
    }
    if (!have || in.size() > best_inliers.size()) {
      have = true;
      out.pose = T;
      best_inliers = std::move(in);
    }
  }
  if (!have) fail(ErrorCode::RegistrationFailed, "every correspondence group is degenerate");
  out.best_candidate_inliers = best_inliers.size();

  for (std::size_t round = 0; round < params.rounds && best_inliers.size() >= 3; ++round) {
    std::vector<DenseCorrespondence> subset;
    for (auto k : best_inliers) subset.push_back(all[k]);
    RigidTransform T;
    try {
      T = solve(subset);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Degenerate) break;
      throw;
    }
    auto in = inliers_of(T);
    if (in.size() < best_inliers.size()) break;
    const bool unchanged = in == best_inliers;
    out.pose = T;
    best_inliers = std::move(in);
    if (unchanged) break;
  }

  // tighten: re-fit on progressively closer pairs while enough of them remain
  for (double radius = 0.5 * params.inlier_radius; radius >= params.tighten_floor * params.inlier_radius * (1.0 - 1e-12);
       radius *= 0.5) {
    auto close = inliers_within(out.pose, radius);
    if (close.size() < 3 || 2 * close.size() < best_inliers.size()) break;
    std::vector<DenseCorrespondence> subset;
    for (auto k : close) subset.push_back(all[k]);
    try {
      out.pose = solve(subset);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Degenerate) break;
      throw;
    }
    best_inliers = inliers_of(out.pose);
  }

  for (auto k : best_inliers) {
    const auto& c = all[k];
    out.correspondences.push_back({c.proposal_index, c.model_index, proposal_points[c.proposal_index], model_points[c.model_index], c.weight});
  }
  out.inlier_count = best_inliers.size();
  if (out.inlier_count == 0) {
    out.failed = true;
    out.diagnostic = "no inliers within " + std::to_string(params.inlier_radius) + " m for any candidate";
  }
  return out;
}

ModelContext ModelContext::build(Points dense, const FeatureMap& features, double anchor_voxel) {
  features.validate(dense.size());
  ModelContext ctx;
  ctx.radius = cloud_radius(dense);
  ctx.patches = build_patches(dense, anchor_voxel);
  ctx.anchor_features = pool_mean(features, ctx.patches.members);
  ctx.dense_features = normalize_rows(features.vectors);
  ctx.dense = std::move(dense);
  return ctx;
}

void MatchParams::validate() const {
  require(anchor_voxel > 0.0, "match: anchor voxel must be > 0");
  require(coarse_k >= 1, "match: coarse k must be >= 1");
  require(geo_width > 0 && geo_width % 2 == 0, "match: geodesic width must be even");
  require(geo_knn >= 2, "match: geodesic k must be >= 2");
  dense.validate();
  l2g.validate();
}

MaskScores predict_instance_mask(const FeatureMap& anchor_features, const Eigen::MatrixXd& geo, const MatchHeads& heads) {
  return predict_point_mask(anchor_features, geo, heads.instance_mask);
}

MaskScores predict_overlap_mask(const FeatureMap& anchor_features, const FeatureMap& model_anchor_features,
                                const Eigen::MatrixXd& geo, const MatchNetwork& net, const PatchSet& patches) {
  require(net.heads != nullptr, "overlap mask: missing heads");
  FeatureMap eo = anchor_features, eq = model_anchor_features;
  if (net.self_weights) {
    eo = self_attention(eo, *net.self_weights);
    eq = self_attention(eq, *net.self_weights);
  }
  const FeatureMap zo = net.cross_weights ? cross_attention(eo, eq, *net.cross_weights) : eo;
  const MaskScores sampled = predict_point_mask(zo, geo, net.heads->overlap_mask);
  return broadcast_to_dense(sampled, patches);
}

void keep_heaviest_per_point(std::vector<std::vector<DenseCorrespondence>>& groups, std::size_t point_count) {
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<double> weight(point_count, -1.0);
  std::vector<std::pair<std::size_t, std::size_t>> owner(point_count, {none, none});
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t k = 0; k < groups[g].size(); ++k) {
      const auto& c = groups[g][k];
      require(c.proposal_index < point_count, "correspondence index out of range");
      if (c.weight > weight[c.proposal_index]) {
        weight[c.proposal_index] = c.weight;
        owner[c.proposal_index] = {g, k};
      }
    }
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<DenseCorrespondence> kept;
    for (std::size_t k = 0; k < groups[g].size(); ++k)
      if (owner[groups[g][k].proposal_index] == std::make_pair(g, k)) kept.push_back(groups[g][k]);
    groups[g] = std::move(kept);
  }
}

namespace {

InstanceRegistration failed_registration(const Proposal& p, std::string why) {
  InstanceRegistration r;
  r.proposal_id = p.id;
  r.center = p.center;
  r.failed = true;
  r.diagnostic = std::move(why);
  return r;
}

}  // namespace

InstanceRegistration register_proposal(const Proposal& proposal, const FeatureMap& proposal_features,
                                       const ModelContext& model, const MatchNetwork& net,
                                       const OracleMasks* oracle_masks, const MatchParams& params) {
  params.validate();
  const Points& pts = proposal.cloud.points;
  if (pts.empty()) return failed_registration(proposal, "empty proposal");
  proposal_features.validate(pts.size());

  const PatchSet patches = build_patches(pts, params.anchor_voxel);
  std::vector<double> instance, overlap;
  if (oracle_masks) {
    require(oracle_masks->instance.size() == pts.size() && oracle_masks->overlap.size() == pts.size(),
            "oracle masks must cover every proposal point");
    instance = oracle_masks->instance;
    overlap = oracle_masks->overlap;
  } else {
    require(net.heads != nullptr, "register: missing match heads");
    const FeatureMap anchor_features = pool_mean(proposal_features, patches.members);
    KdTree anchor_tree(patches.anchors);
    const std::size_t source = anchor_tree.nearest(proposal.center);
    const std::size_t k = std::min(params.geo_knn, std::max<std::size_t>(patches.anchors.size() - 1, 2));
    const auto dist = geodesic_distances(patches.anchors, k, std::span<const std::size_t>(&source, 1));
    const Eigen::MatrixXd geo = geodesic_embedding(dist, params.geo_width, 4.0 * model.radius);
    net.heads->validate(proposal_features.dim(), params.geo_width);
    instance = broadcast_to_dense(predict_instance_mask(anchor_features, geo, *net.heads), patches);
    overlap = predict_overlap_mask(anchor_features, model.anchor_features, geo, net, patches);
  }

  // Anchor descriptors pool only the members that pass the mask gate.
  std::vector<std::size_t> live;
  Eigen::MatrixXd live_features(0, proposal_features.vectors.cols());
  {
    std::vector<Eigen::RowVectorXd> rows;
    for (std::size_t a = 0; a < patches.anchors.size(); ++a) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(proposal_features.vectors.cols());
      std::size_t count = 0;
      for (auto i : patches.members[a]) {
        if (instance[i] * overlap[i] > params.dense.mask_threshold) {
          sum += proposal_features.vectors.row(static_cast<Eigen::Index>(i));
          ++count;
        }
      }
      if (count == 0) continue;
      live.push_back(a);
      rows.push_back(sum / static_cast<double>(count));
    }
    live_features.resize(static_cast<Eigen::Index>(rows.size()), proposal_features.vectors.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) live_features.row(static_cast<Eigen::Index>(r)) = rows[r];
  }
  if (live.empty()) return failed_registration(proposal, "instance/overlap masks removed every proposal point");

  auto coarse = coarse_match(live_features, model.anchor_features.vectors, params.coarse_k);
  for (auto& c : coarse) c.proposal_anchor = live[c.proposal_anchor];

  const Eigen::MatrixXd proposal_dense = normalize_rows(proposal_features.vectors);
  std::vector<std::vector<DenseCorrespondence>> groups;
  std::size_t total = 0;
  for (const auto& c : coarse) {
    groups.push_back(dense_match(c, patches, model.patches, proposal_dense, model.dense_features, instance, overlap, params.dense));
    total += groups.back().size();
  }
  if (total == 0) return failed_registration(proposal, "no dense correspondences survived masking and matching");
  if (params.unique_scene_points) keep_heaviest_per_point(groups, pts.size());

  InstanceRegistration r;
  try {
    r = local_to_global(groups, pts, model.dense, params.l2g);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::RegistrationFailed) throw;
    return failed_registration(proposal, std::string("registration failed: ") + e.what());
  }
  r.proposal_id = proposal.id;
  r.center = proposal.center;
  for (auto& c : r.correspondences) c.scene_index = proposal.indices.empty() ? c.scene_index : proposal.indices[c.scene_index];
  return r;
}

}  // namespace fmreg
