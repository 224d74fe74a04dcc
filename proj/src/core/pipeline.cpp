#include "pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "error.hpp"
#include "geometry.hpp"
#include "parallel.hpp"
#include "ply.hpp"
#include "rng.hpp"

namespace fmreg {

NetworkWeights NetworkWeights::load(const IoPaths& io) {
  NetworkWeights w;
  if (!io.descriptor_weights.empty()) w.descriptor = read_attention_weights(io.descriptor_weights);
  if (!io.self_weights.empty()) w.self_attention = read_attention_weights(io.self_weights);
  if (!io.cross_weights.empty()) w.cross_attention = read_attention_weights(io.cross_weights);
  if (!io.focus_heads.empty()) {
    auto heads = read_perceptrons(io.focus_heads);
    if (heads.size() != 2) fail(ErrorCode::Parse, io.focus_heads + ": expected 2 perceptrons (offset, mask)");
    w.focus_heads = FocusHeads{std::move(heads[0]), std::move(heads[1])};
  }
  if (!io.match_heads.empty()) {
    auto heads = read_perceptrons(io.match_heads);
    if (heads.size() != 2) fail(ErrorCode::Parse, io.match_heads + ": expected 2 perceptrons (instance, overlap)");
    w.match_heads = MatchHeads{std::move(heads[0]), std::move(heads[1])};
  }
  return w;
}

OracleFeatures compute_features(const PointCloud& scene_dense, const Points& model_dense,
                                const std::optional<SceneGroundTruth>& truth, const DescriptorProviderConfig& config,
                                const NetworkWeights& weights, std::uint64_t seed) {
  config.validate();
  switch (config.kind) {
    case ProviderKind::Oracle: {
      if (!truth) fail(ErrorCode::InvalidArgument, "the oracle descriptor provider needs a manifest");
      const auto poses = truth->poses();
      return oracle_descriptor(scene_dense, model_dense, poses, config.sigma_f, config.dim, seed);
    }
    case ProviderKind::Covariance:
      return {multiscale_covariance(scene_dense.points, config.radius, config.dim),
              multiscale_covariance(model_dense, config.radius, config.dim)};
    case ProviderKind::AttentionEnhanced: {
      if (!weights.descriptor) fail(ErrorCode::InvalidArgument, "the attention-enhanced provider needs descriptor weights");
      return {self_attention(multiscale_covariance(scene_dense.points, config.radius, config.dim), *weights.descriptor),
              self_attention(multiscale_covariance(model_dense, config.radius, config.dim), *weights.descriptor)};
    }
  }
  fail(ErrorCode::Internal, "unhandled descriptor provider");
}

namespace {

OracleMasks oracle_masks_for(const Proposal& proposal, const SceneGroundTruth& truth) {
  if (!proposal.cloud.labels) fail(ErrorCode::InvalidArgument, "oracle masks need scene labels");
  OracleMasks m;
  int target = -1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < truth.instances.size(); ++g) {
    const double d = (truth.instances[g].visible_centroid - proposal.center).norm();
    if (d < best) {
      best = d;
      target = static_cast<int>(g);
    }
  }
  for (int label : *proposal.cloud.labels) {
    const double v = (target >= 0 && label == target) ? 1.0 : 0.0;
    m.instance.push_back(v);
    m.overlap.push_back(v);
  }
  return m;
}

}  // namespace

RunOutput run_registration(const SceneInputs& in, const RunConfig& config, const NetworkWeights& weights) {
  config.validate();
  const double voxel = config.voxel();
  const bool need_truth = config.descriptor.kind == ProviderKind::Oracle || config.focus_oracle || config.match_oracle;
  if (need_truth && !in.truth) fail(ErrorCode::InvalidArgument, "oracle provider or oracle stages need a manifest");
  if (in.truth) in.truth->validate_against(in.scene);
  in.scene.validate();
  if (in.model.empty()) fail(ErrorCode::InvalidArgument, "model cloud is empty");

  PointCloud model_cloud;
  model_cloud.points = in.model;
  const auto scene_ds = voxel_downsample(in.scene, voxel);
  const auto model_ds = voxel_downsample(model_cloud, voxel);
  const PointCloud& scene_dense = scene_ds.cloud;
  const Points& model_dense = model_ds.cloud.points;

  RunOutput out;
  out.dense_scene_points = scene_dense.size();
  out.dense_model_points = model_dense.size();
  if (scene_dense.empty()) return out;

  const auto features = compute_features(scene_dense, model_dense, in.truth, config.resolved_descriptor(), weights, config.seed);
  const std::size_t dim = features.model.dim();

  const FocusParams fp = config.resolved_focus();
  const auto model_sampled = voxel_downsample(model_ds.cloud, fp.sampled_voxel);
  const FeatureMap model_sampled_features = pool_mean(features.model, model_sampled.sources);
  const double model_radius = cloud_radius(model_dense);

  const FocusHeads focus_heads = weights.focus_heads ? *weights.focus_heads : FocusHeads::untrained(dim, fp.geo_width);
  FocusOracle focus_oracle;
  FocusInputs fin;
  fin.scene_dense = &scene_dense;
  fin.scene_features = &features.scene;
  fin.model_features = &model_sampled_features;
  fin.model_radius = model_radius;
  fin.self_weights = weights.self_attention ? &*weights.self_attention : nullptr;
  fin.cross_weights = weights.cross_attention ? &*weights.cross_attention : nullptr;
  fin.heads = &focus_heads;
  if (config.focus_oracle) {
    focus_oracle.instance_centroids = in.truth->visible_centroids();
    fin.oracle = &focus_oracle;
  }
  FocusResult focus = focus_pipeline(fin, fp);
  out.centers = focus.centers;

  const MatchParams mp = config.resolved_match();
  const ModelContext model = ModelContext::build(model_dense, features.model, mp.anchor_voxel);
  const MatchHeads match_heads = weights.match_heads ? *weights.match_heads : MatchHeads::untrained(dim, mp.geo_width);
  MatchNetwork net;
  net.heads = &match_heads;
  net.self_weights = fin.self_weights;
  net.cross_weights = fin.cross_weights;

  const auto& proposals = focus.proposals.proposals;
  std::vector<InstanceRegistration> regs(proposals.size());
  parallel_for(proposals.size(), config.threads == 0 ? default_threads() : config.threads, [&](std::size_t i) {
    const Proposal& p = proposals[i];
    const FeatureMap pf = gather(features.scene, p.indices);
    std::optional<OracleMasks> masks;
    if (config.match_oracle) masks = oracle_masks_for(p, *in.truth);
    regs[i] = register_proposal(p, pf, model, net, masks ? &*masks : nullptr, mp);
  });

  for (const auto& r : regs) out.records.push_back(to_record(in.scene_id, r));
  std::size_t next_id = proposals.size();
  for (const auto& d : focus.proposals.dropped) {
    RegistrationRecord r;
    r.scene_id = in.scene_id;
    r.proposal_id = next_id++;
    r.center = d.center;
    r.failed = true;
    r.diagnostic = d.diagnostic;
    out.records.push_back(std::move(r));
  }
  out.proposals = std::move(focus.proposals.proposals);
  return out;
}

void write_proposal_dump(const std::string& dir, const std::string& scene_id, const std::vector<Proposal>& proposals) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& p : proposals) {
    const std::string file = scene_id + ".proposal-" + std::to_string(p.id) + ".ply";
    write_ply((fs::path(dir) / file).string(), p.cloud);
    nlohmann::ordered_json e;
    e["id"] = p.id;
    e["center"] = {p.center.x(), p.center.y(), p.center.z()};
    e["radius"] = p.radius;
    e["count"] = p.cloud.size();
    e["file"] = file;
    list.push_back(std::move(e));
  }
  nlohmann::ordered_json j;
  j["scene_id"] = scene_id;
  j["proposals"] = std::move(list);
  const std::string path = (fs::path(dir) / (scene_id + ".proposals.json")).string();
  std::ofstream f(path, std::ios::binary);
  f << j.dump(2) << "\n";
  if (!f) fail(ErrorCode::Io, "cannot write " + path);
}

GeneratedScene generate_scene(const SceneProfile& profile, const GenerateOptions& options) {
  profile.validate();
  GeneratedScene g;
  g.model = builtin_model(profile.model, profile.model_spacing);
  SceneSpec spec = spec_from_profile(profile, g.model, options.seed);
  if (options.instances) spec.instances_min = spec.instances_max = *options.instances;
  if (options.occlusion) spec.occlusion_min = spec.occlusion_max = *options.occlusion;
  if (options.clutter_fraction) spec.clutter_fraction = *options.clutter_fraction;
  if (options.noise_sigma) spec.noise_sigma = *options.noise_sigma;
  std::string id = options.scene_id;
  if (id.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "-%04llu", static_cast<unsigned long long>(options.seed));
    id = profile.name + buf;
  }
  g.scene = build_scene(spec, id);
  return g;
}

SceneInputs load_scene_inputs(const RunConfig& config) {
  if (config.io.scene.empty()) fail(ErrorCode::InvalidArgument, "no scene file given");
  if (config.io.model.empty()) fail(ErrorCode::InvalidArgument, "no model file given");
  SceneInputs in;
  in.scene = read_ply(config.io.scene);
  in.model = read_ply(config.io.model).points;
  if (!config.io.manifest.empty()) in.truth = load_manifest(config.io.manifest);
  in.scene_id = in.truth ? in.truth->scene_id : std::filesystem::path(config.io.scene).stem().string();
  return in;
}

}  // namespace fmreg
