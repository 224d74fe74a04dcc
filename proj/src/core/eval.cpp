#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "error.hpp"
#include "geometry.hpp"

namespace fmreg {

using nlohmann::json;

void MetricThresholds::validate() const {
  require(voxel > 0.0 && rte_factor > 0.0 && rre_max > 0.0 && center_tol_factor > 0.0 && pir_factor > 0.0,
          "metric thresholds must all be > 0");
}

PoseAssignment match_poses_to_gt(std::span<const RigidTransform> predictions, std::span<const RigidTransform> gt,
                                 const MetricThresholds& thr) {
  thr.validate();
  struct Pair {
    double rte;
    std::size_t pred, gt;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double e_t = rte(predictions[p].t, gt[g].t);
      if (e_t <= thr.rte_max() && rre(predictions[p].R, gt[g].R) <= thr.rre_max) pairs.push_back({e_t, p, g});
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const Pair& a, const Pair& b) { return std::tie(a.rte, a.pred, a.gt) < std::tie(b.rte, b.pred, b.gt); });
  PoseAssignment out;
  out.pred_to_gt.assign(predictions.size(), -1);
  out.gt_to_pred.assign(gt.size(), -1);
  for (const auto& pr : pairs) {
    if (out.pred_to_gt[pr.pred] >= 0 || out.gt_to_pred[pr.gt] >= 0) continue;
    out.pred_to_gt[pr.pred] = static_cast<int>(pr.gt);
    out.gt_to_pred[pr.gt] = static_cast<int>(pr.pred);
    ++out.correct;
  }
  return out;
}

double harmonic_mean(double mp, double mr) { return mp + mr == 0.0 ? 0.0 : 2.0 * mp * mr / (mp + mr); }

RegistrationMetrics compute_mr_mp_mf(std::size_t registered, std::size_t gt_total, std::size_t correct,
                                     std::size_t pred_total) {
  require(registered <= gt_total && correct <= pred_total, "metric counts exceed their totals");
  RegistrationMetrics m;
  if (gt_total == 0 && pred_total == 0) {
    m.skipped = true;
    m.diagnostic = "no ground-truth instances and no predictions; scene skipped";
    return m;
  }
  if (gt_total > 0) m.mr = static_cast<double>(registered) / static_cast<double>(gt_total);
  if (pred_total > 0) m.mp = static_cast<double>(correct) / static_cast<double>(pred_total);
  if (!m.mp) m.diagnostic = "no predictions; MP undefined";
  if (!m.mr) m.diagnostic = "no ground-truth instances; MR undefined";
  m.mf = harmonic_mean(m.mp.value_or(0.0), m.mr.value_or(0.0));
  return m;
}

PirResult compute_pir(const std::vector<std::vector<Correspondence>>& correspondences,
                      std::span<const RigidTransform> gt_poses, double radius) {
  require(correspondences.size() == gt_poses.size(), "PIR: one ground-truth pose per instance expected");
  require(radius > 0.0, "PIR: radius must be > 0");
  PirResult out;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t i = 0; i < correspondences.size(); ++i) {
    const auto& cs = correspondences[i];
    if (cs.empty()) {
      out.per_instance.emplace_back();
      out.diagnostics.push_back("instance " + std::to_string(i) + ": no correspondences, PIR undefined");
      continue;
    }
    std::size_t inliers = 0;
    for (const auto& c : cs)
      if ((gt_poses[i].apply(c.model_point) - c.scene_point).norm() <= radius) ++inliers;
    const double v = static_cast<double>(inliers) / static_cast<double>(cs.size());
    out.per_instance.emplace_back(v);
    sum += v;
    ++defined;
  }
  if (defined > 0) out.mean = sum / static_cast<double>(defined);
  return out;
}

CenterMetrics center_metrics(std::span<const Vec3> predicted, std::span<const Vec3> gt_centers,
                             std::span<const double> gt_radii, double tol_factor) {
  require(gt_centers.size() == gt_radii.size(), "center metrics: one radius per ground-truth center");
  require(tol_factor > 0.0, "center metrics: tolerance factor must be > 0");
  struct Pair {
    double d;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < predicted.size(); ++p)
    for (std::size_t g = 0; g < gt_centers.size(); ++g) {
      const double d = (predicted[p] - gt_centers[g]).norm();
      if (d <= tol_factor * gt_radii[g]) pairs.push_back({d, p, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return std::tie(a.d, a.p, a.g) < std::tie(b.d, b.p, b.g); });
  std::vector<char> used_p(predicted.size(), 0), used_g(gt_centers.size(), 0);
  CenterMetrics m;
  double sq = 0.0;
  for (const auto& pr : pairs) {
    if (used_p[pr.p] || used_g[pr.g]) continue;
    used_p[pr.p] = used_g[pr.g] = 1;
    ++m.matched;
    sq += pr.d * pr.d;
  }
  m.mr = gt_centers.empty() ? 0.0 : static_cast<double>(m.matched) / static_cast<double>(gt_centers.size());
  if (!predicted.empty()) m.mp = static_cast<double>(m.matched) / static_cast<double>(predicted.size());
  if (m.matched > 0) m.rmse = std::sqrt(sq / static_cast<double>(m.matched));
  return m;
}

SceneReport evaluate_scene(const SceneGroundTruth& truth, std::span<const RegistrationRecord> records,
                           const MetricThresholds& thr) {
  thr.validate();
  SceneReport s;
  s.scene_id = truth.scene_id;
  s.gt_count = truth.instances.size();
  const auto gt_poses = truth.poses();
  const auto gt_centroids = truth.visible_centroids();

  std::vector<const RegistrationRecord*> preds;
  std::vector<Vec3> centers;
  for (const auto& r : records) {
    centers.push_back(r.center);
    if (r.failed) {
      ++s.failed_count;
      s.diagnostics.push_back("proposal " + std::to_string(r.proposal_id) + " failed: " +
                              (r.diagnostic.empty() ? std::string("no diagnostic") : r.diagnostic));
    } else {
      preds.push_back(&r);
    }
  }
  s.pred_count = preds.size();

  std::vector<RigidTransform> pred_poses;
  for (const auto* r : preds) pred_poses.push_back(r->pose);
  const auto assignment = match_poses_to_gt(pred_poses, gt_poses, thr);
  s.correct = assignment.correct;
  s.registered = static_cast<std::size_t>(std::count_if(assignment.gt_to_pred.begin(), assignment.gt_to_pred.end(), [](int v) { return v >= 0; }));
  s.reg = compute_mr_mp_mf(s.registered, s.gt_count, s.correct, s.pred_count);
  if (!s.reg.diagnostic.empty()) s.diagnostics.push_back(s.reg.diagnostic);

  std::vector<std::vector<Correspondence>> pir_sets;
  std::vector<RigidTransform> pir_poses;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    InstanceRow row;
    row.proposal_id = preds[p]->proposal_id;
    row.gt_instance = assignment.pred_to_gt[p];
    row.correct = row.gt_instance >= 0;
    if (row.gt_instance < 0 && !gt_centroids.empty()) {
      std::size_t best = 0;
      for (std::size_t g = 1; g < gt_centroids.size(); ++g)
        if ((gt_centroids[g] - preds[p]->center).norm() < (gt_centroids[best] - preds[p]->center).norm()) best = g;
      row.gt_instance = static_cast<int>(best);
    }
    if (row.gt_instance >= 0) {
      const auto& g = gt_poses[static_cast<std::size_t>(row.gt_instance)];
      row.rre = rre(preds[p]->pose.R, g.R);
      row.rte = rte(preds[p]->pose.t, g.t);
      pir_sets.push_back(preds[p]->correspondences);
      pir_poses.push_back(g);
    }
    s.instances.push_back(row);
  }
  const auto pir = compute_pir(pir_sets, pir_poses, thr.pir_radius());
  s.pir = pir.mean;
  for (std::size_t i = 0, k = 0; i < s.instances.size(); ++i) {
    if (s.instances[i].gt_instance < 0) continue;
    s.instances[i].pir = pir.per_instance[k];
    if (!pir.per_instance[k]) s.diagnostics.push_back("proposal " + std::to_string(s.instances[i].proposal_id) + ": no correspondences, PIR undefined");
    ++k;
  }

  std::vector<double> radii;
  double occ = 0.0;
  for (const auto& inst : truth.instances) {
    radii.push_back(inst.visible_radius);
    occ += inst.occlusion;
  }
  s.occlusion = truth.instances.empty() ? 0.0 : occ / static_cast<double>(truth.instances.size());
  s.centers = center_metrics(centers, gt_centroids, radii, thr.center_tol_factor);
  return s;
}

namespace {

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::optional<double> value() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

}  // namespace

EvalReport evaluate(const std::vector<SceneGroundTruth>& truths, const std::vector<RegistrationRecord>& records,
                    const MetricThresholds& thr) {
  thr.validate();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!index.emplace(truths[i].scene_id, i).second)
      fail(ErrorCode::InvalidArgument, "duplicate scene id '" + truths[i].scene_id + "' among manifests");
  }
  std::vector<std::vector<RegistrationRecord>> grouped(truths.size());
  for (const auto& r : records) {
    auto it = index.find(r.scene_id);
    if (it == index.end()) fail(ErrorCode::InvalidArgument, "registration record names unknown scene '" + r.scene_id + "'");
    grouped[it->second].push_back(r);
  }

  EvalReport rep;
  rep.thresholds = thr;
  std::vector<std::size_t> order(truths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return truths[a].scene_id < truths[b].scene_id; });

  Mean mr, mp, mf, pir, cmr, cmp, crmse;
  for (auto i : order) {
    rep.scenes.push_back(evaluate_scene(truths[i], grouped[i], thr));
    const auto& s = rep.scenes.back();
    if (s.reg.skipped) {
      ++rep.aggregate.skipped;
      continue;
    }
    ++rep.aggregate.scenes;
    mr.add(s.reg.mr);
    mp.add(s.reg.mp);
    mf.add(s.reg.mf);
    pir.add(s.pir);
    if (s.gt_count > 0) cmr.add(s.centers.mr);
    cmp.add(s.centers.mp);
    crmse.add(s.centers.rmse);
  }
  rep.aggregate.mr = mr.value();
  rep.aggregate.mp = mp.value();
  rep.aggregate.mf = mf.value();
  rep.aggregate.pir = pir.value();
  rep.aggregate.center_mr = cmr.value();
  rep.aggregate.center_mp = cmp.value();
  rep.aggregate.center_rmse = crmse.value();
  return rep;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& rep) {
  json j;
  j["aggregation"] = "mean over scenes";
  j["thresholds"] = {{"voxel", rep.thresholds.voxel},
                     {"rte_max", rep.thresholds.rte_max()},
                     {"rre_max_deg", rep.thresholds.rre_max},
                     {"center_tol_factor", rep.thresholds.center_tol_factor},
                     {"pir_radius", rep.thresholds.pir_radius()}};
  const auto& a = rep.aggregate;
  j["aggregate"] = {{"scenes", a.scenes},        {"skipped", a.skipped},          {"MR", opt(a.mr)},
                    {"MP", opt(a.mp)},           {"MF", opt(a.mf)},               {"PIR", opt(a.pir)},
                    {"center_MR", opt(a.center_mr)}, {"center_MP", opt(a.center_mp)}, {"center_RMSE", opt(a.center_rmse)}};
  json scenes = json::array();
  for (const auto& s : rep.scenes) {
    json e;
    e["scene_id"] = s.scene_id;
    e["gt"] = s.gt_count;
    e["predictions"] = s.pred_count;
    e["failed"] = s.failed_count;
    e["correct"] = s.correct;
    e["registered"] = s.registered;
    e["occlusion"] = s.occlusion;
    e["skipped"] = s.reg.skipped;
    e["MR"] = opt(s.reg.mr);
    e["MP"] = opt(s.reg.mp);
    e["MF"] = s.reg.skipped ? json(nullptr) : json(s.reg.mf);
    e["PIR"] = opt(s.pir);
    e["center_MR"] = s.centers.mr;
    e["center_MP"] = opt(s.centers.mp);
    e["center_RMSE"] = opt(s.centers.rmse);
    json rows = json::array();
    for (const auto& r : s.instances)
      rows.push_back({{"proposal_id", r.proposal_id}, {"gt_instance", r.gt_instance}, {"RRE_deg", r.rre},
                      {"RTE", r.rte}, {"correct", r.correct}, {"PIR", opt(r.pir)}});
    e["instances"] = std::move(rows);
    e["diagnostics"] = s.diagnostics;
    scenes.push_back(std::move(e));
  }
  j["scenes"] = std::move(scenes);
  return j.dump(1) + "\n";
}

std::string report_to_csv(const EvalReport& rep) {
  std::ostringstream out;
  out << "scene_id,occlusion,gt,predictions,failed,correct,MR,MP,MF,PIR,center_MR,center_MP,center_RMSE\n";
  for (const auto& s : rep.scenes) {
    out << s.scene_id << ',' << cell(s.occlusion) << ',' << s.gt_count << ',' << s.pred_count << ',' << s.failed_count
        << ',' << s.correct << ',' << cell(s.reg.mr) << ',' << cell(s.reg.mp) << ','
        << (s.reg.skipped ? std::string() : cell(s.reg.mf)) << ',' << cell(s.pir) << ',' << cell(s.centers.mr) << ','
        << cell(s.centers.mp) << ',' << cell(s.centers.rmse) << '\n';
  }
  const auto& a = rep.aggregate;
  out << "mean,,,,,," << cell(a.mr) << ',' << cell(a.mp) << ',' << cell(a.mf) << ',' << cell(a.pir) << ','
      << cell(a.center_mr) << ',' << cell(a.center_mp) << ',' << cell(a.center_rmse) << '\n';
  return out.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string csv_to_plot_data(const std::vector<std::string>& csv_texts) {
  struct Bin {
    Mean mr, mp, mf;
    std::size_t scenes = 0;
  };
  std::map<long long, Bin> bins;
  for (const auto& text : csv_texts) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::Parse, "report: empty CSV");
    const auto header = split_csv(line);
    auto col = [&](const std::string& name) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) fail(ErrorCode::Parse, "report: CSV lacks column '" + name + "'");
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_id = col("scene_id"), c_occ = col("occlusion"), c_mr = col("MR"), c_mp = col("MP"), c_mf = col("MF");
    std::size_t n = 1;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != header.size()) fail(ErrorCode::Parse, "report: CSV line " + std::to_string(n) + " has the wrong column count");
      if (f[c_id] == "mean") continue;
      auto parse = [&](const std::string& s) -> std::optional<double> {
        if (s.empty()) return std::nullopt;
        try {
          return std::stod(s);
        } catch (const std::exception&) {
          fail(ErrorCode::Parse, "report: CSV line " + std::to_string(n) + ": bad number '" + s + "'");
        }
      };
      const auto occ = parse(f[c_occ]);
      if (!occ) continue;
      auto& bin = bins[std::llround(*occ * 1e6)];
      bin.mr.add(parse(f[c_mr]));
      bin.mp.add(parse(f[c_mp]));
      bin.mf.add(parse(f[c_mf]));
      ++bin.scenes;
    }
  }
  std::ostringstream out;
  out << "# occlusion MR MP MF scenes (per-scene means; NaN = undefined)\n";
  for (const auto& [key, bin] : bins) {
    auto v = [](const std::optional<double>& x) { return x ? cell(x) : std::string("NaN"); };
    out << cell(static_cast<double>(key) / 1e6) << ' ' << v(bin.mr.value()) << ' ' << v(bin.mp.value()) << ' '
        << v(bin.mf.value()) << ' ' << bin.scenes << '\n';
  }
  return out.str();
}

}  // namespace fmreg
