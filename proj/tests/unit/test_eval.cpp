#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/geometry.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

using namespace fmreg;
using fmreg::test::random_rotation;
using fmreg::test::random_vec;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

RigidTransform perturb(Rng& rng, const RigidTransform& T, double deg, double dist) {
  const Mat3 dR = axis_angle(random_vec(rng), uniform(rng, 0.0, deg) * M_PI / 180.0);
  return {dR * T.R, T.t + random_vec(rng, -dist, dist)};
}

SceneGroundTruth make_truth(Rng& rng, const std::string& id, std::size_t k) {
  SceneGroundTruth t;
  t.scene_id = id;
  for (std::size_t i = 0; i < k; ++i) {
    InstanceTruth inst;
    inst.pose = {random_rotation(rng), Vec3(3.0 * static_cast<double>(i), 0, 0)};
    inst.visible_centroid = inst.pose.t;
    inst.center = inst.pose.t;
    inst.visible_radius = 0.5;
    inst.occlusion = 0.25;
    t.instances.push_back(inst);
  }
  return t;
}

RegistrationRecord record_for(const std::string& id, std::size_t pid, const RigidTransform& T, bool failed = false) {
  RegistrationRecord r;
  r.scene_id = id;
  r.proposal_id = pid;
  r.pose = T;
  r.center = T.t;
  r.failed = failed;
  if (failed) r.diagnostic = "synthetic failure";
  return r;
}

}  // namespace

TEST_CASE("compute_mr_mp_mf equals the direct formulas bit for bit") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto gt = static_cast<std::size_t>(uniform_int(rng, 0, 20));
    const auto pred = static_cast<std::size_t>(uniform_int(rng, 0, 20));
    const auto correct = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(std::min(gt, pred))));
    const auto m = compute_mr_mp_mf(correct, gt, correct, pred);
    const auto o = oracle::mr_mp_mf(correct, gt, pred);
    if (gt == 0 && pred == 0) {
      CHECK(m.skipped);
      continue;
    }
    CHECK(m.mr.has_value() == o.mr.has_value());
    CHECK(m.mp.has_value() == o.mp.has_value());
    if (m.mr) CHECK(same_bits(*m.mr, *o.mr));
    if (m.mp) CHECK(same_bits(*m.mp, *o.mp));
    CHECK(same_bits(m.mf, o.mf));
  }
  const auto two_thirds = compute_mr_mp_mf(2, 4, 2, 2);
  CHECK(*two_thirds.mr == 0.5);
  CHECK(*two_thirds.mp == 1.0);
  CHECK(two_thirds.mf == 2.0 / 3.0);
  CHECK(compute_mr_mp_mf(0, 3, 0, 0).diagnostic.find("MP") != std::string::npos);
  CHECK_THROWS_AS(compute_mr_mp_mf(3, 2, 0, 0), Error);
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);
}

namespace {

struct GreedyStats {
  std::size_t agree = 0, trials = 0;
};

// crowded: every gt shares a rotation family and a 0.3 m box, so predictions
// routinely pass the thresholds for several instances
GreedyStats greedy_vs_max(Rng& rng, int trials, bool crowded) {
  MetricThresholds thr;
  GreedyStats st;
  for (int trial = 0; trial < trials; ++trial) {
    const auto ng = static_cast<std::size_t>(uniform_int(rng, 1, 8));
    const auto np = static_cast<std::size_t>(uniform_int(rng, 1, 8));
    const Mat3 base_R = random_rotation(rng);
    auto random_gt = [&] {
      return crowded ? perturb(rng, {base_R, random_vec(rng, 0.0, 0.3)}, 10.0, 0.0)
                     : RigidTransform{random_rotation(rng), random_vec(rng, 0.0, 0.4)};
    };
    std::vector<RigidTransform> gt, pred;
    for (std::size_t g = 0; g < ng; ++g) gt.push_back(random_gt());
    for (std::size_t p = 0; p < np; ++p) {
      const auto& base = gt[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(ng) - 1))];
      pred.push_back(uniform01(rng) < 0.8 ? perturb(rng, base, 10.0, 0.06) : random_gt());
    }
    const auto a = match_poses_to_gt(pred, gt, thr);
    std::vector<std::vector<std::size_t>> adj(np);
    for (std::size_t p = 0; p < np; ++p)
      for (std::size_t g = 0; g < ng; ++g)
        if (rte(pred[p].t, gt[g].t) <= thr.rte_max() && rre(pred[p].R, gt[g].R) <= thr.rre_max) adj[p].push_back(g);
    const std::size_t best = oracle::hopcroft_karp(adj, ng);
    CHECK(a.correct <= best);
    CHECK(2 * a.correct >= best);  // greedy is a maximal matching
    ++st.trials;
    if (a.correct == best)
      ++st.agree;
    else
      MESSAGE("trial " << trial << ": greedy " << a.correct << " vs maximum " << best);
    for (std::size_t p = 0; p < np; ++p) {
      const int g = a.pred_to_gt[p];
      if (g < 0) continue;
      CHECK(a.gt_to_pred[static_cast<std::size_t>(g)] == static_cast<int>(p));
      CHECK(rte(pred[p].t, gt[static_cast<std::size_t>(g)].t) <= thr.rte_max());
    }
  }
  return st;
}

}  // namespace

TEST_CASE("greedy pose assignment agrees with maximum matching in >= 95% of trials") {
  Rng rng(42);
  const auto st = greedy_vs_max(rng, 1000, false);
  MESSAGE("greedy agreement " << st.agree << "/" << st.trials);
  CHECK(static_cast<double>(st.agree) >= 0.95 * static_cast<double>(st.trials));
}

TEST_CASE("greedy pose assignment on crowded layouts stays within the maximal-matching bound") {
  Rng rng(47);
  const auto st = greedy_vs_max(rng, 1000, true);
  MESSAGE("crowded greedy agreement " << st.agree << "/" << st.trials);
  CHECK(static_cast<double>(st.agree) >= 0.9 * static_cast<double>(st.trials));
}

TEST_CASE("PIR counts inliers under the ground-truth pose") {
  Rng rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = static_cast<std::size_t>(uniform_int(rng, 1, 5));
    std::vector<std::vector<Correspondence>> sets(k);
    std::vector<RigidTransform> poses;
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < k; ++i) {
      poses.push_back({random_rotation(rng), random_vec(rng, -2, 2)});
      const auto n = uniform_int(rng, 0, 30);
      std::size_t in = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        Correspondence c;
        c.model_point = random_vec(rng);
        c.scene_point = poses.back().apply(c.model_point) + random_vec(rng, -0.1, 0.1);
        if ((poses.back().apply(c.model_point) - c.scene_point).norm() <= 0.1) ++in;
        sets[i].push_back(c);
      }
      if (n > 0) {
        sum += static_cast<double>(in) / static_cast<double>(n);
        ++defined;
      }
    }
    const auto r = compute_pir(sets, poses, 0.1);
    CHECK(r.mean.has_value() == (defined > 0));
    if (defined) CHECK(std::abs(*r.mean - sum / static_cast<double>(defined)) < 1e-12);
  }
  CHECK_THROWS_AS(compute_pir({{}}, std::vector<RigidTransform>{}, 0.1), Error);
  const auto empty = compute_pir({{}}, std::vector<RigidTransform>{RigidTransform{}}, 0.1);
  CHECK_FALSE(empty.mean.has_value());
  CHECK_FALSE(empty.diagnostics.empty());
}

TEST_CASE("center metrics match a brute-force greedy matcher") {
  Rng rng(44);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ng = static_cast<std::size_t>(uniform_int(rng, 0, 6));
    const auto np = static_cast<std::size_t>(uniform_int(rng, 0, 6));
    std::vector<Vec3> g, p;
    std::vector<double> radii;
    for (std::size_t i = 0; i < ng; ++i) {
      g.push_back(random_vec(rng, -1, 1));
      radii.push_back(uniform(rng, 0.5, 2.0));
    }
    for (std::size_t i = 0; i < np; ++i) p.push_back(random_vec(rng, -1, 1));
    const auto m = center_metrics(p, g, radii, 0.2);
    // repeatedly take the globally closest admissible unused pair
    std::vector<char> up(np, 0), ug(ng, 0);
    std::size_t matched = 0;
    double sq = 0.0;
    for (;;) {
      double best = 1e300;
      std::size_t bp = 0, bg = 0;
      for (std::size_t a = 0; a < np; ++a)
        for (std::size_t b = 0; b < ng; ++b) {
          const double d = (p[a] - g[b]).norm();
          if (!up[a] && !ug[b] && d <= 0.2 * radii[b] && d < best) {
            best = d;
            bp = a;
            bg = b;
          }
        }
      if (best == 1e300) break;
      up[bp] = ug[bg] = 1;
      ++matched;
      sq += best * best;
    }
    CHECK(m.matched == matched);
    CHECK(m.mr == (ng ? static_cast<double>(matched) / static_cast<double>(ng) : 0.0));
    if (matched) CHECK(std::abs(*m.rmse - std::sqrt(sq / static_cast<double>(matched))) < 1e-12);
  }
  const std::vector<Vec3> c{Vec3(1, 1, 1)};
  const auto exact = center_metrics(c, c, std::vector<double>{1.0}, 0.1);
  CHECK(exact.mr == 1.0);
  CHECK(*exact.mp == 1.0);
  CHECK(*exact.rmse == 0.0);
}

TEST_CASE("evaluate_scene: failures carry diagnostics and are not predictions") {
  Rng rng(45);
  const auto truth = make_truth(rng, "s", 3);
  std::vector<RegistrationRecord> recs{record_for("s", 0, truth.instances[0].pose),
                                       record_for("s", 1, perturb(rng, truth.instances[1].pose, 1.0, 0.01)),
                                       record_for("s", 2, truth.instances[2].pose, true)};
  MetricThresholds thr;
  const auto s = evaluate_scene(truth, recs, thr);
  CHECK(s.pred_count == 2);
  CHECK(s.failed_count == 1);
  CHECK(s.correct == 2);
  CHECK(*s.reg.mr == 2.0 / 3.0);
  CHECK(*s.reg.mp == 1.0);
  CHECK(s.centers.matched == 3);
  bool found = false;
  for (const auto& d : s.diagnostics) found = found || d.find("synthetic failure") != std::string::npos;
  CHECK(found);
}

TEST_CASE("evaluate: per-scene means, unknown ids, JSON and CSV") {
  Rng rng(46);
  const auto a = make_truth(rng, "a", 2), b = make_truth(rng, "b", 4);
  std::vector<RegistrationRecord> recs{record_for("a", 0, a.instances[0].pose), record_for("a", 1, a.instances[1].pose),
                                       record_for("b", 0, b.instances[0].pose)};
  const auto rep = evaluate({a, b}, recs, MetricThresholds{});
  REQUIRE(rep.scenes.size() == 2);
  CHECK(*rep.aggregate.mr == (1.0 + 0.25) / 2.0);
  CHECK(*rep.aggregate.mp == 1.0);
  CHECK(rep.aggregate.scenes == 2);

  const auto j = nlohmann::json::parse(report_to_json(rep));
  CHECK(j.contains("scenes"));
  CHECK(j["scenes"].size() == 2);
  const std::string csv = report_to_csv(rep);
  std::istringstream ss(csv);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(ss, line))
    if (!line.empty()) ++lines;
  CHECK(lines >= 3);
  const std::string plot = csv_to_plot_data({csv});
  CHECK(plot.find("0.25") != std::string::npos);

  recs.push_back(record_for("zzz", 0, RigidTransform{}));
  CHECK_THROWS_AS(evaluate({a, b}, recs, MetricThresholds{}), Error);
}

TEST_CASE("metric thresholds validate") {
  MetricThresholds t;
  CHECK_NOTHROW(t.validate());
  CHECK(t.rte_max() == 4.0 * 0.025);
  t.rre_max = 0.0;
  CHECK_THROWS_AS(t.validate(), Error);
}
