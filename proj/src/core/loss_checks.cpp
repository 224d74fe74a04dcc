#include "loss_checks.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "losses.hpp"
#include "rng.hpp"

namespace fmreg {

void LossCheckOptions::validate() const {
  CircleLossParams p;
  p.gamma = gamma;
  p.validate();
  require(step > 0.0 && tolerance > 0.0, "check-losses: step and tolerance must be > 0");
}

namespace {

bool close(double v, double e) { return std::abs(v - e) <= 1e-9 * std::max(1.0, std::abs(e)); }

LossCheckRow value_row(std::string name, double value, double expected, std::string note = {}) {
  return {std::move(name), value, expected, std::nullopt, close(value, expected), std::move(note)};
}

void attach_grad(LossCheckRow& row, const GradCheckReport& g) {
  row.grad_rel_error = g.max_rel_error;
  row.passed = row.passed && g.passed;
  if (g.non_smooth) row.note += (row.note.empty() ? "" : "; ") + std::string("non-smooth point");
}

std::vector<Vec3> unpack(std::span<const double> x) {
  std::vector<Vec3> v(x.size() / 3);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
  return v;
}

std::vector<double> pack(const std::vector<Vec3>& v) {
  std::vector<double> x;
  for (const auto& p : v) x.insert(x.end(), {p.x(), p.y(), p.z()});
  return x;
}

}  // namespace

std::vector<LossCheckRow> run_loss_checks(const LossCheckOptions& opt) {
  opt.validate();
  CircleLossParams cp;
  cp.gamma = opt.gamma;
  Rng rng(derive_seed({opt.seed, 0x10557}));
  std::vector<LossCheckRow> rows;

  {
    std::vector<CircleAnchor> a(2);
    a[0].positive_distances = {0.3, 0.7};
    a[0].positive_overlaps = {0.5, 1.0};
    a[1].positive_distances = {0.2};
    a[1].positive_overlaps = {0.9};
    rows.push_back(value_row("circle: empty negative sets", circle_loss(a, cp), 0.0));
  }
  {
    std::vector<CircleAnchor> a(1);
    a[0].positive_distances = {cp.margin_pos};
    a[0].positive_overlaps = {1.0};
    a[0].negative_distances = {cp.margin_neg};
    rows.push_back(value_row("circle: d = margins", circle_loss(a, cp), std::log(2.0)));
  }
  {
    // generic point: distances away from both margins
    std::vector<CircleAnchor> a(3);
    for (auto& an : a) {
      for (int j = 0; j < 3; ++j) {
        an.positive_distances.push_back(uniform(rng, 0.2, 0.9));
        an.positive_overlaps.push_back(uniform(rng, 0.1, 1.0));
      }
      for (int k = 0; k < 4; ++k) an.negative_distances.push_back(uniform(rng, 0.5, 1.3));
    }
    double naive = 0.0;
    for (const auto& an : a) {
      double sp = 0.0, sn = 0.0;
      for (std::size_t j = 0; j < an.positive_distances.size(); ++j) {
        const double d = an.positive_distances[j];
        sp += std::exp(std::sqrt(an.positive_overlaps[j]) * cp.gamma * (d - cp.margin_pos) * (d - cp.margin_pos));
      }
      for (double d : an.negative_distances) sn += std::exp(cp.gamma * (cp.margin_neg - d) * (cp.margin_neg - d));
      naive += std::log1p(sp * sn);
    }
    naive /= static_cast<double>(a.size());
    auto row = value_row("circle: random sets vs direct sum", circle_loss(a, cp), naive);
    auto rebuild = [&](std::span<const double> x) {
      auto b = a;
      std::size_t i = 0;
      for (auto& an : b) {
        for (auto& d : an.positive_distances) d = x[i++];
        for (auto& d : an.negative_distances) d = x[i++];
      }
      return b;
    };
    std::vector<double> x0;
    for (const auto& an : a) {
      x0.insert(x0.end(), an.positive_distances.begin(), an.positive_distances.end());
      x0.insert(x0.end(), an.negative_distances.begin(), an.negative_distances.end());
    }
    const auto g = grad_check(
        [&](std::span<const double> x) { return circle_loss(rebuild(x), cp); }, x0, opt.step, opt.tolerance,
        [&](std::span<const double> x) {
          const auto gr = circle_loss_gradient(rebuild(x), cp);
          std::vector<double> out;
          for (std::size_t i = 0; i < gr.positive.size(); ++i) {
            out.insert(out.end(), gr.positive[i].begin(), gr.positive[i].end());
            out.insert(out.end(), gr.negative[i].begin(), gr.negative[i].end());
          }
          return out;
        });
    attach_grad(row, g);
    rows.push_back(row);
  }

  {
    const std::vector<Vec3> pts{Vec3(1, 2, 3)}, cen{Vec3(0, 0, 0)}, off{Vec3(-1, -2, -3) + Vec3(3, 4, 0)};
    const std::vector<bool> fg{true};
    rows.push_back(value_row("offset L1: residual (3,4,0)", offset_l1_loss(off, pts, cen, fg), 5.0));
  }
  {
    std::vector<Vec3> pts, cen, off;
    std::vector<bool> fg;
    for (int i = 0; i < 12; ++i) {
      pts.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
      cen.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
      off.push_back(cen.back() - pts.back());
      fg.push_back(i % 4 != 3);
    }
    rows.push_back(value_row("offset L1: exact offsets", offset_l1_loss(off, pts, cen, fg), 0.0));
    for (auto& o : off) o += Vec3(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    double direct = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < off.size(); ++i)
      if (fg[i]) {
        direct += (off[i] - (cen[i] - pts[i])).norm();
        ++count;
      }
    auto row = value_row("offset L1: random batch vs direct loop", offset_l1_loss(off, pts, cen, fg), direct / count);
    attach_grad(row, grad_check([&](std::span<const double> x) { return offset_l1_loss(unpack(x), pts, cen, fg); }, pack(off),
                                opt.step, opt.tolerance,
                                [&](std::span<const double> x) { return pack(offset_l1_gradient(unpack(x), pts, cen, fg)); }));
    rows.push_back(row);

    std::vector<Vec3> par, anti;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      par.push_back(2.5 * (cen[i] - pts[i]));
      anti.push_back(-0.5 * (cen[i] - pts[i]));
    }
    rows.push_back(value_row("direction: parallel offsets", direction_loss(par, pts, cen, fg).value, -1.0));
    rows.push_back(value_row("direction: anti-parallel offsets", direction_loss(anti, pts, cen, fg).value, 1.0));
    double cos_sum = 0.0;
    for (std::size_t i = 0; i < off.size(); ++i)
      if (fg[i]) {
        const Vec3 t = cen[i] - pts[i];
        cos_sum += off[i].dot(t) / (off[i].norm() * t.norm());
      }
    auto drow = value_row("direction: random batch vs direct loop", direction_loss(off, pts, cen, fg).value, -cos_sum / count);
    attach_grad(drow, grad_check([&](std::span<const double> x) { return direction_loss(unpack(x), pts, cen, fg).value; },
                                 pack(off), opt.step, opt.tolerance,
                                 [&](std::span<const double> x) { return pack(direction_loss_gradient(unpack(x), pts, cen, fg)); }));
    rows.push_back(drow);

    // a foreground offset straddling zero
    std::vector<Vec3> near = off;
    near[0] = Vec3(1e-7, -2e-7, 1e-7);
    const auto g = grad_check([&](std::span<const double> x) { return direction_loss(unpack(x), pts, cen, fg).value; },
                              pack(near), opt.step, opt.tolerance);
    LossCheckRow flag{"direction: zero-norm offset is flagged", g.non_smooth ? 1.0 : 0.0, 1.0, std::nullopt, g.non_smooth,
                      g.non_smooth ? "non-smooth point" : "singularity not detected"};
    rows.push_back(flag);
  }

  {
    Eigen::MatrixXd plan(2, 2);
    plan << 0.5, 0.5, 0.5, 0.0;
    MatchSupervision s;
    s.matched = {{0, 0}};
    rows.push_back(value_row("nll: single pair at 0.5", nll_matching_loss(std::vector{plan}, std::vector{s}).value, std::log(2.0)));
    Eigen::MatrixXd ones(3, 3);
    ones << 1, 0, 0, 0, 0, 1, 0, 1, 0;
    MatchSupervision t;
    t.matched = {{0, 0}};
    t.unmatched_rows = {1};
    t.unmatched_cols = {1};
    rows.push_back(value_row("nll: unit mass at required cells", nll_matching_loss(std::vector{ones}, std::vector{t}).value, 0.0));

    Eigen::MatrixXd rnd(5, 4);
    for (Eigen::Index r = 0; r < rnd.rows(); ++r)
      for (Eigen::Index c = 0; c < rnd.cols(); ++c) rnd(r, c) = uniform(rng, 0.05, 0.95);
    MatchSupervision u;
    u.matched = {{0, 1}, {2, 0}};
    u.unmatched_rows = {1, 3};
    u.unmatched_cols = {2};
    const double direct = -std::log(rnd(0, 1)) - std::log(rnd(2, 0)) - std::log(rnd(1, 3)) - std::log(rnd(3, 3)) - std::log(rnd(4, 2));
    auto row = value_row("nll: random plan vs direct sum", nll_matching_loss(std::vector{rnd}, std::vector{u}).value, direct);
    auto to_plan = [&](std::span<const double> x) {
      Eigen::MatrixXd m(rnd.rows(), rnd.cols());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = x[static_cast<std::size_t>(i)];
      return m;
    };
    const std::vector<double> x0(rnd.data(), rnd.data() + rnd.size());
    attach_grad(row, grad_check([&](std::span<const double> x) { return nll_matching_loss(std::vector{to_plan(x)}, std::vector{u}).value; },
                                x0, opt.step, opt.tolerance, [&](std::span<const double> x) {
                                  const auto g = nll_matching_gradient(std::vector{to_plan(x)}, std::vector{u});
                                  return std::vector<double>(g[0].data(), g[0].data() + g[0].size());
                                }));
    rows.push_back(row);
  }

  {
    const std::vector<double> zeros(4, 0.0), ones(3, 1.0);
    rows.push_back(value_row("mask: perfect all-zero mask (default form)", mask_loss(zeros, zeros), -1.0));
    rows.push_back(value_row("mask: perfect three-ones mask (default form)", mask_loss(ones, ones), -1.0 / 7.0));
    rows.push_back(value_row("mask: standard dice at perfect match", mask_loss(ones, ones, {true}), 0.0));
    std::vector<double> half(6, 0.5), gt{1, 0, 1, 1, 0, 0};
    double bce = 0.0, inter = 0.0, sm = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < half.size(); ++i) {
      bce += -(gt[i] * std::log(half[i]) + (1 - gt[i]) * std::log(1 - half[i]));
      inter += half[i] * gt[i];
      sm += half[i];
      sg += gt[i];
    }
    const double direct = bce / static_cast<double>(half.size()) + 1.0 - 2.0 * (inter + 1.0) / (sm + sg + 1.0);
    rows.push_back(value_row("mask: uniform 0.5 vs direct formula", mask_loss(half, gt), direct));
    std::vector<double> m;
    for (std::size_t i = 0; i < gt.size(); ++i) m.push_back(uniform(rng, 0.1, 0.9));
    auto row = value_row("mask: gradient at a random mask", mask_loss(m, gt), mask_loss(m, gt));
    attach_grad(row, grad_check([&](std::span<const double> x) { return mask_loss(x, gt); }, m, opt.step, opt.tolerance,
                                [&](std::span<const double> x) { return mask_loss_gradient(x, gt); }));
    rows.push_back(row);
  }

  {
    const auto t = total_losses({1.0, 2.0, 3.0}, {0.5, 0.25, 0.125, 0.0625});
    rows.push_back(value_row("total: focusing sum", t.focusing, 6.0));
    rows.push_back(value_row("total: matching sum", t.matching, 0.9375));
  }
  {
    const std::vector<double> x{0.3, -1.2, 2.0};
    const auto g = grad_check([](std::span<const double> v) { return 3 * v[0] * v[0] + v[0] * v[1] - 2 * v[2] * v[2] + v[1]; },
                              x, opt.step, 1e-6, [](std::span<const double> v) {
                                return std::vector<double>{6 * v[0] + v[1], v[0] + 1, -4 * v[2]};
                              });
    LossCheckRow row{"grad check: quadratic", g.max_rel_error, 0.0, g.max_rel_error, g.passed && g.max_rel_error < 1e-6, ""};
    rows.push_back(row);
  }
  return rows;
}

std::string loss_checks_table(const std::vector<LossCheckRow>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-44s %16s %16s %12s  %s\n", "check", "value", "expected", "grad_err", "result");
  out << buf;
  for (const auto& r : rows) {
    char grad[32] = "-";
    if (r.grad_rel_error) std::snprintf(grad, sizeof grad, "%.3e", *r.grad_rel_error);
    std::snprintf(buf, sizeof buf, "%-44s %16.10g %16.10g %12s  %s", r.name.c_str(), r.value, r.expected, grad,
                  r.passed ? "pass" : "FAIL");
    out << buf;
    if (!r.note.empty()) out << "  (" << r.note << ")";
    out << '\n';
  }
  return out.str();
}

std::string loss_checks_json(const std::vector<LossCheckRow>& rows) {
  nlohmann::json j;
  bool all = true;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : rows) {
    all = all && r.passed;
    list.push_back({{"name", r.name},
                    {"value", r.value},
                    {"expected", r.expected},
                    {"grad_max_rel_err", r.grad_rel_error ? nlohmann::json(*r.grad_rel_error) : nlohmann::json(nullptr)},
                    {"passed", r.passed},
                    {"note", r.note}});
  }
  j["all_passed"] = all;
  j["rows"] = std::move(list);
  return j.dump(1) + "\n";
}

}  // namespace fmreg
