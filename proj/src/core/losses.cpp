#include "losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"

namespace fmreg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

struct CircleTerms {
  std::vector<double> pos, neg;  // exponents
};

CircleTerms circle_terms(const CircleAnchor& a, const CircleLossParams& p) {
  CircleTerms t;
  for (std::size_t j = 0; j < a.positive_distances.size(); ++j) {
    const double gap = a.positive_distances[j] - p.margin_pos;
    const double beta = p.gamma * (p.clamp_weights ? std::max(gap, 0.0) : gap);
    t.pos.push_back(std::sqrt(a.positive_overlaps[j]) * beta * gap);
  }
  for (double d : a.negative_distances) {
    const double gap = p.margin_neg - d;
    const double beta = p.gamma * (p.clamp_weights ? std::max(gap, 0.0) : gap);
    t.neg.push_back(beta * gap);
  }
  return t;
}

void check_anchor(const CircleAnchor& a) {
  require(a.positive_distances.size() == a.positive_overlaps.size(), "circle loss: one overlap per positive expected");
  for (double d : a.positive_distances) require(d >= 0.0 && std::isfinite(d), "circle loss: distances must be finite and >= 0");
  for (double d : a.negative_distances) require(d >= 0.0 && std::isfinite(d), "circle loss: distances must be finite and >= 0");
  for (double o : a.positive_overlaps) require(o >= 0.0 && o <= 1.0, "circle loss: overlap ratios must be in [0, 1]");
}

}  // namespace

void CircleLossParams::validate() const {
  require(margin_pos > 0.0 && margin_pos < margin_neg, "circle loss: need 0 < margin_pos < margin_neg");
  require(gamma > 0.0 && std::isfinite(gamma), "circle loss: gamma must be > 0");
}

double circle_loss(std::span<const CircleAnchor> anchors, const CircleLossParams& params) {
  params.validate();
  if (anchors.empty()) fail(ErrorCode::InvalidArgument, "circle loss: empty anchor set");
  double total = 0.0;
  for (const auto& a : anchors) {
    check_anchor(a);
    const auto t = circle_terms(a, params);
    const double s = logsumexp(t.pos) + logsumexp(t.neg);
    total += s == kNegInf ? 0.0 : softplus(s);
  }
  return total / static_cast<double>(anchors.size());
}

CircleLossGradient circle_loss_gradient(std::span<const CircleAnchor> anchors, const CircleLossParams& params) {
  params.validate();
  if (anchors.empty()) fail(ErrorCode::InvalidArgument, "circle loss: empty anchor set");
  const double inv = 1.0 / static_cast<double>(anchors.size());
  CircleLossGradient g;
  for (const auto& a : anchors) {
    check_anchor(a);
    const auto t = circle_terms(a, params);
    auto& gp = g.positive.emplace_back(a.positive_distances.size(), 0.0);
    auto& gn = g.negative.emplace_back(a.negative_distances.size(), 0.0);
    const double lp = logsumexp(t.pos), ln = logsumexp(t.neg);
    if (lp == kNegInf || ln == kNegInf) continue;
    // dL/dx_j = σ(s) · softmax_j(x), with x the exponent of term j.
    const double outer = sigmoid(lp + ln) * inv;
    for (std::size_t j = 0; j < t.pos.size(); ++j) {
      const double gap = a.positive_distances[j] - params.margin_pos;
      const double dx = (params.clamp_weights && gap < 0.0) ? 0.0 : 2.0 * std::sqrt(a.positive_overlaps[j]) * params.gamma * gap;
      gp[j] = outer * std::exp(t.pos[j] - lp) * dx;
    }
    for (std::size_t k = 0; k < t.neg.size(); ++k) {
      const double gap = params.margin_neg - a.negative_distances[k];
      const double dx = (params.clamp_weights && gap < 0.0) ? 0.0 : -2.0 * params.gamma * gap;
      gn[k] = outer * std::exp(t.neg[k] - ln) * dx;
    }
  }
  return g;
}

namespace {

std::size_t check_offsets(std::span<const Vec3> offsets, std::span<const Vec3> points, std::span<const Vec3> centroids,
                          const std::vector<bool>& foreground) {
  require(offsets.size() == points.size() && points.size() == centroids.size() && centroids.size() == foreground.size(),
          "offset losses: input lengths differ");
  const auto count = static_cast<std::size_t>(std::count(foreground.begin(), foreground.end(), true));
  if (count == 0) fail(ErrorCode::InvalidArgument, "offset losses: no foreground points");
  return count;
}

}  // namespace

double offset_l1_loss(std::span<const Vec3> offsets, std::span<const Vec3> points, std::span<const Vec3> centroids,
                      const std::vector<bool>& foreground) {
  const std::size_t count = check_offsets(offsets, points, centroids, foreground);
  double sum = 0.0;
  for (std::size_t i = 0; i < offsets.size(); ++i)
    if (foreground[i]) sum += (offsets[i] - (centroids[i] - points[i])).norm();
  return sum / static_cast<double>(count);
}

std::vector<Vec3> offset_l1_gradient(std::span<const Vec3> offsets, std::span<const Vec3> points,
                                     std::span<const Vec3> centroids, const std::vector<bool>& foreground) {
  const std::size_t count = check_offsets(offsets, points, centroids, foreground);
  std::vector<Vec3> g(offsets.size(), Vec3::Zero());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!foreground[i]) continue;
    const Vec3 r = offsets[i] - (centroids[i] - points[i]);
    const double n = r.norm();
    if (n > 0.0) g[i] = r / (n * static_cast<double>(count));
  }
  return g;
}

DirectionLossResult direction_loss(std::span<const Vec3> offsets, std::span<const Vec3> points,
                                   std::span<const Vec3> centroids, const std::vector<bool>& foreground) {
  const std::size_t count = check_offsets(offsets, points, centroids, foreground);
  DirectionLossResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!foreground[i]) continue;
    const Vec3 target = centroids[i] - points[i];
    const double no = offsets[i].norm(), nt = target.norm();
    if (no == 0.0 || nt == 0.0) {
      ++out.zero_norm_terms;
      continue;
    }
    sum += offsets[i].dot(target) / (no * nt);
  }
  out.value = -sum / static_cast<double>(count);
  return out;
}

std::vector<Vec3> direction_loss_gradient(std::span<const Vec3> offsets, std::span<const Vec3> points,
                                          std::span<const Vec3> centroids, const std::vector<bool>& foreground) {
  const std::size_t count = check_offsets(offsets, points, centroids, foreground);
  std::vector<Vec3> g(offsets.size(), Vec3::Zero());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!foreground[i]) continue;
    const Vec3 target = centroids[i] - points[i];
    const double no = offsets[i].norm(), nt = target.norm();
    if (no == 0.0 || nt == 0.0) continue;
    const Vec3 u = offsets[i] / no, t = target / nt;
    g[i] = -(t - u.dot(t) * u) / (no * static_cast<double>(count));
  }
  return g;
}

namespace {

void check_supervision(const Eigen::MatrixXd& plan, const MatchSupervision& s) {
  require(plan.rows() >= 1 && plan.cols() >= 1, "nll: empty plan");
  const auto n = static_cast<std::size_t>(plan.rows()) - 1, m = static_cast<std::size_t>(plan.cols()) - 1;
  for (auto [x, y] : s.matched) require(x < n && y < m, "nll: matched index outside the plan interior");
  for (auto x : s.unmatched_rows) require(x < n, "nll: unmatched row out of range");
  for (auto y : s.unmatched_cols) require(y < m, "nll: unmatched column out of range");
  require(plan.allFinite() && plan.minCoeff() >= 0.0 && plan.maxCoeff() <= 1.0 + 1e-12, "nll: plan entries must be in [0, 1]");
}

}  // namespace

NllResult nll_matching_loss(std::span<const Eigen::MatrixXd> plans, std::span<const MatchSupervision> supervision) {
  require(plans.size() == supervision.size(), "nll: one supervision record per plan");
  require(!plans.empty(), "nll: no plans");
  NllResult out;
  double total = 0.0;
  for (std::size_t p = 0; p < plans.size(); ++p) {
    const auto& z = plans[p];
    const auto& s = supervision[p];
    check_supervision(z, s);
    const Eigen::Index n = z.rows() - 1, m = z.cols() - 1;
    auto take = [&](Eigen::Index r, Eigen::Index c) {
      const double v = z(r, c);
      if (v <= 0.0 && out.diagnostic.empty())
        out.diagnostic = "plan " + std::to_string(p) + " has zero mass at required cell (" + std::to_string(r) + ", " + std::to_string(c) + ")";
      return v <= 0.0 ? std::numeric_limits<double>::infinity() : -std::log(v);
    };
    for (auto [x, y] : s.matched) total += take(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
    for (auto x : s.unmatched_rows) total += take(static_cast<Eigen::Index>(x), m);
    for (auto y : s.unmatched_cols) total += take(n, static_cast<Eigen::Index>(y));
  }
  out.value = total / static_cast<double>(plans.size());
  return out;
}

std::vector<Eigen::MatrixXd> nll_matching_gradient(std::span<const Eigen::MatrixXd> plans,
                                                   std::span<const MatchSupervision> supervision) {
  require(plans.size() == supervision.size() && !plans.empty(), "nll: one supervision record per plan");
  const double inv = 1.0 / static_cast<double>(plans.size());
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t p = 0; p < plans.size(); ++p) {
    const auto& z = plans[p];
    check_supervision(z, supervision[p]);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    const Eigen::Index n = z.rows() - 1, m = z.cols() - 1;
    auto add = [&](Eigen::Index r, Eigen::Index c) { g(r, c) -= inv / z(r, c); };
    for (auto [x, y] : supervision[p].matched) add(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
    for (auto x : supervision[p].unmatched_rows) add(static_cast<Eigen::Index>(x), m);
    for (auto y : supervision[p].unmatched_cols) add(n, static_cast<Eigen::Index>(y));
    out.push_back(std::move(g));
  }
  return out;
}

namespace {

constexpr double kLogClamp = 1e-12;

void check_mask(std::span<const double> m, std::span<const double> g) {
  require(m.size() == g.size(), "mask loss: lengths differ");
  require(!m.empty(), "mask loss: empty mask");
  for (double v : m) require(v >= 0.0 && v <= 1.0, "mask loss: predictions must be in [0, 1]");
  for (double v : g) require(v == 0.0 || v == 1.0, "mask loss: targets must be binary");
}

}  // namespace

double mask_loss(std::span<const double> predicted, std::span<const double> target, const MaskLossOptions& options) {
  check_mask(predicted, target);
  double bce = 0.0, inter = 0.0, sm = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double m = predicted[i], g = target[i];
    // 0·log 0 := 0 through the binary target.
    if (g == 1.0) bce -= std::log(std::max(m, kLogClamp));
    else bce -= std::log(std::max(1.0 - m, kLogClamp));
    inter += m * g;
    sm += m;
    sg += g;
  }
  bce /= static_cast<double>(predicted.size());
  const double dice = options.standard_dice ? 1.0 - (2.0 * inter + 1.0) / (sm + sg + 1.0)
                                            : 1.0 - 2.0 * (inter + 1.0) / (sm + sg + 1.0);
  return bce + dice;
}

std::vector<double> mask_loss_gradient(std::span<const double> predicted, std::span<const double> target,
                                       const MaskLossOptions& options) {
  check_mask(predicted, target);
  double inter = 0.0, sm = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    inter += predicted[i] * target[i];
    sm += predicted[i];
    sg += target[i];
  }
  const double denom = sm + sg + 1.0;
  const double num = options.standard_dice ? 2.0 * inter + 1.0 : 2.0 * (inter + 1.0);
  const double n = static_cast<double>(predicted.size());
  std::vector<double> g(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double m = predicted[i], t = target[i];
    const double dbce = t == 1.0 ? (m > kLogClamp ? -1.0 / m : 0.0) : (1.0 - m > kLogClamp ? 1.0 / (1.0 - m) : 0.0);
    const double dnum = 2.0 * t;
    g[i] = dbce / n - (dnum * denom - num) / (denom * denom);
  }
  return g;
}

double mask_loss_batch(std::span<const std::vector<double>> predicted, std::span<const std::vector<double>> target,
                       const MaskLossOptions& options) {
  require(predicted.size() == target.size() && !predicted.empty(), "mask loss: batch sizes differ or empty");
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) total += mask_loss(predicted[i], target[i], options);
  return total / static_cast<double>(predicted.size());
}

TotalLosses total_losses(const FocusingLossTerms& f, const MatchingLossTerms& m) {
  for (double v : {f.circle, f.reg, f.dir, m.circle, m.nll, m.overlap_mask, m.instance_mask})
    if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "total losses: non-finite component");
  return {f.circle + f.reg + f.dir, m.circle + m.nll + m.overlap_mask + m.instance_mask};
}

GradCheckReport grad_check(const ScalarFn& fn, std::span<const double> x, double h, double tolerance,
                           const GradientFn& analytic) {
  require(h > 0.0 && tolerance > 0.0, "grad check: step and tolerance must be > 0");
  std::vector<double> p(x.begin(), x.end());
  const double f0 = fn(p);
  auto eval_at = [&](std::size_t i, double delta) {
    const double saved = p[i];
    p[i] = saved + delta;
    const double v = fn(p);
    p[i] = saved;
    return v;
  };

  std::vector<double> fd(p.size()), fd_half(p.size());
  GradCheckReport rep;
  rep.used_analytic = static_cast<bool>(analytic);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double fp = eval_at(i, h), fm = eval_at(i, -h);
    const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
    fd[i] = (fp - fm) / (2.0 * h);
    if (!std::isfinite(fp) || !std::isfinite(fm) ||
        std::abs(fwd - bwd) > std::max(1e-3, std::sqrt(h)) * (1.0 + std::abs(fwd) + std::abs(bwd))) {
      rep.non_smooth = true;
    }
    fd_half[i] = (eval_at(i, h / 2) - eval_at(i, -h / 2)) / h;
    // features at the step scale make the estimate depend on h
    if (std::abs(fd[i] - fd_half[i]) > 0.1 * (std::abs(fd[i]) + std::abs(fd_half[i])) + 1e-6) rep.non_smooth = true;
  }
  const std::vector<double> ref = analytic ? analytic(p) : fd_half;
  require(ref.size() == fd.size(), "grad check: gradient has the wrong length");

  double scale = 1e-8, worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    scale = std::max(scale, std::abs(ref[i]));
    const double err = std::abs(fd[i] - ref[i]);
    if (err > worst) {
      worst = err;
      rep.worst_coordinate = i;
    }
  }
  rep.max_rel_error = worst / scale;
  rep.passed = !rep.non_smooth && rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace fmreg
