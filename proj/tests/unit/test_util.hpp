#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Geometry>

#include "core/rng.hpp"
#include "core/types.hpp"

namespace fmreg::test {

inline Vec3 random_vec(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Points random_points(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Points p(n);
  for (auto& x : p) x = random_vec(rng, lo, hi);
  return p;
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(standard_normal(rng), standard_normal(rng), standard_normal(rng), standard_normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline RigidTransform random_transform(Rng& rng, double t_range = 5.0) {
  return {random_rotation(rng), random_vec(rng, -t_range, t_range)};
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * standard_normal(rng);
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace fmreg::test
