#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "loopkit/geometry.hpp"
#include "loopkit/loss.hpp"

namespace testing {

inline loopkit::Pose random_pose(std::mt19937_64& rng, double trans_scale = 5.0, double max_angle = 3.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  const loopkit::Vec3 axis = loopkit::Vec3(n(rng), n(rng), n(rng)).normalized();
  const loopkit::Vec3 t(n(rng) * trans_scale, n(rng) * trans_scale, n(rng) * trans_scale);
  return {loopkit::Quat(Eigen::AngleAxisd(u(rng), axis)), t};
}

inline loopkit::Vec3 random_point(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 3.0);
  return {n(rng), n(rng), n(rng)};
}

inline Eigen::VectorXd random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v.normalized();
}

// Query e0; each member's dot with the query is the given value.
inline loopkit::TrainingTuple tuple_with_dots(const std::vector<double>& pos, const std::vector<double>& neg) {
  const int dim = int(pos.size() + neg.size()) + 1;
  loopkit::TrainingTuple t;
  t.query = Eigen::VectorXd::Unit(dim, 0);
  int axis = 1;
  auto make = [&](double d) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    v(0) = d;
    v(axis++) = std::sqrt(1.0 - d * d);
    return v;
  };
  for (double d : pos) t.positives.push_back(make(d));
  for (double d : neg) t.negatives.push_back(make(d));
  return t;
}

// Unit vectors, positives loosely correlated with the query.
inline loopkit::TrainingTuple random_tuple(int dim, int m, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mix(0.0, 2.0);
  loopkit::TrainingTuple t;
  t.query = random_unit(dim, rng);
  for (int i = 0; i < m; ++i) t.positives.push_back((t.query + mix(rng) * random_unit(dim, rng)).normalized());
  for (int j = 0; j < n; ++j) t.negatives.push_back((0.5 * t.query + mix(rng) * random_unit(dim, rng)).normalized());
  return t;
}

}  // namespace testing
