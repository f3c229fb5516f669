#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

namespace iada::testing {

inline Eigen::MatrixXd uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                               double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

inline Eigen::MatrixXd random_psd(std::mt19937_64& rng, Eigen::Index dim, double scale = 1.0) {
  const Eigen::MatrixXd a = uniform(rng, dim, dim, -1.0, 1.0);
  return scale * a * a.transpose() / static_cast<double>(dim);
}

/// max |a - b| normalised by the reference's largest magnitude.
inline double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& ref) {
  const double denom = std::max(ref.cwiseAbs().maxCoeff(), 1e-12);
  return (got - ref).cwiseAbs().maxCoeff() / denom;
}

}  // namespace iada::testing
