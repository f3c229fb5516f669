#pragma once

// Class priors and class-conditional feature covariances, pooled exactly
// across mini-batches.

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace iada {

struct ClassStats {
  int classes = 0;
  int dim = 0;
  /// Off-diagonal entries are kept at zero.
  bool diagonal = false;
  std::vector<long> counts;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  ClassStats() = default;
  ClassStats(int classes, int dim, bool diagonal = false);

  /// Largest asymmetry and most negative eigenvalue over all classes.
  double max_asymmetry() const;
  double min_eigenvalue() const;
};

/// Merge one batch into the running moments. Covariances are population
/// (1/n) estimates, so after any sequence of batches Σ_c equals the
/// covariance of every feature of class c seen so far. Classes missing from
/// the batch are untouched. A Σ_c edited outside this function keeps its
/// share n_old/n_new of the pooled result.
void update_covariance(ClassStats& stats, const Eigen::MatrixXd& features, std::span<const int> labels);

/// π_c = n_c / N. Every class must have at least one sample.
Eigen::VectorXd class_priors(std::span<const long> counts);

/// Nearest PSD matrix in Frobenius norm: symmetrize, clamp negative
/// eigenvalues to zero, reconstruct.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& sigma);

}  // namespace iada
