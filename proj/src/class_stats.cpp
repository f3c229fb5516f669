#include "iada/class_stats.hpp"

#include <stdexcept>
#include <string>

namespace iada {

ClassStats::ClassStats(int classes_, int dim_, bool diagonal_)
    : classes(classes_),
      dim(dim_),
      diagonal(diagonal_),
      counts(static_cast<std::size_t>(classes_), 0),
      means(static_cast<std::size_t>(classes_), Eigen::VectorXd::Zero(dim_)),
      covariances(static_cast<std::size_t>(classes_), Eigen::MatrixXd::Zero(dim_, dim_)) {
  if (classes_ < 1 || dim_ < 1) throw std::invalid_argument("ClassStats: empty shape");
}

double ClassStats::max_asymmetry() const {
  double worst = 0.0;
  for (const auto& s : covariances) worst = std::max(worst, (s - s.transpose()).cwiseAbs().maxCoeff());
  return worst;
}

double ClassStats::min_eigenvalue() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& s : covariances) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    lo = std::min(lo, es.eigenvalues().minCoeff());
  }
  return lo;
}

void update_covariance(ClassStats& stats, const Eigen::MatrixXd& features, std::span<const int> labels) {
  if (features.cols() != stats.dim)
    throw std::invalid_argument("update_covariance: feature width " + std::to_string(features.cols()) +
                                " != " + std::to_string(stats.dim));
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw std::invalid_argument("update_covariance: label count mismatch");

  std::vector<std::vector<Eigen::Index>> rows(static_cast<std::size_t>(stats.classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= stats.classes)
      throw std::invalid_argument("update_covariance: label out of range");
    rows[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }

  for (int c = 0; c < stats.classes; ++c) {
    const auto& idx = rows[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    const Eigen::MatrixXd batch = features(idx, Eigen::all);
    const double nb = static_cast<double>(idx.size());
    const Eigen::VectorXd mean_b = batch.colwise().mean().transpose();
    const Eigen::MatrixXd centred = batch.rowwise() - mean_b.transpose();
    Eigen::MatrixXd sigma_b = centred.transpose() * centred / nb;

    auto& n = stats.counts[static_cast<std::size_t>(c)];
    auto& mean = stats.means[static_cast<std::size_t>(c)];
    auto& sigma = stats.covariances[static_cast<std::size_t>(c)];
    const double na = static_cast<double>(n);
    const double total = na + nb;
    const Eigen::VectorXd d = mean_b - mean;
    sigma = (na * sigma + nb * sigma_b + (na * nb / total) * d * d.transpose()) / total;
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    if (stats.diagonal) sigma = Eigen::MatrixXd(sigma.diagonal().asDiagonal());
    mean += d * (nb / total);
    n += static_cast<long>(idx.size());
  }
}

Eigen::VectorXd class_priors(std::span<const long> counts) {
  if (counts.empty()) throw std::invalid_argument("class_priors: no classes");
  Eigen::VectorXd p(static_cast<Eigen::Index>(counts.size()));
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 1) throw std::invalid_argument("class_priors: class " + std::to_string(c) + " has no samples");
    p(static_cast<Eigen::Index>(c)) = static_cast<double>(counts[c]);
    total += static_cast<double>(counts[c]);
  }
  return p / total;
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols()) throw std::invalid_argument("project_psd: matrix is not square");
  if (!sigma.allFinite()) throw std::domain_error("project_psd: non-finite entries");
  const Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw std::domain_error("project_psd: eigensolver failed");
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd out = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace iada
