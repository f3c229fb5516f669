#include "iada/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace iada::oracle {

void OracleConfig::validate() const {
  if (mc_samples < 1000) throw std::invalid_argument("oracle: mc_samples must be at least 1000");
  if (fd_step < 1e-7 || fd_step > 1e-3) throw std::invalid_argument("oracle: fd_step must lie in [1e-7, 1e-3]");
  if (alpha < 0.0) throw std::invalid_argument("oracle: alpha must be non-negative");
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe(k) = x(k) + step;
    const double up = f(probe);
    probe(k) = x(k) - step;
    const double down = f(probe);
    probe(k) = x(k);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::domain_error("fd_gradient: non-finite function value at coordinate " + std::to_string(k));
    grad(k) = (up - down) / (2.0 * step);
  }
  return grad;
}

Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& sigma, double jitter) {
  if (!sigma.allFinite()) throw std::domain_error("cholesky: non-finite covariance");
  const Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym + jitter * Eigen::MatrixXd::Identity(sym.rows(), sym.cols()));
  if (llt.info() != Eigen::Success) throw std::domain_error("cholesky: covariance is not positive semi-definite");
  return llt.matrixL();
}

namespace {

// Welford running moments: identical draws give their value back exactly and
// a zero variance.
struct Moments {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  double std_error() const {
    return n > 1 ? std::sqrt(std::max(0.0, m2 / static_cast<double>(n - 1)) / static_cast<double>(n)) : 0.0;
  }
};

double row_ce(const Eigen::VectorXd& z, int label) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum()) - z(label);
}

}  // namespace

Eigen::MatrixXd explicit_augment(const Eigen::VectorXd& h, const Eigen::VectorXd& delta,
                                 const Eigen::MatrixXd& sigma, double alpha, long count,
                                 std::uint64_t seed) {
  const Eigen::Index dim = h.size();
  Eigen::MatrixXd out(count, dim);
  const Eigen::RowVectorXd center = (h + delta).transpose();
  if (alpha == 0.0) {
    out.rowwise() = center;
    return out;
  }
  const Eigen::MatrixXd L = std::sqrt(alpha) * cholesky_with_jitter(sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd xi(dim);
  for (long r = 0; r < count; ++r) {
    for (Eigen::Index k = 0; k < dim; ++k) xi(k) = normal(rng);
    out.row(r) = center + (L * xi).transpose();
  }
  return out;
}

McEstimate mc_expected_ce(const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                          const Eigen::VectorXd& h, const Eigen::VectorXd& delta,
                          const Eigen::MatrixXd& sigma, double alpha, int label, long count,
                          std::uint64_t seed) {
  const Eigen::VectorXd mu = W * (h + delta) + b;
  if (alpha == 0.0 || count <= 1) return {row_ce(mu, label), 0.0};
  // Draw in logit space: z = μ + √α (W L) ξ is the image of h̃ under the head.
  const Eigen::MatrixXd A = std::sqrt(alpha) * (W * cholesky_with_jitter(sigma));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd xi(h.size());
  Moments acc;
  for (long r = 0; r < count; ++r) {
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = normal(rng);
    acc.add(row_ce(mu + A * xi, label));
  }
  return {acc.mean, acc.std_error()};
}

MgfCheck mgf_check(double t, double mu, double sigma2, long count, std::uint64_t seed) {
  if (sigma2 < 0.0) throw std::invalid_argument("mgf_check: variance must be non-negative");
  MgfCheck out;
  out.closed_form = std::exp(t * mu + 0.5 * sigma2 * t * t);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(mu, std::sqrt(sigma2));
  Moments acc;
  for (long r = 0; r < count; ++r) acc.add(std::exp(t * (sigma2 == 0.0 ? mu : normal(rng))));
  out.mc_estimate = acc.mean;
  out.std_error = acc.std_error();
  return out;
}

long augmentation_count(long m, double prior) {
  if (prior <= 0.0) throw std::invalid_argument("augmentation_count: prior must be positive");
  return std::max(1L, std::lround(static_cast<double>(m) / prior));
}

double weighted_expected_ce(const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                            std::span<const AugmentedSample> samples,
                            std::span<const Eigen::MatrixXd> sigma, double alpha,
                            const Eigen::VectorXd& priors, long draws_per_sample,
                            std::uint64_t seed) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const double w = 1.0 / priors(s.label);
    const auto est = mc_expected_ce(W, b, s.h, s.delta, sigma[static_cast<std::size_t>(s.label)], alpha,
                                    s.label, draws_per_sample, seed * 7919 + i);
    num += w * est.estimate;
    den += w;
  }
  return num / den;
}

std::vector<ConvergenceRow> finite_loss_convergence(
    const Eigen::MatrixXd& W, const Eigen::VectorXd& b, std::span<const AugmentedSample> samples,
    std::span<const Eigen::MatrixXd> sigma, double alpha, const Eigen::VectorXd& priors,
    std::span<const long> m_sequence, double limit, std::uint64_t seed) {
  if (std::isnan(limit)) limit = weighted_expected_ce(W, b, samples, sigma, alpha, priors, 200000, seed + 1);
  std::vector<ConvergenceRow> rows;
  for (std::size_t k = 0; k < m_sequence.size(); ++k) {
    const long m = m_sequence[k];
    double total = 0.0;
    long draws = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const long copies = augmentation_count(m, priors(s.label));
      const Eigen::MatrixXd aug = explicit_augment(s.h, s.delta, sigma[static_cast<std::size_t>(s.label)], alpha,
                                                   copies, seed * 1000003ULL + k * 131ULL + i);
      for (Eigen::Index r = 0; r < aug.rows(); ++r)
        total += row_ce(W * aug.row(r).transpose() + b, s.label);
      draws += copies;
    }
    ConvergenceRow row;
    row.m = m;
    row.loss = total / static_cast<double>(draws);
    row.gap = std::abs(row.loss - limit);
    rows.push_back(row);
  }
  return rows;
}

double log_log_slope(std::span<const double> m, std::span<const double> gap) {
  if (m.size() != gap.size() || m.size() < 2) throw std::invalid_argument("log_log_slope: need >= 2 paired points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double x = std::log(m[i]);
    const double y = std::log(gap[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace iada::oracle
