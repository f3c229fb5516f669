#pragma once

// Brute-force verifiers for the surrogate loss: explicit Gaussian
// augmentation, Monte-Carlo expectations, the Gaussian moment-generating
// function, finite-augmentation convergence, and central differences.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace iada::oracle {

struct OracleConfig {
  long mc_samples = 100000;
  std::uint64_t seed = 1;
  double fd_step = 1e-5;
  double alpha = 0.5;
  double cholesky_jitter = 1e-10;

  void validate() const;
};

/// Central-difference gradient of a scalar function.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double step = 1e-5);

/// Lower-triangular L with L Lᵀ = sigma + jitter·I. Throws on non-PSD input.
Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& sigma, double jitter = 1e-10);

/// `count` draws of h̃ ~ N(h + δ, α Σ), one per row.
Eigen::MatrixXd explicit_augment(const Eigen::VectorXd& h, const Eigen::VectorXd& delta,
                                 const Eigen::MatrixXd& sigma, double alpha, long count,
                                 std::uint64_t seed);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo E[ℓ_CE(W h̃ + b, y)] over h̃ ~ N(h + δ, α Σ).
McEstimate mc_expected_ce(const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                          const Eigen::VectorXd& h, const Eigen::VectorXd& delta,
                          const Eigen::MatrixXd& sigma, double alpha, int label, long count,
                          std::uint64_t seed);

struct MgfCheck {
  double mc_estimate = 0.0;
  double std_error = 0.0;
  double closed_form = 0.0;
};

/// E[e^{tX}] for X ~ N(μ, σ²): Monte-Carlo vs exp(tμ + σ²t²/2).
MgfCheck mgf_check(double t, double mu, double sigma2, long count, std::uint64_t seed);

/// One labelled feature with its class prior, as used by the finite-ℳ study.
struct AugmentedSample {
  Eigen::VectorXd h;
  Eigen::VectorXd delta;
  int label = 0;
};

struct ConvergenceRow {
  long m = 0;
  double loss = 0.0;
  double gap = 0.0;
};

/// Prior-weighted explicit augmentation loss: sample i gets round(ℳ/π_{y_i})
/// draws and the CE over all draws is averaged. Returns the loss for each ℳ
/// and its gap to `limit` (pass NaN to get the large-ℳ reference instead).
std::vector<ConvergenceRow> finite_loss_convergence(
    const Eigen::MatrixXd& W, const Eigen::VectorXd& b, std::span<const AugmentedSample> samples,
    std::span<const Eigen::MatrixXd> sigma, double alpha, const Eigen::VectorXd& priors,
    std::span<const long> m_sequence, double limit, std::uint64_t seed);

/// Number of augmented copies for a sample of a class with prior π.
long augmentation_count(long m, double prior);

/// The ℳ → ∞ limit of the prior-weighted loss, by Monte-Carlo with
/// `draws_per_sample` draws each.
double weighted_expected_ce(const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                            std::span<const AugmentedSample> samples,
                            std::span<const Eigen::MatrixXd> sigma, double alpha,
                            const Eigen::VectorXd& priors, long draws_per_sample,
                            std::uint64_t seed);

/// Least-squares slope of log(gap) against log(ℳ).
double log_log_slope(std::span<const double> m, std::span<const double> gap);

}  // namespace iada::oracle
