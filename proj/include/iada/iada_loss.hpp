#pragma once

// Implicit adversarial data augmentation loss.
//
// Each feature h_i is augmented by h̃_i ~ N(h_i + δ_i, α Σ_{y_i}) with
// δ_i = ε_i · sign(∇_h ℓ_CE). Taking infinitely many draws and bounding the
// expected CE from above gives the closed form
//
//   Z̃_ij = w_j (h_i + δ_i) + b_j + α ρ_ij + β log π_j,
//   ρ_ij = ½ (w_j − w_{y_i}) Σ_{y_i} (w_j − w_{y_i})ᵀ,
//
// trained with ordinary softmax cross-entropy on Z̃.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iada/autodiff.hpp"

namespace iada {

enum class LossVariant {
  /// Logit-adjusted form: β log π_j added to every logit.
  Adjusted,
  /// Class-weighted form: per-sample weight 1/π_{y_i}, no logit adjustment.
  WeightedBound,
};

LossVariant parse_loss_variant(const std::string& name);
const char* loss_variant_name(LossVariant v);

struct LossConfig {
  double alpha = 0.5;
  double beta = 1.0;
  /// Treat W inside ρ as a constant of the classifier update.
  bool detach_rho = false;
  LossVariant variant = LossVariant::Adjusted;

  void validate() const;
};

/// δ_i = ε_i · sign(g_i) with sign(0) = 0. One ε per row of grad_h.
Eigen::MatrixXd compute_delta(const Eigen::MatrixXd& grad_h, const Eigen::VectorXd& eps);

/// ρ^j for a sample of class y, for every class j (ρ^y = 0).
Eigen::VectorXd rho(const Eigen::MatrixXd& W, const Eigen::MatrixXd& sigma_y, int y);

/// Per-sample ρ, n × C.
Eigen::MatrixXd rho_matrix(const Eigen::MatrixXd& W, std::span<const Eigen::MatrixXd> sigma,
                           std::span<const int> labels);

Eigen::MatrixXd iada_logits(const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, const Eigen::MatrixXd& h,
                            const Eigen::MatrixXd& delta, std::span<const Eigen::MatrixXd> sigma,
                            std::span<const int> labels, const Eigen::VectorXd& priors, const LossConfig& cfg);

/// Mean over rows of −log softmax(z)[y].
double iada_loss(const Eigen::MatrixXd& z, std::span<const int> labels);

/// Per-sample closed-form bound log Σ_j exp(𝒵^j − 𝒵^y) without logit
/// adjustment, the quantity that dominates E[ℓ_CE(h̃)].
double surrogate_term(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::VectorXd& h,
                      const Eigen::VectorXd& delta, const Eigen::MatrixXd& sigma_y, double alpha, int y);

/// Σ_i (1/π_{y_i}) · surrogate_term_i.
double surrogate_weighted_bound(const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, const Eigen::MatrixXd& h,
                                const Eigen::MatrixXd& delta, std::span<const Eigen::MatrixXd> sigma,
                                std::span<const int> labels, const Eigen::VectorXd& priors, double alpha);

struct RegularizerReport {
  double G = 0.0;  // Σ_i Σ_{j≠y} q_ij ρ_ij
  double R = 0.0;  // Σ_i Σ_{j≠y} q_ij Δw_{j,y} δ_i
  double F = 0.0;  // Σ_i Σ_{j≠y} q_ij log(π_j / π_y)
  Eigen::VectorXd per_sample_G;
  Eigen::VectorXd per_sample_R;
  Eigen::VectorXd per_sample_F;
};

/// q: softmax outputs n × C, rho: per-sample ρ n × C.
RegularizerReport regularizer_terms(const Eigen::MatrixXd& q, const Eigen::MatrixXd& rho, const Eigen::MatrixXd& W,
                                    const Eigen::MatrixXd& delta, const Eigen::VectorXd& priors,
                                    std::span<const int> labels);

// Tape versions used for training and for the meta step.

/// C × C table whose row c holds ρ^j for a sample of class c.
ad::Var rho_table(ad::Var W, std::span<const ad::Var> sigma);

struct IadaBatch {
  ad::Var features;  // n × 𝓗
  ad::Var delta;     // n × 𝓗
  std::shared_ptr<const ad::Labels> labels;
  Eigen::VectorXd priors;
};

/// Adjusted logits Z̃ (with β log π when the variant is Adjusted).
ad::Var iada_logits(ad::Var W, ad::Var b, const IadaBatch& batch, std::span<const ad::Var> sigma,
                    const LossConfig& cfg);

/// Scalar training objective for the configured variant: mean CE on Z̃, or
/// the 1/π-weighted mean for WeightedBound.
ad::Var iada_objective(ad::Var W, ad::Var b, const IadaBatch& batch, std::span<const ad::Var> sigma,
                       const LossConfig& cfg);

}  // namespace iada
