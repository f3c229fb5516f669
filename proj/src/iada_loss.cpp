#include "iada/iada_loss.hpp"

#include <cmath>
#include <stdexcept>

namespace iada {

namespace {

// Scalar log per entry: vectorised log can differ in the last ulp between
// SIMD lanes and the scalar tail, which breaks exact cancellation.
Eigen::RowVectorXd log_row(const Eigen::VectorXd& priors) {
  return priors.transpose().unaryExpr([](double p) { return std::log(p); });
}

}  // namespace

LossVariant parse_loss_variant(const std::string& name) {
  if (name == "adjusted") return LossVariant::Adjusted;
  if (name == "weighted") return LossVariant::WeightedBound;
  throw std::invalid_argument("unknown loss variant '" + name + "' (expected adjusted or weighted)");
}

const char* loss_variant_name(LossVariant v) { return v == LossVariant::Adjusted ? "adjusted" : "weighted"; }

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and >= 0");
}

Eigen::MatrixXd compute_delta(const Eigen::MatrixXd& grad_h, const Eigen::VectorXd& eps) {
  if (eps.size() != grad_h.rows()) throw std::invalid_argument("compute_delta: one epsilon per sample required");
  return grad_h.array().sign().matrix().array().colwise() * eps.array();
}

Eigen::VectorXd rho(const Eigen::MatrixXd& W, const Eigen::MatrixXd& sigma_y, int y) {
  const Eigen::MatrixXd dw = W.rowwise() - W.row(y);
  return 0.5 * ((dw * sigma_y).array() * dw.array()).rowwise().sum().matrix();
}

Eigen::MatrixXd rho_matrix(const Eigen::MatrixXd& W, std::span<const Eigen::MatrixXd> sigma,
                           std::span<const int> labels) {
  Eigen::MatrixXd table(W.rows(), W.rows());
  for (Eigen::Index c = 0; c < W.rows(); ++c)
    table.row(c) = rho(W, sigma[static_cast<std::size_t>(c)], static_cast<int>(c)).transpose();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(labels.size()), W.rows());
  for (std::size_t i = 0; i < labels.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(labels[i]);
  return out;
}

Eigen::MatrixXd iada_logits(const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, const Eigen::MatrixXd& h,
                            const Eigen::MatrixXd& delta, std::span<const Eigen::MatrixXd> sigma,
                            std::span<const int> labels, const Eigen::VectorXd& priors, const LossConfig& cfg) {
  Eigen::MatrixXd z = ((h + delta) * W.transpose()).rowwise() + b;
  if (cfg.alpha != 0.0) z += cfg.alpha * rho_matrix(W, sigma, labels);
  if (cfg.variant == LossVariant::Adjusted && cfg.beta != 0.0)
    z.rowwise() += cfg.beta * log_row(priors);
  return z;
}

double iada_loss(const Eigen::MatrixXd& z, std::span<const int> labels) {
  const Eigen::VectorXd lse = ad::logsumexp(z);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total += lse(static_cast<Eigen::Index>(i)) - z(static_cast<Eigen::Index>(i), labels[i]);
  return total / static_cast<double>(labels.size());
}

double surrogate_term(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::VectorXd& h,
                      const Eigen::VectorXd& delta, const Eigen::MatrixXd& sigma_y, double alpha, int y) {
  const Eigen::RowVectorXd z = (W * (h + delta) + b + alpha * rho(W, sigma_y, y)).transpose();
  return ad::logsumexp(z)(0) - z(y);
}

double surrogate_weighted_bound(const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, const Eigen::MatrixXd& h,
                                const Eigen::MatrixXd& delta, std::span<const Eigen::MatrixXd> sigma,
                                std::span<const int> labels, const Eigen::VectorXd& priors, double alpha) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    total += surrogate_term(W, b.transpose(), h.row(r).transpose(), delta.row(r).transpose(),
                            sigma[static_cast<std::size_t>(labels[i])], alpha, labels[i]) /
             priors(labels[i]);
  }
  return total;
}

RegularizerReport regularizer_terms(const Eigen::MatrixXd& q, const Eigen::MatrixXd& rho, const Eigen::MatrixXd& W,
                                    const Eigen::MatrixXd& delta, const Eigen::VectorXd& priors,
                                    std::span<const int> labels) {
  const Eigen::Index n = q.rows();
  RegularizerReport r;
  r.per_sample_G = Eigen::VectorXd::Zero(n);
  r.per_sample_R = Eigen::VectorXd::Zero(n);
  r.per_sample_F = Eigen::VectorXd::Zero(n);
  const Eigen::RowVectorXd log_pi = log_row(priors);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const Eigen::VectorXd shift = W * delta.row(i).transpose();  // w_j · δ_i
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      if (j == y) continue;
      r.per_sample_G(i) += q(i, j) * rho(i, j);
      r.per_sample_R(i) += q(i, j) * (shift(j) - shift(y));
      r.per_sample_F(i) += q(i, j) * (log_pi(j) - log_pi(y));
    }
  }
  r.G = r.per_sample_G.sum();
  r.R = r.per_sample_R.sum();
  r.F = r.per_sample_F.sum();
  return r;
}

ad::Var rho_table(ad::Var W, std::span<const ad::Var> sigma) {
  const auto classes = W.rows();
  if (static_cast<Eigen::Index>(sigma.size()) != classes)
    throw ad::ShapeError(W.id, "rho_table: need one covariance per class");
  ad::Var table;
  for (Eigen::Index c = 0; c < classes; ++c) {
    auto own = std::make_shared<const ad::Labels>(static_cast<std::size_t>(classes), static_cast<int>(c));
    const ad::Var dw = W - ad::gather_rows(W, own);
    const ad::Var quad = ad::scale(ad::sum_cols(ad::matmul(dw, sigma[static_cast<std::size_t>(c)]) * dw), 0.5);
    const ad::Var row = ad::scatter_rows(ad::transpose(quad), std::make_shared<const ad::Labels>(1, static_cast<int>(c)),
                                         classes);
    table = table.valid() ? table + row : row;
  }
  return table;
}

ad::Var iada_logits(ad::Var W, ad::Var b, const IadaBatch& batch, std::span<const ad::Var> sigma,
                    const LossConfig& cfg) {
  ad::Tape& tape = *W.tape;
  ad::Var z = ad::add_row(ad::matmul(batch.features + batch.delta, ad::transpose(W)), b);
  if (cfg.alpha != 0.0) {
    const ad::Var w_rho = cfg.detach_rho ? tape.constant(W.value()) : W;
    z = z + ad::scale(ad::gather_rows(rho_table(w_rho, sigma), batch.labels), cfg.alpha);
  }
  if (cfg.variant == LossVariant::Adjusted && cfg.beta != 0.0) {
    const Eigen::MatrixXd adjust = cfg.beta * log_row(batch.priors);
    z = ad::add_row(z, tape.constant(adjust));
  }
  return z;
}

ad::Var iada_objective(ad::Var W, ad::Var b, const IadaBatch& batch, std::span<const ad::Var> sigma,
                       const LossConfig& cfg) {
  const ad::Var ce = ad::softmax_cross_entropy(iada_logits(W, b, batch, sigma, cfg), batch.labels);
  if (cfg.variant == LossVariant::Adjusted) return ad::mean(ce);
  Eigen::MatrixXd weights(static_cast<Eigen::Index>(batch.labels->size()), 1);
  for (std::size_t i = 0; i < batch.labels->size(); ++i)
    weights(static_cast<Eigen::Index>(i), 0) = 1.0 / batch.priors((*batch.labels)[i]);
  return ad::mean(ad::mul_col(ce, W.tape->constant(weights)));
}

}  // namespace iada
