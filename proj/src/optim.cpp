#include "iada/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace iada {

namespace {

void check_shapes(const ParamList& params, const ParamList& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].rows() != grads[k].rows() || params[k].cols() != grads[k].cols())
      throw std::invalid_argument("optimizer: gradient shape mismatch at tensor " + std::to_string(k));
}

ParamList zeros_like(const ParamList& params) {
  ParamList out;
  for (const auto& p : params) out.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
  return out;
}

}  // namespace

void Sgd::step(ParamList& params, const ParamList& grads, double lr) {
  check_shapes(params, grads);
  if (velocity.empty()) velocity = zeros_like(params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::MatrixXd g = grads[k];
    if (weight_decay != 0.0) g += weight_decay * params[k];
    if (momentum != 0.0) {
      velocity[k] = momentum * velocity[k] + g;
      params[k] -= lr * velocity[k];
    } else {
      params[k] -= lr * g;
    }
  }
}

void Adam::step(ParamList& params, const ParamList& grads) {
  check_shapes(params, grads);
  if (m.empty()) {
    m = zeros_like(params);
    v = zeros_like(params);
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * grads[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * grads[k].cwiseProduct(grads[k]);
    params[k].array() -= lr * (m[k].array() / c1) / ((v[k].array() / c2).sqrt() + eps);
  }
}

double clip_grad_norm(ParamList& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm)
    for (auto& g : grads) g *= max_norm / norm;
  return norm;
}

double step_decay(double base, double factor, std::span<const double> milestones, double progress) {
  double lr = base;
  for (double m : milestones)
    if (progress >= m) lr *= factor;
  return lr;
}

}  // namespace iada
