#include "iada/perturb_net.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace iada {

namespace {

// tanh rounds to ±1 in double once |x| > ~19; shrinking by one ulp keeps ε
// strictly inside (−1, 1).
constexpr double kShrink = 1.0 - 0x1p-53;

}  // namespace

PerturbNetParams init_perturb_net(const PerturbNetShape& shape, std::uint64_t seed) {
  if (shape.inputs < 1 || shape.hidden < 1) throw std::invalid_argument("perturb net: empty shape");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.inputs));
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd a1(shape.hidden, shape.inputs);
  Eigen::MatrixXd c1(1, shape.hidden);
  for (Eigen::Index j = 0; j < a1.cols(); ++j)
    for (Eigen::Index i = 0; i < a1.rows(); ++i) a1(i, j) = u(rng);
  for (Eigen::Index j = 0; j < c1.cols(); ++j) c1(0, j) = u(rng);
  PerturbNetParams p;
  p.tensors = {a1, c1, Eigen::MatrixXd::Zero(1, shape.hidden), Eigen::MatrixXd::Zero(1, 1)};
  return p;
}

Eigen::VectorXd eps_forward(const PerturbNetParams& params, const Eigen::MatrixXd& characteristics) {
  if (characteristics.cols() != params.inputs())
    throw std::invalid_argument("eps_forward: expected " + std::to_string(params.inputs()) + " characteristics, got " +
                                std::to_string(characteristics.cols()));
  const auto& t = params.tensors;
  const Eigen::MatrixXd hidden = ((characteristics * t[0].transpose()).rowwise() + t[1].row(0)).cwiseMax(0.0);
  const Eigen::VectorXd pre = (hidden * t[2].transpose()).col(0).array() + t[3](0, 0);
  return kShrink * pre.array().tanh();
}

ad::Var eps_forward(std::span<const ad::Var> params, ad::Var characteristics) {
  if (params.size() != 4) throw std::invalid_argument("eps_forward: perturb net has four tensors");
  if (characteristics.cols() != params[0].cols())
    throw ad::ShapeError(characteristics.id, "eps_forward: characteristic width mismatch");
  const ad::Var hidden = ad::relu(ad::add_row(ad::matmul(characteristics, ad::transpose(params[0])), params[1]));
  return ad::scale(ad::tanh(ad::add_row(ad::matmul(hidden, ad::transpose(params[2])), params[3])), kShrink);
}

}  // namespace iada
