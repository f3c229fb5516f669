#pragma once

// Perturbation network: ε = tanh(A₂ relu(A₁ f + c₁) + c₂), mapping the
// per-sample training characteristics f to a signed perturbation strength.

#include <cstdint>

#include <Eigen/Dense>

#include "iada/autodiff.hpp"
#include "iada/classifier.hpp"

namespace iada {

struct PerturbNetShape {
  int inputs = 15;
  int hidden = 100;
};

/// Layout: [A₁ (hidden × inputs), c₁ (1 × hidden), A₂ (1 × hidden), c₂ (1 × 1)].
struct PerturbNetParams {
  ParamList tensors;

  int inputs() const { return static_cast<int>(tensors[0].cols()); }
  int hidden() const { return static_cast<int>(tensors[0].rows()); }
};

/// Layer 1 ~ Uniform(±1/√inputs); layer 2 starts at zero so ε ≡ 0.
PerturbNetParams init_perturb_net(const PerturbNetShape& shape, std::uint64_t seed);

/// One ε per row of `characteristics`.
Eigen::VectorXd eps_forward(const PerturbNetParams& params, const Eigen::MatrixXd& characteristics);
ad::Var eps_forward(std::span<const ad::Var> params, ad::Var characteristics);

}  // namespace iada
