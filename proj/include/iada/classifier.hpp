#pragma once

// Dense classifier: a ReLU MLP feature extractor h = F_Φ(x) followed by a
// linear head z = W h + b. Parameters live in a flat list of Eigen matrices
// so optimizers and checkpoints can treat every network the same way.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "iada/autodiff.hpp"

namespace iada {

using ParamList = std::vector<Eigen::MatrixXd>;

struct ClassifierShape {
  int input_dim = 2;
  std::vector<int> hidden{64, 64};
  int feature_dim = 16;
  int classes = 2;
  /// Zero-depth extractor: h = x and feature_dim is taken from input_dim.
  bool identity_extractor = false;

  int extractor_layers() const { return identity_extractor ? 0 : static_cast<int>(hidden.size()) + 1; }
};

/// Layout: [A_1, c_1, …, A_k, c_k, W, b] with A_l (out × in), c_l (1 × out),
/// W (C × 𝓗) and b (1 × C).
struct ClassifierParams {
  ParamList tensors;
  int layers = 0;

  Eigen::MatrixXd& head_weight() { return tensors[static_cast<std::size_t>(2 * layers)]; }
  const Eigen::MatrixXd& head_weight() const { return tensors[static_cast<std::size_t>(2 * layers)]; }
  Eigen::MatrixXd& head_bias() { return tensors[static_cast<std::size_t>(2 * layers + 1)]; }
  const Eigen::MatrixXd& head_bias() const { return tensors[static_cast<std::size_t>(2 * layers + 1)]; }
  int feature_dim() const { return static_cast<int>(head_weight().cols()); }
  int classes() const { return static_cast<int>(head_weight().rows()); }
  int input_dim() const { return layers == 0 ? feature_dim() : static_cast<int>(tensors[0].cols()); }
  bool finite() const;
};

/// Uniform(±1/√fan_in) initialisation, deterministic under seed.
ClassifierParams init_classifier(const ClassifierShape& shape, std::uint64_t seed);

/// Classifier tensors recorded on a tape (leaves or derived Vars such as a
/// pseudo-updated Φ̄).
struct ClassifierVars {
  std::vector<ad::Var> tensors;
  int layers = 0;

  ad::Var head_weight() const { return tensors[static_cast<std::size_t>(2 * layers)]; }
  ad::Var head_bias() const { return tensors[static_cast<std::size_t>(2 * layers + 1)]; }
};

ClassifierVars bind(ad::Tape& tape, const ClassifierParams& params, bool requires_grad = true);

ad::Var extract_features(const ClassifierVars& params, ad::Var inputs);
ad::Var logits(ad::Var weight, ad::Var bias, ad::Var features);

// Plain evaluation, no tape.
Eigen::MatrixXd extract_features(const ClassifierParams& params, const Eigen::MatrixXd& inputs);
Eigen::MatrixXd logits(const ClassifierParams& params, const Eigen::MatrixXd& features);

/// Per-sample ∇_h ℓ_CE = Wᵀ(softmax(Wh + b) − onehot(y)), one row per sample.
/// The result is plain data: it carries no dependence on any tape.
Eigen::MatrixXd ce_grad_wrt_features(const Eigen::MatrixXd& weight, const Eigen::RowVectorXd& bias,
                                     const Eigen::MatrixXd& features, std::span<const int> labels);

/// Text checkpoint: tensor count, then per tensor "rows cols" and row-major
/// values at 17 significant digits, which round-trips doubles exactly.
void save_checkpoint(const ParamList& tensors, const std::filesystem::path& path);
ParamList load_checkpoint(const std::filesystem::path& path);

}  // namespace iada
