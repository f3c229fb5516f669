#pragma once

// Meta-IADA training loop.
//
// Warm-up epochs train the classifier Φ with plain cross-entropy. Every
// later iteration runs, on one sampled training batch and one metadata
// batch:
//   1. pseudo step   Φ̄ = Φ − η₁ ∇_Φ ℓ^IADA(Φ; Σ, ε(f, Ω)), kept on a tape
//   2. Ω update      Adam on ∇_Ω ℓ^CE(Φ̄; metadata)
//   3. Σ update      Σ ← proj_PSD(Σ − η₂ ∇_Σ ℓ^CE(Φ̄; metadata))
//   4. final step    Φ ← SGD(Φ, ∇_Φ ℓ^IADA(Φ; Σ', ε(f, Ω')))
// The characteristics f are computed once from Φᵗ and are constants.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iada/autodiff.hpp"
#include "iada/characteristics.hpp"
#include "iada/class_stats.hpp"
#include "iada/classifier.hpp"
#include "iada/data.hpp"
#include "iada/iada_loss.hpp"
#include "iada/metrics.hpp"
#include "iada/optim.hpp"
#include "iada/perturb_net.hpp"

namespace iada {

/// A non-finite loss or parameter; the run cannot continue.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ClassifierShape model;
  int perturb_hidden = 100;
  LossConfig loss;
  /// T₁ and T₂ in epochs. total == warmup gives the CE baseline.
  int warmup_epochs = 30;
  int total_epochs = 100;
  int batch_size = 100;
  int meta_batch_size = 50;
  double lr = 0.05;  // η₁
  double lr_decay = 0.01;
  std::vector<double> lr_milestones{0.8, 0.9};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Global gradient-norm cap for the real classifier updates (0 = off).
  double grad_clip = 5.0;
  double meta_lr = 1e-3;  // η₂, shared by the Ω and Σ updates
  /// ε ≡ 0 with Ω frozen.
  bool eps_off = false;
  /// Update Σ on metadata; otherwise Σ is only the pooled estimate.
  bool meta_sigma = true;
  bool diagonal_sigma = false;
  double history_decay = 0.9;
  std::uint64_t seed = 1;

  void validate() const;
  double lr_at(int epoch) const;
};

/// Independent RNG seed for sub-stream k of a run seed (splitmix64).
/// Streams: 0 classifier init, 1 perturb-net init, 2 training batches,
/// 3 metadata batches.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k);

struct Batch {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<long> ids;
};

Batch make_batch(const Dataset& data, std::span<const long> ids);
Batch make_batch(const MetaDataset& data, std::span<const long> ids);

/// Shuffled mini-batches, one pass per call; deterministic under seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t size, int batch_size, std::uint64_t seed);
  std::vector<std::vector<long>> epoch();
  /// Next `batch_size` indices, reshuffling whenever a pass is exhausted.
  std::vector<long> next();

 private:
  std::size_t size_;
  int batch_size_;
  std::mt19937_64 rng_;
  std::vector<long> order_;
  std::size_t cursor_ = 0;
};

struct MetaState {
  ClassifierParams phi;
  PerturbNetParams omega;
  ClassStats stats;
  Eigen::VectorXd priors;
  CharacteristicHistory history;
  RunningNormalizer normalizer;
  Sgd sgd;
  Adam adam;
  long iteration = 0;
  long skipped_meta_updates = 0;
  /// When set, each step appends its name.
  std::vector<std::string>* trace = nullptr;
};

MetaState init_state(const TrainConfig& cfg, const Dataset& train);

/// Detached quantities computed once per iteration from Φᵗ.
struct BatchContext {
  Eigen::MatrixXd features;
  Eigen::MatrixXd sign_grad;  // sign(∇_h ℓ_CE)
  Eigen::MatrixXd raw;        // unnormalised characteristics
  Eigen::MatrixXd f;          // normalised characteristics
};

/// Folds the batch features into the class statistics, computes the
/// characteristics and commits them to the history and normaliser.
BatchContext prepare_batch(MetaState& state, const Batch& batch, double progress);

/// Plain CE step with the classifier optimiser. Returns the batch loss.
double warmup_step(MetaState& state, const Batch& batch, double lr, double grad_clip = 0.0);

struct PseudoStep {
  std::unique_ptr<ad::Tape> tape;
  ClassifierVars phi_bar;
  std::vector<ad::Var> omega;
  std::vector<ad::Var> sigma;
  double train_loss = 0.0;
};

/// Φ̄ on a tape that keeps its dependence on Ω and Σ. Plain SGD step.
PseudoStep pseudo_step(const MetaState& state, const Batch& batch, const BatchContext& ctx, const TrainConfig& cfg,
                       double lr);

struct Hypergradient {
  ParamList omega;
  std::vector<Eigen::MatrixXd> sigma;
  double meta_loss = 0.0;
};

/// ∇_Ω and ∇_Σ of the metadata CE evaluated at Φ̄.
Hypergradient meta_hypergradient(PseudoStep& pseudo, const Batch& meta);

/// Return false (and leave the state alone) on a non-finite hypergradient.
bool meta_update_omega(MetaState& state, const Hypergradient& hyper, const TrainConfig& cfg);
bool meta_update_sigma(MetaState& state, const Hypergradient& hyper, const TrainConfig& cfg);

struct StepReport {
  double loss = 0.0;
  Eigen::VectorXd eps;
  RegularizerReport regularizers;
  Eigen::MatrixXd characteristics;  // raw, one row per batch sample
};

/// ε under the current Ω (zero when eps_off).
Eigen::VectorXd current_eps(const MetaState& state, const BatchContext& ctx, const TrainConfig& cfg);

/// Real classifier update with the current Ω and Σ.
StepReport final_step(MetaState& state, const Batch& batch, const BatchContext& ctx, const TrainConfig& cfg, double lr);

/// prepare_batch, pseudo step, Ω update, Σ update and final step.
StepReport meta_iteration(MetaState& state, const Batch& batch, const Batch& meta, const TrainConfig& cfg, double lr,
                          double progress);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  Eigen::VectorXd class_recall;
  Eigen::VectorXd group_accuracy;  // empty without groups
};

Evaluation evaluate(const ClassifierParams& phi, const Dataset& data);

struct TrainResult {
  MetaState state;
  MetricsLog log;
};

/// Receives every training batch's raw characteristics and ε (NaN during
/// warm-up).
using CharacteristicSink =
    std::function<void(int epoch, const Batch& batch, const Eigen::MatrixXd& raw, const Eigen::VectorXd& eps)>;

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const MetaDataset& meta, const Dataset& test_set,
                  std::vector<std::string>* trace = nullptr, const CharacteristicSink& sink = {});

}  // namespace iada
