#pragma once

// The fifteen per-sample training characteristics fed to the perturbation
// network, with per-sample EMA history and running z-normalisation.

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "iada/class_stats.hpp"

namespace iada {

inline constexpr int kCharacteristics = 15;

/// Column order of the raw characteristic matrix.
enum Characteristic : int {
  kLoss,
  kEmaLoss,
  kLossZScore,
  kMargin,
  kEmaMargin,
  kEntropy,
  kTrueClassProb,
  kCorrect,
  kEmaCorrect,
  kGradNorm,
  kPrior,
  kLogPrior,
  kClassMeanDistance,
  kProgress,
  kLossRank,
};

extern const std::array<const char*, kCharacteristics> kCharacteristicNames;

/// Per-sample EMAs of loss, margin and correctness.
struct CharacteristicHistory {
  double decay = 0.9;
  Eigen::VectorXd loss;
  Eigen::VectorXd margin;
  Eigen::VectorXd correct;
  std::vector<long> seen;

  CharacteristicHistory() = default;
  explicit CharacteristicHistory(std::size_t samples, double decay = 0.9);
  std::size_t size() const { return seen.size(); }
};

/// Classifier outputs for one batch, all detached.
struct SampleView {
  std::vector<long> ids;
  std::vector<int> labels;
  Eigen::MatrixXd logits;    // n × C
  Eigen::MatrixXd features;  // n × 𝓗
  Eigen::MatrixXd grad_h;    // n × 𝓗, per-sample ∇_h ℓ_CE
  double progress = 0.0;     // t / T₂
};

/// Raw (unnormalised) characteristics, n × 15. The EMA columns fold the
/// current value into the stored history without modifying it; a sample
/// never seen before takes its current value.
Eigen::MatrixXd extract(const SampleView& view, const CharacteristicHistory& history, const ClassStats& stats,
                        const Eigen::VectorXd& priors);

/// Commit the current loss, margin and correctness of the batch.
void update_history(CharacteristicHistory& history, std::span<const long> ids, const Eigen::VectorXd& loss,
                    const Eigen::VectorXd& margin, const Eigen::VectorXd& correct);

/// Commit the EMA columns of an `extract` result.
void update_history(CharacteristicHistory& history, std::span<const long> ids, const Eigen::MatrixXd& raw);

/// EMA estimate of per-column mean and variance; outputs are z-scores
/// clipped to ±clip.
struct RunningNormalizer {
  double decay = 0.9;
  double clip = 5.0;
  double min_std = 1e-6;
  bool initialized = false;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;

  void observe(const Eigen::MatrixXd& batch);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& batch) const;
};

}  // namespace iada
