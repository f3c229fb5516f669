#pragma once

// Per-epoch training metrics and their CSV / JSON serialisation.
//
// CSV column order (fixed; per-class and per-group blocks expand in index
// order):
//   epoch, phase, lr, train_loss, test_loss, test_acc, worst_class_recall,
//   worst_group_acc, reg_G, reg_R, reg_F, eps_mean, adv_ratio,
//   noisy_eps_mean, clean_eps_mean, skipped_meta_updates,
//   recall_c<k>..., eps_mean_c<k>..., adv_ratio_c<k>..., group_acc_g<k>...
// Undefined values (no groups, no noise mask, ε outside the meta phase) are
// written as "nan".

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace iada {

struct EpochMetrics {
  int epoch = 0;
  std::string phase;  // "warmup" or "meta"
  double lr = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double worst_class_recall = 0.0;
  double worst_group_acc = 0.0;
  /// Per-sample means of the loss terms as weighted in the objective:
  /// α·𝒢, ℛ and β·ℱ.
  double reg_G = 0.0;
  double reg_R = 0.0;
  double reg_F = 0.0;
  double eps_mean = 0.0;
  double adv_ratio = 0.0;
  double noisy_eps_mean = 0.0;
  double clean_eps_mean = 0.0;
  long skipped_meta_updates = 0;
  Eigen::VectorXd class_recall;
  Eigen::VectorXd class_eps_mean;
  Eigen::VectorXd class_adv_ratio;
  Eigen::VectorXd group_acc;
};

struct MetricsLog {
  int classes = 0;
  int groups = 0;
  std::vector<EpochMetrics> rows;

  void append(EpochMetrics row);
  std::vector<std::string> columns() const;
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;
  /// Final-epoch metrics plus averages over the last `tail` fraction of epochs.
  nlohmann::json summary(double tail = 0.2) const;
};

/// Mean of a column over the last `tail` fraction of rows (at least one row),
/// skipping NaN entries.
double tail_mean(const MetricsLog& log, double EpochMetrics::*field, double tail = 0.2);
Eigen::VectorXd tail_mean(const MetricsLog& log, Eigen::VectorXd EpochMetrics::*field, double tail = 0.2);

}  // namespace iada
