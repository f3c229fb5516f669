#pragma once

// Run configuration, scenario construction and run orchestration shared by
// the command-line tool and the acceptance runner.
//
// Config files are INI text with one section per module:
//
//   [run]          seed, name, oracle_suite, dump_characteristics
//   [scenario]     kind (longtail | noise | subpop | custom-csv) and its
//                  dataset parameters
//   [classifier]   hidden, feature_dim
//   [iada_loss]    alpha, beta, variant, detach_rho
//   [perturb_net]  hidden
//   [meta_trainer] warmup_epochs, total_epochs, batch_size, meta_batch_size,
//                  lr, lr_decay, lr_milestones, momentum, weight_decay,
//                  grad_clip, meta_lr, eps_off, meta_sigma, diagonal_sigma,
//                  history_decay
//   [ablation]     disable_G, disable_R, disable_F
//
// Unknown sections or keys are an error. Lists are comma separated.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "iada/data.hpp"
#include "iada/meta_trainer.hpp"
#include "json.hpp"

namespace iada {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioConfig {
  std::string kind = "longtail";
  // longtail and noise
  int classes = 5;
  int n_max = 1000;
  double imbalance_ratio = 100.0;
  int dim = 2;
  double radius = 2.0;
  double spread = 1.0;
  double nuisance_std = 1.0;
  int test_per_class = 200;
  int meta_per_class = 10;
  std::string noise_kind = "flip";
  double noise_rate = 0.4;
  // subpop
  double core_sep = 1.0;
  double spurious_sep = 3.0;
  std::vector<double> train_groups{0.45, 0.45, 0.05, 0.05};
  int core_dims = 2;
  int spurious_dims = 2;
  double core_std = 1.0;
  double spurious_std = 0.5;
  int n_train = 2000;
  // custom-csv
  std::string train_csv;
  std::string test_csv;
  bool has_group = false;

  void validate() const;
};

struct Ablation {
  bool disable_G = false;  // α = 0
  bool disable_R = false;  // ε ≡ 0
  bool disable_F = false;  // β = 0
};

struct RunConfig {
  std::string name = "run";
  ScenarioConfig scenario;
  TrainConfig train;
  Ablation ablation;
  bool oracle_suite = false;
  /// Write characteristics.csv (one row per training sample per epoch).
  bool dump_characteristics = false;

  /// Throws ConfigError.
  void validate() const;
  /// Training config with the ablation toggles applied.
  TrainConfig resolved_train() const;
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
/// Every key, including defaults; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);
/// Sets one field addressed as "section.key". Does not validate the result.
void set_option(RunConfig& config, const std::string& key, const std::string& value);

/// α grid used by sweeps.
inline const std::vector<double> kAlphaGrid{0.1, 0.25, 0.5, 0.75, 1.0};

struct ScenarioData {
  Dataset train;
  MetaDataset meta;
  Dataset test;
};

/// Builds the training set, the clean balanced metadata and the test set.
/// Long-tail and noise scenarios draw metadata and test data from a separate
/// balanced clean pool; subpop metadata is group-balanced.
ScenarioData build_scenario(const ScenarioConfig& config, std::uint64_t seed);

struct RunOutcome {
  TrainResult result;
  nlohmann::json summary;
};

/// Trains one configuration. With a non-empty `out_dir` writes
/// config.ini, metrics.csv, summary.json, classifier.ckpt and
/// perturb_net.ckpt there, plus oracle.json and characteristics.csv when
/// those switches are on.
RunOutcome run_experiment(const RunConfig& config, const std::filesystem::path& out_dir = {});

/// Baseline of a config: the same run with T₁ = T₂ (plain CE throughout).
RunConfig ce_baseline(const RunConfig& config);

/// Candidate minus baseline for one seed.
struct SeedDelta {
  std::uint64_t seed = 0;
  double test_acc = 0.0;
  double worst_class_recall = 0.0;
  double worst_group_acc = 0.0;  // NaN without groups
};

struct CompareReport {
  std::vector<SeedDelta> rows;  // ascending seed
  double acc_mean = 0.0, acc_std = 0.0;
  double worst_mean = 0.0, worst_std = 0.0;
  double group_mean = 0.0, group_std = 0.0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Pairs run summaries by seed. Throws ConfigError when the seed sets differ
/// or a seed repeats within one side. σ is the sample standard deviation.
CompareReport compare_summaries(const std::vector<nlohmann::json>& baseline,
                                const std::vector<nlohmann::json>& candidate);

/// Every summary.json under `path` (or `path` itself when it is a file).
std::vector<nlohmann::json> collect_summaries(const std::filesystem::path& path);

/// Directory under $IADA_OUTPUT_ROOT (default "runs").
std::filesystem::path output_root();

}  // namespace iada
