#pragma once

// Synthetic biased datasets (long-tail, label noise, subpopulation shift),
// CSV ingestion/export and the clean balanced metadata split.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace iada {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Eigen::MatrixXd features;  // N × D
  std::vector<int> labels;   // observed labels, possibly corrupted
  int classes = 0;
  std::vector<int> groups;                 // empty unless the data has groups
  std::vector<std::uint8_t> noise_mask;    // empty unless noise was injected
  std::vector<int> clean_labels;           // empty unless noise was injected

  std::size_t size() const { return labels.size(); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool has_groups() const { return !groups.empty(); }
  bool has_noise() const { return !noise_mask.empty(); }
  std::vector<long> class_counts() const;
  int group_count() const;
  /// Ground-truth label of sample i (pre-noise when a mask exists).
  int true_label(std::size_t i) const { return clean_labels.empty() ? labels[i] : clean_labels[i]; }

  Dataset subset(const std::vector<std::size_t>& rows) const;
  void validate() const;
};

struct MetaDataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  int classes = 0;
  int per_class = 0;
  std::vector<int> groups;

  std::size_t size() const { return labels.size(); }
};

/// Class blobs on a circle in the first two dimensions; any further
/// dimensions are isotropic nuisance noise shared by all classes.
struct ClassGeometry {
  double radius = 2.0;
  double spread = 1.0;
  double nuisance_std = 1.0;
};

/// Class c gets round(n_max · ratio^(−c/(C−1))) samples.
Dataset make_longtail(std::uint64_t seed, int classes, int n_max, double imbalance_ratio, int dim,
                      const ClassGeometry& geometry = {});

std::vector<long> longtail_counts(int classes, int n_max, double imbalance_ratio);

enum class NoiseKind { Uniform, Flip };

NoiseKind parse_noise_kind(const std::string& name);

/// Corrupts each label independently with probability `rate`.
Dataset inject_label_noise(const Dataset& dataset, NoiseKind kind, double rate, std::uint64_t seed);

/// Group g ∈ {0..3} pairs a class with a spurious attribute:
/// 0 = (y0, a0), 1 = (y1, a1) are the label-aligned groups and
/// 2 = (y0, a1), 3 = (y1, a0) the conflicting ones.
struct SubpopConfig {
  int core_dims = 2;
  int spurious_dims = 2;
  double core_std = 1.0;
  double spurious_std = 0.5;
  int n_train = 1000;
  int n_test = 1000;
};

int subpop_class(int group);
int subpop_attribute(int group);

/// Draws `n` samples with group frequencies `balance` (largest-remainder rounding).
Dataset make_subpop(std::uint64_t seed, double core_sep, double spurious_sep,
                    const std::vector<double>& balance, int n, const SubpopConfig& config = {});

/// Train/test pair from the same generating distribution with different
/// group frequencies.
std::pair<Dataset, Dataset> make_subpop_shift(std::uint64_t seed, double core_sep, double spurious_sep,
                                              const std::vector<double>& group_balance_train,
                                              const std::vector<double>& group_balance_test,
                                              const SubpopConfig& config = {});

/// Removes `per_class` clean samples of every class from `dataset` and returns
/// them as balanced metadata. When the dataset carries a noise mask only
/// uncorrupted samples are eligible.
std::pair<Dataset, MetaDataset> split_meta(const Dataset& dataset, int per_class, std::uint64_t seed);

struct CsvSchema {
  std::optional<int> classes;  // inferred as max label + 1 when absent
  bool has_group = false;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace iada
