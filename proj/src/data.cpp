#include "iada/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace iada {

std::vector<long> Dataset::class_counts() const {
  std::vector<long> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

int Dataset::group_count() const {
  return groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end()) + 1;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.classes = classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(i));
    out.labels.push_back(labels[i]);
    if (has_groups()) out.groups.push_back(groups[i]);
    if (has_noise()) {
      out.noise_mask.push_back(noise_mask[i]);
      out.clean_labels.push_back(clean_labels[i]);
    }
  }
  return out;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DataError("dataset: feature rows and label count differ");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError("dataset: label out of range at row " + std::to_string(i));
  if (!groups.empty() && groups.size() != labels.size()) throw DataError("dataset: group ids misaligned");
  if (noise_mask.size() != clean_labels.size() || (!noise_mask.empty() && noise_mask.size() != labels.size()))
    throw DataError("dataset: noise mask misaligned");
}

std::vector<long> longtail_counts(int classes, int n_max, double imbalance_ratio) {
  if (classes < 2) throw DataError("make_longtail: need at least two classes");
  if (imbalance_ratio < 1.0) throw DataError("make_longtail: imbalance ratio must be >= 1");
  std::vector<long> counts;
  for (int c = 0; c < classes; ++c) {
    const double exponent = -static_cast<double>(c) / static_cast<double>(classes - 1);
    counts.push_back(std::lround(n_max * std::pow(imbalance_ratio, exponent)));
  }
  if (counts.back() < 2)
    throw DataError("make_longtail: smallest class would have " + std::to_string(counts.back()) + " samples");
  return counts;
}

Dataset make_longtail(std::uint64_t seed, int classes, int n_max, double imbalance_ratio, int dim,
                      const ClassGeometry& geometry) {
  if (dim < 2) throw DataError("make_longtail: need at least two feature dimensions");
  const auto counts = longtail_counts(classes, n_max, imbalance_ratio);
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset out;
  out.classes = classes;
  out.features.resize(total, dim);
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / classes;
    const double cx = geometry.radius * std::cos(angle);
    const double cy = geometry.radius * std::sin(angle);
    for (long k = 0; k < counts[static_cast<std::size_t>(c)]; ++k, ++row) {
      out.features(row, 0) = cx + geometry.spread * normal(rng);
      out.features(row, 1) = cy + geometry.spread * normal(rng);
      for (int d = 2; d < dim; ++d) out.features(row, d) = geometry.nuisance_std * normal(rng);
      out.labels.push_back(c);
    }
  }
  return out;
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "uniform") return NoiseKind::Uniform;
  if (name == "flip") return NoiseKind::Flip;
  throw DataError("unknown noise kind '" + name + "' (expected uniform or flip)");
}

Dataset inject_label_noise(const Dataset& dataset, NoiseKind kind, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw DataError("inject_label_noise: rate must lie in [0, 1)");
  if (rate == 0.0) return dataset;
  Dataset out = dataset;
  out.clean_labels = dataset.clean_labels.empty() ? dataset.labels : dataset.clean_labels;
  out.noise_mask.assign(dataset.size(), 0);
  // Selection and replacement use separate streams so the selected set only
  // depends on (seed, rate).
  std::mt19937_64 select_rng(seed);
  std::mt19937_64 value_rng(seed ^ 0x5bd1e995ULL);
  std::bernoulli_distribution pick(rate);
  std::uniform_int_distribution<int> other(1, dataset.classes - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!pick(select_rng)) continue;
    const int y = out.labels[i];
    out.labels[i] = kind == NoiseKind::Flip ? (y + 1) % out.classes : (y + other(value_rng)) % out.classes;
    out.noise_mask[i] = 1;
  }
  return out;
}

int subpop_class(int group) { return group == 0 || group == 2 ? 0 : 1; }
int subpop_attribute(int group) { return group == 0 || group == 3 ? 0 : 1; }

namespace {

std::vector<long> apportion(const std::vector<double>& weights, int n) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<long> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  long assigned = 0;
  for (std::size_t g = 0; g < weights.size(); ++g) {
    const double exact = n * weights[g] / total;
    counts[g] = static_cast<long>(std::floor(exact));
    assigned += counts[g];
    remainders.emplace_back(exact - static_cast<double>(counts[g]), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

}  // namespace

Dataset make_subpop(std::uint64_t seed, double core_sep, double spurious_sep,
                    const std::vector<double>& balance, int n, const SubpopConfig& config) {
  if (balance.size() != 4) throw DataError("make_subpop: group balance needs four entries");
  for (double w : balance)
    if (!(w > 0.0)) throw DataError("make_subpop: every group needs a positive share");
  const auto counts = apportion(balance, n);
  for (long c : counts)
    if (c == 0) throw DataError("make_subpop: a group would receive zero samples");

  const int dim = config.core_dims + config.spurious_dims;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset out;
  out.classes = 2;
  out.features.resize(n, dim);
  const double core_scale = 0.5 * core_sep / std::sqrt(static_cast<double>(config.core_dims));
  const double spur_scale = 0.5 * spurious_sep / std::sqrt(static_cast<double>(config.spurious_dims));
  Eigen::Index row = 0;
  for (int g = 0; g < 4; ++g) {
    const double ysign = subpop_class(g) == 1 ? 1.0 : -1.0;
    const double asign = subpop_attribute(g) == 1 ? 1.0 : -1.0;
    for (long k = 0; k < counts[static_cast<std::size_t>(g)]; ++k, ++row) {
      for (int d = 0; d < config.core_dims; ++d)
        out.features(row, d) = ysign * core_scale + config.core_std * normal(rng);
      for (int d = 0; d < config.spurious_dims; ++d)
        out.features(row, config.core_dims + d) = asign * spur_scale + config.spurious_std * normal(rng);
      out.labels.push_back(subpop_class(g));
      out.groups.push_back(g);
    }
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return out.subset(order);
}

std::pair<Dataset, Dataset> make_subpop_shift(std::uint64_t seed, double core_sep, double spurious_sep,
                                              const std::vector<double>& group_balance_train,
                                              const std::vector<double>& group_balance_test,
                                              const SubpopConfig& config) {
  return {make_subpop(seed, core_sep, spurious_sep, group_balance_train, config.n_train, config),
          make_subpop(seed ^ 0x9e3779b97f4a7c15ULL, core_sep, spurious_sep, group_balance_test, config.n_test,
                      config)};
}

std::pair<Dataset, MetaDataset> split_meta(const Dataset& dataset, int per_class, std::uint64_t seed) {
  if (per_class <= 0) throw DataError("split_meta: per_class must be positive");
  std::vector<std::vector<std::size_t>> eligible(static_cast<std::size_t>(dataset.classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.has_noise() && dataset.noise_mask[i]) continue;
    eligible[static_cast<std::size_t>(dataset.true_label(i))].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<char> taken(dataset.size(), 0);
  MetaDataset meta;
  meta.classes = dataset.classes;
  meta.per_class = per_class;
  meta.features.resize(static_cast<Eigen::Index>(per_class) * dataset.classes, dataset.features.cols());
  Eigen::Index row = 0;
  for (int c = 0; c < dataset.classes; ++c) {
    auto& pool = eligible[static_cast<std::size_t>(c)];
    if (static_cast<int>(pool.size()) <= per_class)
      throw DataError("split_meta: class " + std::to_string(c) + " has only " + std::to_string(pool.size()) +
                      " clean samples");
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int k = 0; k < per_class; ++k, ++row) {
      const std::size_t i = pool[static_cast<std::size_t>(k)];
      taken[i] = 1;
      meta.features.row(row) = dataset.features.row(static_cast<Eigen::Index>(i));
      meta.labels.push_back(dataset.true_label(i));
      if (dataset.has_groups()) meta.groups.push_back(dataset.groups[i]);
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (!taken[i]) rest.push_back(i);
  return {dataset.subset(rest), std::move(meta)};
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& cell, std::size_t row) {
  const std::string t = trim(cell);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw DataError("csv row " + std::to_string(row) + ": non-numeric cell '" + cell + "'");
  return v;
}

int parse_int(const std::string& cell, std::size_t row) {
  const std::string t = trim(cell);
  int v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw DataError("csv row " + std::to_string(row) + ": expected an integer, got '" + cell + "'");
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv " + path.string() + " is empty");
  const auto header = split_fields(trim(line));
  const std::size_t label_col = header.size() - (schema.has_group ? 2 : 1);
  if (header.size() < (schema.has_group ? 3u : 2u) || trim(header[label_col]) != "label" ||
      (schema.has_group && trim(header.back()) != "group"))
    throw DataError("csv header must be f0..f{D-1},label" + std::string(schema.has_group ? ",group" : ""));

  std::vector<std::vector<double>> rows;
  Dataset out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(trim(line));
    if (fields.size() != header.size())
      throw DataError("csv row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    std::vector<double> values;
    for (std::size_t k = 0; k < label_col; ++k) values.push_back(parse_double(fields[k], row));
    const int label = parse_int(fields[label_col], row);
    if (label < 0 || (schema.classes && label >= *schema.classes))
      throw DataError("csv row " + std::to_string(row) + ": label " + std::to_string(label) + " out of range");
    out.labels.push_back(label);
    if (schema.has_group) out.groups.push_back(parse_int(fields.back(), row));
    rows.push_back(std::move(values));
  }
  out.classes = schema.classes ? *schema.classes
                               : (out.labels.empty() ? 0 : *std::max_element(out.labels.begin(), out.labels.end()) + 1);
  out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(label_col));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < label_col; ++k)
      out.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  out.validate();
  return out;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (int d = 0; d < dataset.dim(); ++d) out << 'f' << d << ',';
  out << "label" << (dataset.has_groups() ? ",group" : "") << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (int d = 0; d < dataset.dim(); ++d) out << dataset.features(static_cast<Eigen::Index>(i), d) << ',';
    out << dataset.labels[i];
    if (dataset.has_groups()) out << ',' << dataset.groups[i];
    out << '\n';
  }
}

}  // namespace iada
