#include "iada/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace iada {

namespace {

void put(std::ostream& out, double v) {
  if (std::isnan(v))
    out << "nan";
  else {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
    out.write(buf, end - buf);
  }
}

void put(std::ostream& out, const Eigen::VectorXd& v, Eigen::Index width) {
  for (Eigen::Index k = 0; k < width; ++k) {
    out << ',';
    put(out, k < v.size() ? v(k) : std::nan(""));
  }
}

std::size_t tail_start(std::size_t rows, double tail) {
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail * static_cast<double>(rows))));
  return rows > keep ? rows - keep : 0;
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  auto out = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(number(v(k)));
  return out;
}

}  // namespace

void MetricsLog::append(EpochMetrics row) {
  if (row.class_recall.size() != classes) throw std::invalid_argument("MetricsLog: recall width mismatch");
  rows.push_back(std::move(row));
}

std::vector<std::string> MetricsLog::columns() const {
  std::vector<std::string> cols{"epoch",        "phase",         "lr",          "train_loss",
                                "test_loss",    "test_acc",      "worst_class_recall", "worst_group_acc",
                                "reg_G",        "reg_R",         "reg_F",       "eps_mean",
                                "adv_ratio",    "noisy_eps_mean", "clean_eps_mean", "skipped_meta_updates"};
  for (const char* prefix : {"recall_c", "eps_mean_c", "adv_ratio_c"})
    for (int c = 0; c < classes; ++c) cols.push_back(prefix + std::to_string(c));
  for (int g = 0; g < groups; ++g) cols.push_back("group_acc_g" + std::to_string(g));
  return cols;
}

std::string MetricsLog::to_csv() const {
  std::ostringstream out;
  const auto cols = columns();
  for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
  out << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.phase;
    for (double v : {r.lr, r.train_loss, r.test_loss, r.test_acc, r.worst_class_recall, r.worst_group_acc, r.reg_G,
                     r.reg_R, r.reg_F, r.eps_mean, r.adv_ratio, r.noisy_eps_mean, r.clean_eps_mean}) {
      out << ',';
      put(out, v);
    }
    out << ',' << r.skipped_meta_updates;
    put(out, r.class_recall, classes);
    put(out, r.class_eps_mean, classes);
    put(out, r.class_adv_ratio, classes);
    put(out, r.group_acc, groups);
    out << '\n';
  }
  return out.str();
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

double tail_mean(const MetricsLog& log, double EpochMetrics::*field, double tail) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = tail_start(log.rows.size(), tail); i < log.rows.size(); ++i) {
    const double v = log.rows[i].*field;
    if (std::isnan(v)) continue;
    sum += v;
    ++count;
  }
  return count ? sum / count : std::nan("");
}

Eigen::VectorXd tail_mean(const MetricsLog& log, Eigen::VectorXd EpochMetrics::*field, double tail) {
  Eigen::VectorXd sum;
  Eigen::VectorXd count;
  for (std::size_t i = tail_start(log.rows.size(), tail); i < log.rows.size(); ++i) {
    const Eigen::VectorXd& v = log.rows[i].*field;
    if (sum.size() == 0) {
      sum = Eigen::VectorXd::Zero(v.size());
      count = Eigen::VectorXd::Zero(v.size());
    }
    for (Eigen::Index k = 0; k < v.size() && k < sum.size(); ++k) {
      if (std::isnan(v(k))) continue;
      sum(k) += v(k);
      count(k) += 1.0;
    }
  }
  for (Eigen::Index k = 0; k < sum.size(); ++k) sum(k) = count(k) > 0 ? sum(k) / count(k) : std::nan("");
  return sum;
}

nlohmann::json MetricsLog::summary(double tail) const {
  nlohmann::json j;
  j["epochs"] = rows.size();
  if (rows.empty()) return j;
  const auto& last = rows.back();
  j["final"] = {
      {"test_acc", number(last.test_acc)},
      {"test_loss", number(last.test_loss)},
      {"worst_class_recall", number(last.worst_class_recall)},
      {"worst_group_acc", number(last.worst_group_acc)},
      {"class_recall", vector_json(last.class_recall)},
      {"group_acc", vector_json(last.group_acc)},
      {"skipped_meta_updates", last.skipped_meta_updates},
  };
  j["tail_fraction"] = tail;
  j["tail"] = {
      {"eps_mean", number(tail_mean(*this, &EpochMetrics::eps_mean, tail))},
      {"adv_ratio", number(tail_mean(*this, &EpochMetrics::adv_ratio, tail))},
      {"noisy_eps_mean", number(tail_mean(*this, &EpochMetrics::noisy_eps_mean, tail))},
      {"clean_eps_mean", number(tail_mean(*this, &EpochMetrics::clean_eps_mean, tail))},
      {"class_adv_ratio", vector_json(tail_mean(*this, &EpochMetrics::class_adv_ratio, tail))},
      {"class_eps_mean", vector_json(tail_mean(*this, &EpochMetrics::class_eps_mean, tail))},
  };
  return j;
}

}  // namespace iada
