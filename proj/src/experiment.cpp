#include "iada/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "iada/suites.hpp"

namespace iada {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string show(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(where + ": cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(where + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(' ');
    const auto b = item.find_last_not_of(' ');
    out.push_back(a == std::string::npos ? std::string() : item.substr(a, b - a + 1));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += show(values[i]);
    else
      out += std::to_string(values[i]);
  }
  return out;
}

class Registry {
 public:
  void add(std::string section, std::string key, double& v) {
    const std::string where = section + "." + key;
    fields_.push_back({section, key, [&v] { return show(v); },
                       [&v, where](const std::string& s) { v = parse_number<double>(s, where); }});
  }
  void add(std::string section, std::string key, int& v) {
    const std::string where = section + "." + key;
    fields_.push_back({section, key, [&v] { return std::to_string(v); },
                       [&v, where](const std::string& s) { v = parse_number<int>(s, where); }});
  }
  void add(std::string section, std::string key, std::uint64_t& v) {
    const std::string where = section + "." + key;
    fields_.push_back({section, key, [&v] { return std::to_string(v); },
                       [&v, where](const std::string& s) { v = parse_number<std::uint64_t>(s, where); }});
  }
  void add(std::string section, std::string key, bool& v) {
    const std::string where = section + "." + key;
    fields_.push_back({section, key, [&v] { return std::string(v ? "true" : "false"); },
                       [&v, where](const std::string& s) { v = parse_bool(s, where); }});
  }
  void add(std::string section, std::string key, std::string& v) {
    fields_.push_back({section, key, [&v] { return v; }, [&v](const std::string& s) { v = s; }});
  }
  void add(std::string section, std::string key, std::vector<double>& v) {
    const std::string where = section + "." + key;
    fields_.push_back({section, key, [&v] { return join(v); }, [&v, where](const std::string& s) {
                         v.clear();
                         if (s.empty()) return;
                         for (const auto& item : split_list(s)) v.push_back(parse_number<double>(item, where));
                       }});
  }
  void add(std::string section, std::string key, std::vector<int>& v) {
    const std::string where = section + "." + key;
    fields_.push_back({section, key, [&v] { return join(v); }, [&v, where](const std::string& s) {
                         v.clear();
                         if (s.empty()) return;
                         for (const auto& item : split_list(s)) v.push_back(parse_number<int>(item, where));
                       }});
  }
  void add_variant(std::string section, std::string key, LossVariant& v) {
    fields_.push_back({section, key, [&v] { return std::string(loss_variant_name(v)); },
                       [&v, section, key](const std::string& s) {
                         try {
                           v = parse_loss_variant(s);
                         } catch (const std::invalid_argument& e) {
                           throw ConfigError(section + "." + key + ": " + e.what());
                         }
                       }});
  }
  const std::vector<Field>& fields() const { return fields_; }

 private:
  std::vector<Field> fields_;
};

Registry registry(RunConfig& c) {
  Registry r;
  r.add("run", "name", c.name);
  r.add("run", "seed", c.train.seed);
  r.add("run", "oracle_suite", c.oracle_suite);
  r.add("run", "dump_characteristics", c.dump_characteristics);

  auto& s = c.scenario;
  r.add("scenario", "kind", s.kind);
  r.add("scenario", "classes", s.classes);
  r.add("scenario", "n_max", s.n_max);
  r.add("scenario", "imbalance_ratio", s.imbalance_ratio);
  r.add("scenario", "dim", s.dim);
  r.add("scenario", "radius", s.radius);
  r.add("scenario", "spread", s.spread);
  r.add("scenario", "nuisance_std", s.nuisance_std);
  r.add("scenario", "test_per_class", s.test_per_class);
  r.add("scenario", "meta_per_class", s.meta_per_class);
  r.add("scenario", "noise_kind", s.noise_kind);
  r.add("scenario", "noise_rate", s.noise_rate);
  r.add("scenario", "core_sep", s.core_sep);
  r.add("scenario", "spurious_sep", s.spurious_sep);
  r.add("scenario", "train_groups", s.train_groups);
  r.add("scenario", "core_dims", s.core_dims);
  r.add("scenario", "spurious_dims", s.spurious_dims);
  r.add("scenario", "core_std", s.core_std);
  r.add("scenario", "spurious_std", s.spurious_std);
  r.add("scenario", "n_train", s.n_train);
  r.add("scenario", "train_csv", s.train_csv);
  r.add("scenario", "test_csv", s.test_csv);
  r.add("scenario", "has_group", s.has_group);

  auto& t = c.train;
  r.add("classifier", "hidden", t.model.hidden);
  r.add("classifier", "feature_dim", t.model.feature_dim);

  r.add("iada_loss", "alpha", t.loss.alpha);
  r.add("iada_loss", "beta", t.loss.beta);
  r.add_variant("iada_loss", "variant", t.loss.variant);
  r.add("iada_loss", "detach_rho", t.loss.detach_rho);

  r.add("perturb_net", "hidden", t.perturb_hidden);

  r.add("meta_trainer", "warmup_epochs", t.warmup_epochs);
  r.add("meta_trainer", "total_epochs", t.total_epochs);
  r.add("meta_trainer", "batch_size", t.batch_size);
  r.add("meta_trainer", "meta_batch_size", t.meta_batch_size);
  r.add("meta_trainer", "lr", t.lr);
  r.add("meta_trainer", "lr_decay", t.lr_decay);
  r.add("meta_trainer", "lr_milestones", t.lr_milestones);
  r.add("meta_trainer", "momentum", t.momentum);
  r.add("meta_trainer", "weight_decay", t.weight_decay);
  r.add("meta_trainer", "grad_clip", t.grad_clip);
  r.add("meta_trainer", "meta_lr", t.meta_lr);
  r.add("meta_trainer", "eps_off", t.eps_off);
  r.add("meta_trainer", "meta_sigma", t.meta_sigma);
  r.add("meta_trainer", "diagonal_sigma", t.diagonal_sigma);
  r.add("meta_trainer", "history_decay", t.history_decay);

  r.add("ablation", "disable_G", c.ablation.disable_G);
  r.add("ablation", "disable_R", c.ablation.disable_R);
  r.add("ablation", "disable_F", c.ablation.disable_F);
  return r;
}

}  // namespace

void ScenarioConfig::validate() const {
  static const std::set<std::string> kinds{"longtail", "noise", "subpop", "custom-csv"};
  if (!kinds.count(kind)) throw ConfigError("scenario.kind: unknown scenario '" + kind + "'");
  if (meta_per_class < 1) throw ConfigError("scenario.meta_per_class must be >= 1");
  if (kind == "longtail" || kind == "noise") {
    if (classes < 2) throw ConfigError("scenario.classes must be >= 2");
    if (dim < 2) throw ConfigError("scenario.dim must be >= 2");
    if (imbalance_ratio < 1.0) throw ConfigError("scenario.imbalance_ratio must be >= 1");
    if (n_max < 2) throw ConfigError("scenario.n_max must be >= 2");
    if (test_per_class < 1) throw ConfigError("scenario.test_per_class must be >= 1");
    if (spread <= 0.0 || nuisance_std < 0.0) throw ConfigError("scenario.spread must be > 0, nuisance_std >= 0");
  }
  if (kind == "noise") {
    if (noise_kind != "flip" && noise_kind != "uniform")
      throw ConfigError("scenario.noise_kind: expected flip or uniform");
    if (noise_rate < 0.0 || noise_rate >= 1.0) throw ConfigError("scenario.noise_rate must lie in [0, 1)");
  }
  if (kind == "subpop") {
    if (train_groups.size() != 4) throw ConfigError("scenario.train_groups needs four group frequencies");
    for (double g : train_groups)
      if (!(g > 0.0)) throw ConfigError("scenario.train_groups entries must be > 0");
    if (core_dims < 1 || spurious_dims < 1) throw ConfigError("scenario.core_dims and spurious_dims must be >= 1");
    if (n_train < 4 || test_per_class < 1) throw ConfigError("scenario.n_train must be >= 4");
  }
  if (kind == "custom-csv" && (train_csv.empty() || test_csv.empty()))
    throw ConfigError("scenario.train_csv and scenario.test_csv are required for custom-csv");
}

void RunConfig::validate() const {
  scenario.validate();
  try {
    train.validate();
    train.loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("meta_trainer: ") + e.what());
  }
  if (train.model.feature_dim < 1) throw ConfigError("classifier.feature_dim must be >= 1");
  for (int h : train.model.hidden)
    if (h < 1) throw ConfigError("classifier.hidden widths must be >= 1");
}

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  if (ablation.disable_G) t.loss.alpha = 0.0;
  if (ablation.disable_R) t.eps_off = true;
  if (ablation.disable_F) t.loss.beta = 0.0;
  return t;
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig config;
  Registry r = registry(config);
  std::map<std::string, std::map<std::string, const Field*>> index;
  for (const auto& f : r.fields()) index[f.section][f.key] = &f;
  for (const auto& [section, keys] : tree) {
    auto sec = index.find(section);
    if (sec == index.end()) {
      if (keys.empty() && !keys.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
      throw ConfigError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : keys) {
      auto f = sec->second.find(key);
      if (f == sec->second.end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
      f->second->set(value.data());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const RunConfig& config) {
  RunConfig copy = config;
  Registry r = registry(copy);
  std::ostringstream out;
  std::string section;
  for (const auto& f : r.fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get() << '\n';
  }
  return out.str();
}

void set_option(RunConfig& config, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ConfigError("option '" + key + "' is not of the form section.key");
  const std::string section = key.substr(0, dot), name = key.substr(dot + 1);
  Registry r = registry(config);
  for (const auto& f : r.fields())
    if (f.section == section && f.key == name) return f.set(value);
  throw ConfigError("unknown option '" + key + "'");
}

ScenarioData build_scenario(const ScenarioConfig& s, std::uint64_t seed) {
  s.validate();
  ScenarioData out;
  const ClassGeometry geometry{s.radius, s.spread, s.nuisance_std};
  auto clean_pool = [&] {
    const Dataset pool =
        make_longtail(derive_seed(seed, 11), s.classes, s.test_per_class + s.meta_per_class, 1.0, s.dim, geometry);
    auto [test, meta] = split_meta(pool, s.meta_per_class, derive_seed(seed, 12));
    out.test = std::move(test);
    out.meta = std::move(meta);
  };
  if (s.kind == "longtail") {
    out.train = make_longtail(derive_seed(seed, 10), s.classes, s.n_max, s.imbalance_ratio, s.dim, geometry);
    clean_pool();
  } else if (s.kind == "noise") {
    const Dataset clean = make_longtail(derive_seed(seed, 10), s.classes, s.n_max, s.imbalance_ratio, s.dim, geometry);
    out.train = inject_label_noise(clean, parse_noise_kind(s.noise_kind), s.noise_rate, derive_seed(seed, 13));
    clean_pool();
  } else if (s.kind == "subpop") {
    SubpopConfig sub;
    sub.core_dims = s.core_dims;
    sub.spurious_dims = s.spurious_dims;
    sub.core_std = s.core_std;
    sub.spurious_std = s.spurious_std;
    sub.n_train = s.n_train;
    sub.n_test = 2 * s.test_per_class;
    const std::vector<double> even{0.25, 0.25, 0.25, 0.25};
    auto [train, test] = make_subpop_shift(derive_seed(seed, 10), s.core_sep, s.spurious_sep, s.train_groups, even, sub);
    out.train = std::move(train);
    out.test = std::move(test);
    // meta_per_class samples of every group, so classes are balanced too
    const Dataset pool = make_subpop(derive_seed(seed, 11), s.core_sep, s.spurious_sep, even, 4 * s.meta_per_class, sub);
    out.meta.features = pool.features;
    out.meta.labels = pool.labels;
    out.meta.groups = pool.groups;
    out.meta.classes = 2;
    out.meta.per_class = 2 * s.meta_per_class;
  } else {
    Dataset train = load_csv(s.train_csv, CsvSchema{std::nullopt, s.has_group});
    Dataset test = load_csv(s.test_csv, CsvSchema{std::nullopt, s.has_group});
    const int classes = std::max(train.classes, test.classes);
    train.classes = test.classes = classes;
    if (train.dim() != test.dim()) throw DataError("custom-csv: train and test feature widths differ");
    auto [rest, meta] = split_meta(train, s.meta_per_class, derive_seed(seed, 12));
    out.train = std::move(rest);
    out.meta = std::move(meta);
    out.test = std::move(test);
  }
  return out;
}

RunConfig ce_baseline(const RunConfig& config) {
  RunConfig c = config;
  c.name += "-ce";
  c.train.warmup_epochs = c.train.total_epochs;
  return c;
}

RunOutcome run_experiment(const RunConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const ScenarioData data = build_scenario(config.scenario, config.train.seed);
  const TrainConfig cfg = config.resolved_train();
  std::ofstream dump;
  CharacteristicSink sink;
  if (config.dump_characteristics && !out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    dump.open(out_dir / "characteristics.csv");
    dump << "epoch,sample,label,eps";
    for (const char* name : kCharacteristicNames) dump << ',' << name;
    dump << '\n';
    sink = [&dump](int epoch, const Batch& batch, const Eigen::MatrixXd& raw, const Eigen::VectorXd& eps) {
      for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        dump << epoch << ',' << batch.ids[static_cast<std::size_t>(i)] << ',' << batch.y[static_cast<std::size_t>(i)]
             << ',' << show(eps(i));
        for (Eigen::Index k = 0; k < raw.cols(); ++k) dump << ',' << show(raw(i, k));
        dump << '\n';
      }
    };
  }
  RunOutcome out{train(cfg, data.train, data.meta, data.test, nullptr, sink), {}};
  out.summary = out.result.log.summary();
  out.summary["name"] = config.name;
  out.summary["seed"] = config.train.seed;
  out.summary["scenario"] = config.scenario.kind;
  out.summary["baseline"] = cfg.warmup_epochs == cfg.total_epochs;
  nlohmann::json oracle;
  if (config.oracle_suite) {
    oracle = nlohmann::json::array();
    bool all = true;
    for (const auto& r : suites::run_all(config.train.seed)) {
      oracle.push_back(r.to_json());
      all = all && r.passed;
    }
    out.summary["oracle_passed"] = all;
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.ini") << to_ini(config);
    out.result.log.write_csv(out_dir / "metrics.csv");
    std::ofstream(out_dir / "summary.json") << out.summary.dump(2) << '\n';
    save_checkpoint(out.result.state.phi.tensors, out_dir / "classifier.ckpt");
    save_checkpoint(out.result.state.omega.tensors, out_dir / "perturb_net.ckpt");
    if (config.oracle_suite) std::ofstream(out_dir / "oracle.json") << oracle.dump(2) << '\n';
  }
  return out;
}

std::filesystem::path output_root() {
  const char* env = std::getenv("IADA_OUTPUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

namespace {

double json_number(const nlohmann::json& j, const char* key) {
  if (!j.contains("final") || !j["final"].contains(key)) throw ConfigError(std::string("summary lacks final.") + key);
  const auto& v = j["final"][key];
  return v.is_number() ? v.get<double>() : std::nan("");
}

std::map<std::uint64_t, const nlohmann::json*> by_seed(const std::vector<nlohmann::json>& runs, const char* side) {
  std::map<std::uint64_t, const nlohmann::json*> out;
  for (const auto& j : runs) {
    if (!j.contains("seed")) throw ConfigError(std::string(side) + ": summary without a seed");
    const auto seed = j["seed"].get<std::uint64_t>();
    if (!out.emplace(seed, &j).second)
      throw ConfigError(std::string(side) + ": seed " + std::to_string(seed) + " appears twice");
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.4f", v);
  return std::isnan(v) ? "nan" : buf;
}

}  // namespace

CompareReport compare_summaries(const std::vector<nlohmann::json>& baseline,
                                const std::vector<nlohmann::json>& candidate) {
  const auto base = by_seed(baseline, "baseline");
  const auto cand = by_seed(candidate, "candidate");
  if (base.empty()) throw ConfigError("compare: no runs");
  std::vector<std::uint64_t> only;
  for (const auto& [seed, _] : base)
    if (!cand.count(seed)) only.push_back(seed);
  for (const auto& [seed, _] : cand)
    if (!base.count(seed)) only.push_back(seed);
  if (!only.empty()) {
    std::string list;
    for (auto s : only) list += (list.empty() ? "" : ",") + std::to_string(s);
    throw ConfigError("compare: seed sets differ (unpaired seeds " + list + ")");
  }
  CompareReport r;
  std::vector<double> acc, worst, group;
  for (const auto& [seed, b] : base) {
    const auto& c = *cand.at(seed);
    SeedDelta d;
    d.seed = seed;
    d.test_acc = json_number(c, "test_acc") - json_number(*b, "test_acc");
    d.worst_class_recall = json_number(c, "worst_class_recall") - json_number(*b, "worst_class_recall");
    d.worst_group_acc = json_number(c, "worst_group_acc") - json_number(*b, "worst_group_acc");
    r.rows.push_back(d);
    acc.push_back(d.test_acc);
    worst.push_back(d.worst_class_recall);
    group.push_back(d.worst_group_acc);
  }
  std::tie(r.acc_mean, r.acc_std) = mean_std(acc);
  std::tie(r.worst_mean, r.worst_std) = mean_std(worst);
  std::tie(r.group_mean, r.group_std) = mean_std(group);
  return r;
}

nlohmann::json CompareReport::to_json() const {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& d : rows)
    j["rows"].push_back({{"seed", d.seed},
                         {"test_acc", num(d.test_acc)},
                         {"worst_class_recall", num(d.worst_class_recall)},
                         {"worst_group_acc", num(d.worst_group_acc)}});
  j["test_acc"] = {{"mean", num(acc_mean)}, {"std", num(acc_std)}};
  j["worst_class_recall"] = {{"mean", num(worst_mean)}, {"std", num(worst_std)}};
  j["worst_group_acc"] = {{"mean", num(group_mean)}, {"std", num(group_std)}};
  return j;
}

std::string CompareReport::to_text() const {
  std::ostringstream out;
  out << "seed      d_test_acc  d_worst_class  d_worst_group\n";
  for (const auto& d : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%-8llu  %10s  %13s  %13s\n", static_cast<unsigned long long>(d.seed),
                  fixed(d.test_acc).c_str(), fixed(d.worst_class_recall).c_str(), fixed(d.worst_group_acc).c_str());
    out << line;
  }
  out << "mean      " << fixed(acc_mean) << "     " << fixed(worst_mean) << "        " << fixed(group_mean) << '\n';
  out << "sigma     " << fixed(acc_std) << "     " << fixed(worst_std) << "        " << fixed(group_std) << '\n';
  return out.str();
}

std::vector<nlohmann::json> collect_summaries(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_regular_file(path)) {
    files.push_back(path);
  } else if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file() && e.path().filename() == "summary.json") files.push_back(e.path());
  } else {
    throw ConfigError("no such run directory " + path.string());
  }
  std::sort(files.begin(), files.end());
  std::vector<nlohmann::json> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      out.push_back(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace iada
