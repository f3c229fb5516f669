// iada: command-line harness for Meta-IADA experiments.
//
//   iada run      --config FILE [--seeds 1,2] [--baseline] [--set k=v]... [--out DIR]
//   iada sweep    --config FILE [--alphas ...] [--seeds ...] [--set k=v]...
//   iada compare  BASELINE CANDIDATE [--json FILE]
//   iada verify   [--seed N] [--inject-rho-sign-flip] [--json FILE]
//   iada gen-data --config FILE [--seed N] [--set k=v]... [--out DIR]
//
// Outputs go below $IADA_OUTPUT_ROOT (default ./runs) unless --out is given.
// Exit codes: 0 success, 1 other failure, 2 invalid configuration or
// arguments, 3 numerical abort, 4 verification failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iada/data.hpp"
#include "iada/experiment.hpp"
#include "iada/meta_trainer.hpp"
#include "iada/suites.hpp"

namespace fs = std::filesystem;
using namespace iada;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerify = 4;

RunConfig resolve(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    set_option(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

std::string seed_dir(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

void print_run(const RunConfig& c, const RunOutcome& o, const fs::path& dir) {
  const auto& f = o.summary["final"];
  auto show = [](const nlohmann::json& v) { return v.is_number() ? std::to_string(v.get<double>()) : "nan"; };
  std::cout << c.name << " seed " << c.train.seed << ": test_acc " << show(f["test_acc"]) << " worst_class "
            << show(f["worst_class_recall"]) << " worst_group " << show(f["worst_group_acc"]) << "  -> "
            << dir.string() << '\n';
}

int cmd_run(const std::string& config, std::vector<std::uint64_t> seeds, bool baseline,
            const std::vector<std::string>& overrides, std::optional<std::string> out) {
  RunConfig c = resolve(config, overrides);
  if (baseline) c = ce_baseline(c);
  if (seeds.empty()) seeds.push_back(c.train.seed);
  const fs::path root = out ? fs::path(*out) : output_root() / c.name;
  for (auto seed : seeds) {
    RunConfig r = c;
    r.train.seed = seed;
    const fs::path dir = seeds.size() == 1 && out ? root : root / seed_dir(seed);
    const RunOutcome o = run_experiment(r, dir);
    print_run(r, o, dir);
  }
  return 0;
}

int cmd_sweep(const std::string& config, std::vector<double> alphas, std::vector<std::uint64_t> seeds,
              const std::vector<std::string>& overrides) {
  const RunConfig c = resolve(config, overrides);
  if (alphas.empty()) alphas = kAlphaGrid;
  if (seeds.empty()) seeds.push_back(c.train.seed);
  const fs::path root = output_root() / (c.name + "-sweep");
  fs::create_directories(root);
  std::ofstream table(root / "sweep.csv");
  table << "alpha,runs,failed,test_acc_mean,worst_class_recall_mean\n";
  std::printf("%-8s %5s %7s %10s %12s\n", "alpha", "runs", "failed", "test_acc", "worst_class");
  for (double a : alphas) {
    RunConfig r = c;
    r.train.loss.alpha = a;
    r.validate();
    double acc = 0.0, worst = 0.0;
    int done = 0, failed = 0;
    for (auto seed : seeds) {
      r.train.seed = seed;
      const fs::path dir = root / ("alpha-" + std::to_string(a).substr(0, 4)) / seed_dir(seed);
      try {
        const RunOutcome o = run_experiment(r, dir);
        acc += o.summary["final"]["test_acc"].get<double>();
        worst += o.summary["final"]["worst_class_recall"].get<double>();
        ++done;
      } catch (const NumericalError& e) {
        std::cerr << "alpha " << a << " seed " << seed << ": " << e.what() << '\n';
        ++failed;
      }
    }
    if (done) acc /= done, worst /= done;
    std::printf("%-8g %5d %7d %10.4f %12.4f\n", a, done, failed, acc, worst);
    table << a << ',' << done << ',' << failed << ',' << acc << ',' << worst << '\n';
  }
  std::cout << "table -> " << (root / "sweep.csv").string() << '\n';
  return 0;
}

int cmd_compare(const std::string& base, const std::string& cand, std::optional<std::string> json_out) {
  const CompareReport r = compare_summaries(collect_summaries(base), collect_summaries(cand));
  std::cout << r.to_text();
  if (json_out) std::ofstream(*json_out) << r.to_json().dump(2) << '\n';
  return 0;
}

int cmd_verify(std::uint64_t seed, bool flip, std::optional<std::string> json_out) {
  const auto results = suites::run_all(seed, flip ? -1.0 : 1.0);
  nlohmann::json j = nlohmann::json::array();
  bool ok = true;
  for (const auto& s : results) {
    std::printf("%-4s %-14s measured %-12.4g bound %-12.4g %.1fs  %s\n", s.passed ? "PASS" : "FAIL", s.name.c_str(),
                s.measured, s.bound, s.seconds, s.detail.c_str());
    ok = ok && s.passed;
    j.push_back(s.to_json());
  }
  if (json_out) std::ofstream(*json_out) << j.dump(2) << '\n';
  return ok ? 0 : kExitVerify;
}

int cmd_gen_data(const std::string& config, std::optional<std::uint64_t> seed,
                 const std::vector<std::string>& overrides, std::optional<std::string> out) {
  const RunConfig c = resolve(config, overrides);
  const std::uint64_t s = seed.value_or(c.train.seed);
  const fs::path dir = out ? fs::path(*out) : output_root() / (c.name + "-data") / seed_dir(s);
  fs::create_directories(dir);
  const ScenarioData d = build_scenario(c.scenario, s);
  save_csv(d.train, dir / "train.csv");
  save_csv(d.test, dir / "test.csv");
  Dataset meta;
  meta.features = d.meta.features;
  meta.labels = d.meta.labels;
  meta.classes = d.meta.classes;
  meta.groups = d.meta.groups;
  save_csv(meta, dir / "meta.csv");
  if (!d.train.noise_mask.empty()) {
    std::ofstream mask(dir / "noise_mask.csv");
    mask << "noisy\n";
    for (bool b : d.train.noise_mask) mask << (b ? 1 : 0) << '\n';
  }
  std::cout << "train " << d.train.size() << ", meta " << d.meta.labels.size() << ", test " << d.test.size()
            << " -> " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-IADA experiment harness"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> out, json_out;
  bool baseline = false, flip = false;
  std::vector<double> alphas;
  std::string base_dir, cand_dir;
  std::uint64_t verify_seed = 1;
  std::optional<std::uint64_t> data_seed;

  auto* run = app.add_subcommand("run", "train one configuration for one or more seeds");
  run->add_option("-c,--config", config, "INI config")->required();
  run->add_option("--seeds", seeds, "seeds (default: run.seed)")->delimiter(',');
  run->add_flag("--baseline", baseline, "CE baseline: no meta phase");
  run->add_option("--set", overrides, "override section.key=value");
  run->add_option("-o,--out", out, "output directory");

  auto* sweep = app.add_subcommand("sweep", "sweep alpha over a grid");
  sweep->add_option("-c,--config", config, "INI config")->required();
  sweep->add_option("--alphas", alphas, "alpha grid (default 0.1,0.25,0.5,0.75,1)")->delimiter(',');
  sweep->add_option("--seeds", seeds, "seeds")->delimiter(',');
  sweep->add_option("--set", overrides, "override section.key=value");

  auto* compare = app.add_subcommand("compare", "paired-seed comparison of two sets of runs");
  compare->add_option("baseline", base_dir, "baseline run directory")->required();
  compare->add_option("candidate", cand_dir, "candidate run directory")->required();
  compare->add_option("--json", json_out, "write the report as JSON");

  auto* verify = app.add_subcommand("verify", "run the oracle suites");
  verify->add_option("--seed", verify_seed, "suite seed");
  verify->add_flag("--inject-rho-sign-flip", flip, "negate the curvature term (mutation check)");
  verify->add_option("--json", json_out, "write results as JSON");

  auto* gen = app.add_subcommand("gen-data", "write the scenario datasets as CSV");
  gen->add_option("-c,--config", config, "INI config")->required();
  gen->add_option("--seed", data_seed, "data seed (default: run.seed)");
  gen->add_option("--set", overrides, "override section.key=value");
  gen->add_option("-o,--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, seeds, baseline, overrides, out);
    if (*sweep) return cmd_sweep(config, alphas, seeds, overrides);
    if (*compare) return cmd_compare(base_dir, cand_dir, json_out);
    if (*verify) return cmd_verify(verify_seed, flip, json_out);
    if (*gen) return cmd_gen_data(config, data_seed, overrides, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
