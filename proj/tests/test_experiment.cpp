#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "iada/characteristics.hpp"
#include "iada/experiment.hpp"

using namespace iada;
namespace fs = std::filesystem;

namespace {

// A few-second configuration of the long-tail scenario.
RunConfig small_config() {
  RunConfig c;
  c.name = "small";
  c.scenario.kind = "longtail";
  c.scenario.classes = 3;
  c.scenario.n_max = 60;
  c.scenario.imbalance_ratio = 10;
  c.scenario.dim = 3;
  c.scenario.test_per_class = 20;
  c.scenario.meta_per_class = 4;
  c.train.model.hidden = {8};
  c.train.model.feature_dim = 4;
  c.train.perturb_hidden = 8;
  c.train.warmup_epochs = 2;
  c.train.total_epochs = 5;
  c.train.batch_size = 16;
  c.train.meta_batch_size = 6;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("iada_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json summary(std::uint64_t seed, double acc, double worst) {
  return {{"seed", seed}, {"final", {{"test_acc", acc}, {"worst_class_recall", worst}, {"worst_group_acc", nullptr}}}};
}

int cli(const std::string& args) {
  const std::string cmd = std::string(IADA_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text round trip") {
  RunConfig c = small_config();
  c.train.loss.alpha = 0.25;
  c.train.lr_milestones = {0.5, 0.75};
  c.train.weight_decay = 1.0 / 3.0;
  c.scenario.train_groups = {0.4, 0.4, 0.1, 0.1};
  c.ablation.disable_F = true;
  const std::string text = to_ini(c);
  const RunConfig back = parse_config(text);
  CHECK(to_ini(back) == text);
  CHECK(back.train.weight_decay == c.train.weight_decay);
  CHECK(back.train.lr_milestones == c.train.lr_milestones);
  CHECK(back.train.model.hidden == c.train.model.hidden);
  CHECK(back.ablation.disable_F);

  CHECK(to_ini(parse_config("")) == to_ini(RunConfig{}));
}

TEST_CASE("config rejects malformed input") {
  CHECK_THROWS_AS(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[iada_loss]\ngamma = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[iada_loss]\nalpha = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[iada_loss]\nalpha = 1x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[iada_loss]\nalpha = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[iada_loss]\nvariant = strange\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[meta_trainer]\nwarmup_epochs = 10\ntotal_epochs = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[scenario]\nkind = imagenet\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[scenario]\nkind = subpop\ntrain_groups = 0.5,0.5,0,0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[scenario]\nkind = custom-csv\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ablation]\ndisable_G = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseed = 1\n[run]\nseed = 2\n"), ConfigError);
}

TEST_CASE("set_option") {
  RunConfig c;
  set_option(c, "iada_loss.alpha", "0.75");
  set_option(c, "classifier.hidden", "4,5");
  CHECK(c.train.loss.alpha == 0.75);
  CHECK(c.train.model.hidden == std::vector<int>{4, 5});
  CHECK_THROWS_AS(set_option(c, "iada_loss.gamma", "1"), ConfigError);
  CHECK_THROWS_AS(set_option(c, "alpha", "1"), ConfigError);
}

TEST_CASE("ablation toggles") {
  RunConfig c;
  c.train.loss.alpha = 0.5;
  c.train.loss.beta = 1.0;
  CHECK(c.resolved_train().loss.alpha == 0.5);
  c.ablation.disable_G = true;
  CHECK(c.resolved_train().loss.alpha == 0.0);
  c.ablation = {false, true, false};
  CHECK(c.resolved_train().eps_off);
  c.ablation = {false, false, true};
  CHECK(c.resolved_train().loss.beta == 0.0);

  const RunConfig base = ce_baseline(c);
  CHECK(base.train.warmup_epochs == base.train.total_epochs);
  CHECK(base.name == c.name + "-ce");
}

TEST_CASE("scenario construction") {
  SUBCASE("long-tail") {
    ScenarioConfig s = small_config().scenario;
    const ScenarioData d = build_scenario(s, 3);
    const auto counts = d.train.class_counts();
    for (std::size_t k = 1; k < counts.size(); ++k) CHECK(counts[k] <= counts[k - 1]);
    CHECK(d.meta.size() == static_cast<std::size_t>(s.classes * s.meta_per_class));
    for (long n : d.test.class_counts()) CHECK(n == s.test_per_class);
    std::vector<long> meta_counts(static_cast<std::size_t>(s.classes), 0);
    for (int y : d.meta.labels) ++meta_counts[static_cast<std::size_t>(y)];
    for (long n : meta_counts) CHECK(n == s.meta_per_class);

    const ScenarioData again = build_scenario(s, 3);
    CHECK(again.train.features == d.train.features);
    CHECK(again.meta.features == d.meta.features);
    CHECK(again.test.labels == d.test.labels);
    CHECK(build_scenario(s, 4).train.features != d.train.features);
  }
  SUBCASE("noise keeps metadata and test labels clean") {
    ScenarioConfig s = small_config().scenario;
    s.kind = "noise";
    s.imbalance_ratio = 1;
    s.noise_rate = 0.4;
    const ScenarioData d = build_scenario(s, 5);
    REQUIRE(d.train.has_noise());
    long flipped = 0;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      CHECK((d.train.labels[i] != d.train.clean_labels[i]) == static_cast<bool>(d.train.noise_mask[i]));
      flipped += d.train.noise_mask[i];
    }
    CHECK(flipped > 0);
    CHECK_FALSE(d.test.has_noise());
  }
  SUBCASE("subpop") {
    ScenarioConfig s;
    s.kind = "subpop";
    s.n_train = 400;
    s.test_per_class = 50;
    s.meta_per_class = 6;
    const ScenarioData d = build_scenario(s, 2);
    REQUIRE(d.train.has_groups());
    std::vector<long> test_groups(4, 0), meta_groups(4, 0);
    for (int g : d.test.groups) ++test_groups[static_cast<std::size_t>(g)];
    for (int g : d.meta.groups) ++meta_groups[static_cast<std::size_t>(g)];
    for (long n : test_groups) CHECK(n == test_groups[0]);
    for (long n : meta_groups) CHECK(n == meta_groups[0]);
    // meta_per_class samples per group
    CHECK(d.meta.size() == 4u * static_cast<std::size_t>(s.meta_per_class));
  }
  SUBCASE("custom csv") {
    const fs::path dir = scratch("csv");
    const ScenarioData src = build_scenario(small_config().scenario, 1);
    save_csv(src.train, dir / "train.csv");
    save_csv(src.test, dir / "test.csv");
    ScenarioConfig s;
    s.kind = "custom-csv";
    s.train_csv = (dir / "train.csv").string();
    s.test_csv = (dir / "test.csv").string();
    s.meta_per_class = 2;
    const ScenarioData d = build_scenario(s, 1);
    CHECK(d.train.size() + d.meta.size() == src.train.size());
    CHECK(d.test.features == src.test.features);
  }
}

TEST_CASE("run artifacts reproduce the run") {
  const fs::path dir = scratch("run");
  RunConfig c = small_config();
  c.train.seed = 7;
  const RunOutcome first = run_experiment(c, dir);
  for (const char* f : {"config.ini", "metrics.csv", "summary.json", "classifier.ckpt", "perturb_net.ckpt"})
    CHECK(fs::exists(dir / f));
  CHECK(first.result.log.rows.size() == static_cast<std::size_t>(c.train.total_epochs));

  const RunOutcome again = run_experiment(load_config(dir / "config.ini"));
  CHECK(again.result.log.to_csv() == slurp(dir / "metrics.csv"));

  const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(j["seed"] == 7);
  CHECK(j["epochs"] == c.train.total_epochs);
  CHECK(j["baseline"] == false);
}

TEST_CASE("characteristics dump") {
  const fs::path dir = scratch("dump");
  RunConfig c = small_config();
  c.dump_characteristics = true;
  run_experiment(c, dir);
  std::ifstream in(dir / "characteristics.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("epoch,sample,label,eps,loss,", 0) == 0);
  CHECK(std::count(line.begin(), line.end(), ',') == 3 + kCharacteristics);
  std::vector<std::set<long>> seen(static_cast<std::size_t>(c.train.total_epochs));
  long rows = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string epoch, sample, label, eps;
    std::getline(cells, epoch, ',');
    std::getline(cells, sample, ',');
    std::getline(cells, label, ',');
    std::getline(cells, eps, ',');
    seen[std::stoul(epoch)].insert(std::stol(sample));
    CHECK((eps == "nan") == (std::stoi(epoch) < c.train.warmup_epochs));
    ++rows;
  }
  const std::size_t n = build_scenario(c.scenario, c.train.seed).train.size();
  CHECK(rows == static_cast<long>(n) * c.train.total_epochs);
  for (const auto& ids : seen) CHECK(ids.size() == n);
}

TEST_CASE("disabling the prior term zeroes its column") {
  RunConfig c = small_config();
  c.ablation.disable_F = true;
  const RunOutcome o = run_experiment(c);
  for (const auto& row : o.result.log.rows) CHECK(row.reg_F == 0.0);
}

TEST_CASE("metrics CSV layout") {
  const RunOutcome o = run_experiment(small_config());
  const std::string csv = o.result.log.to_csv();
  const std::string header = csv.substr(0, csv.find('\n'));
  CHECK(header.rfind("epoch,phase,lr,train_loss,test_loss,test_acc,worst_class_recall,worst_group_acc,reg_G,reg_R,"
                     "reg_F,eps_mean,adv_ratio,noisy_eps_mean,clean_eps_mean,skipped_meta_updates,recall_c0",
                     0) == 0);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  const auto width = std::count(header.begin(), header.end(), ',');
  int rows = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == width);
    ++rows;
  }
  CHECK(rows == small_config().train.total_epochs);
  // no groups: the worst-group column is nan everywhere
  CHECK(std::isnan(o.result.log.rows.front().worst_group_acc));
  CHECK(csv.find(",nan,") != std::string::npos);
}

TEST_CASE("paired comparison") {
  const std::vector<nlohmann::json> a{summary(1, 0.8, 0.5), summary(2, 0.7, 0.4), summary(3, 0.9, 0.6)};
  SUBCASE("identical inputs give zero deltas") {
    const CompareReport r = compare_summaries(a, a);
    CHECK(r.rows.size() == a.size());
    for (const auto& d : r.rows) {
      CHECK(d.test_acc == 0.0);
      CHECK(d.worst_class_recall == 0.0);
      CHECK(std::isnan(d.worst_group_acc));
    }
    CHECK(r.acc_mean == 0.0);
    CHECK(r.acc_std == 0.0);
  }
  SUBCASE("deltas, mean and sample sigma") {
    const std::vector<nlohmann::json> b{summary(3, 0.95, 0.6), summary(1, 0.9, 0.5), summary(2, 0.7, 0.7)};
    const CompareReport r = compare_summaries(a, b);
    REQUIRE(r.rows.size() == 3);
    CHECK(r.rows[0].seed == 1);
    CHECK(r.rows[0].test_acc == doctest::Approx(0.1));
    CHECK(r.rows[2].test_acc == doctest::Approx(0.05));
    CHECK(r.acc_mean == doctest::Approx(0.05));
    CHECK(r.acc_std == doctest::Approx(0.05));
    CHECK(r.worst_mean == doctest::Approx(0.1));
    CHECK(r.to_json()["rows"].size() == 3);
  }
  SUBCASE("mismatched seeds") {
    const std::vector<nlohmann::json> b{summary(1, 0.8, 0.5), summary(2, 0.7, 0.4), summary(4, 0.9, 0.6)};
    CHECK_THROWS_AS(compare_summaries(a, b), ConfigError);
    CHECK_THROWS_AS(compare_summaries(a, {summary(1, 0.8, 0.5)}), ConfigError);
    CHECK_THROWS_AS(compare_summaries({summary(1, 0.8, 0.5), summary(1, 0.7, 0.4)}, a), ConfigError);
  }
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("cli");
  const std::string cfg = (dir / "small.ini").string();
  std::ofstream(cfg) << to_ini(small_config());
  const std::string root = "IADA_OUTPUT_ROOT=" + (dir / "out").string() + " ";

  CHECK(cli("run -c " + cfg + " --seeds 1,2 -o " + (dir / "a").string()) == 0);
  CHECK(fs::exists(dir / "a" / "seed-2" / "metrics.csv"));
  CHECK(cli("run -c " + cfg + " --seeds 1,2 --baseline -o " + (dir / "b").string()) == 0);
  CHECK(cli("compare " + (dir / "b").string() + " " + (dir / "a").string()) == 0);
  CHECK(cli("compare " + (dir / "b").string() + " " + (dir / "a" / "seed-1").string()) == 2);

  CHECK(cli("run -c " + cfg + " --set iada_loss.gamma=1") == 2);
  CHECK(cli("run -c " + (dir / "missing.ini").string()) == 2);
  CHECK(cli("frobnicate") == 2);

  // lr large enough to overflow the logits
  CHECK(cli("run -c " + cfg + " --set meta_trainer.lr=1e200 --set meta_trainer.grad_clip=0 -o " +
            (dir / "c").string()) == 3);

  const std::string envcmd = "env " + root + IADA_CLI;
  CHECK(std::system((envcmd + " gen-data -c " + cfg + " >/dev/null").c_str()) == 0);
  CHECK(fs::exists(dir / "out" / "small-data" / "seed-1" / "train.csv"));

  CHECK(std::system((envcmd + " sweep -c " + cfg + " --set meta_trainer.total_epochs=3 >/dev/null").c_str()) == 0);
  std::ifstream table(dir / "out" / "small-sweep" / "sweep.csv");
  std::string line;
  int rows = -1;
  while (std::getline(table, line)) ++rows;
  CHECK(rows == static_cast<int>(kAlphaGrid.size()));
}
