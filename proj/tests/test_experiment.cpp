#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <sys/wait.h>

#include "meio/error.hpp"
#include "meio/experiment.hpp"
#include "meio/heuristic.hpp"

namespace fs = std::filesystem;

namespace meio {
namespace {

// Small, fast settings for trials that actually train.
constexpr const char* kTinyConfig =
    R"({"num_envs": 2, "steps_per_env": 128, "epochs": 2, "minibatches": 4, "hidden": [16, 16], "eval_every": 2})";

TrialOptions tiny_options() {
  TrialOptions o;
  o.master_seed = 2024;
  o.config_json = kTinyConfig;
  o.episodes = 4;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("meio_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrialResult synthetic(std::string scenario, std::string model, int seed, double best, double bench) {
  TrialResult t;
  t.scenario = std::move(scenario);
  t.model = std::move(model);
  t.seed = seed;
  t.best_cost = best;
  t.benchmark_cost = bench;
  t.episodes = 100 * seed;
  t.curve = {{0, best + 10.0, 1.5}, {100, best, 0.25}};
  return t;
}

// ---------------------------------------------------------------------------

TEST(Trial, HeuristicCurveIsFlatAtTheBenchmark) {
  const auto a = run_trial("A1", ModelKind::kHeuristic, 0, {});
  const auto b = run_trial("A1", ModelKind::kHeuristic, 7, {});
  ASSERT_FALSE(a.failed) << a.error;
  ASSERT_EQ(a.curve.size(), 1u);
  EXPECT_EQ(a.best_cost, a.benchmark_cost);
  EXPECT_EQ(a.savings(), 0.0);
  // Evaluation streams are shared per scenario, so seeds do not matter.
  EXPECT_EQ(a.best_cost, b.best_cost);
}

TEST(Trial, BenchmarkMatchesTheHeuristicUnderTheSameSeed) {
  TrialOptions o;
  o.master_seed = 5;
  const auto t = run_trial("A3", ModelKind::kHeuristic, 0, o);
  const auto s = prepare_scenario("A3", {});
  EXPECT_EQ(t.benchmark_cost, da_heuristic(*s, evaluation_seed(5, *s)).benchmark_cost);
}

TEST(Trial, RandomPolicyIsFarWorseThanTheBenchmark) {
  const auto t = run_trial("A1", ModelKind::kRandom, 0, {});
  ASSERT_FALSE(t.failed);
  EXPECT_GT(t.best_cost, 5.0 * t.benchmark_cost);
  EXPECT_LT(t.savings(), 0.0);
}

TEST(Trial, SeedsDeriveDistinctStreams) {
  const auto s = prepare_scenario("A1", {});
  EXPECT_NE(training_seed(0, *s, ModelKind::kSarl, 0), training_seed(0, *s, ModelKind::kSarl, 1));
  EXPECT_NE(training_seed(0, *s, ModelKind::kSarl, 0), training_seed(0, *s, ModelKind::kMarl, 0));
  EXPECT_NE(training_seed(0, *s, ModelKind::kSarl, 0), training_seed(1, *s, ModelKind::kSarl, 0));
  EXPECT_NE(evaluation_seed(0, *s), evaluation_seed(1, *s));
  EXPECT_NE(evaluation_seed(0, *s), evaluation_seed(0, *prepare_scenario("A3", {})));
}

TEST(Trial, TrainedTrialBestIsTheCurveMinimum) {
  const auto t = run_trial("A1", ModelKind::kSarl, 0, tiny_options());
  ASSERT_FALSE(t.failed) << t.error;
  ASSERT_EQ(t.curve.size(), 2u);
  EXPECT_EQ(t.episodes, 4);
  double best = t.curve[0].mean_cost;
  for (const auto& p : t.curve) best = std::min(best, p.mean_cost);
  EXPECT_EQ(t.best_cost, best);
}

TEST(Trial, ConfigOverridesAreValidated) {
  auto o = tiny_options();
  o.config_json = R"({"hidden_layers": [4]})";
  const auto t = run_trial("A1", ModelKind::kMarl, 0, o);
  EXPECT_TRUE(t.failed);
  EXPECT_NE(t.error.find("hidden_layers"), std::string::npos);
}

TEST(Trial, RepeatedTrialIsBitIdenticalInExportedFiles) {
  const auto a = scratch_dir("det_a");
  const auto b = scratch_dir("det_b");
  for (const auto& dir : {a, b}) {
    auto report = run_grid({"A1"}, {ModelKind::kMarl, ModelKind::kImarl}, {0}, tiny_options());
    export_report(report, dir);
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file() || entry.path().filename() == "timing.csv") continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GE(compared, 6u);
}

// ---------------------------------------------------------------------------

TEST(Grid, FailedTrialsAreIsolated) {
  const auto report = run_grid({"A1", "A2"}, {ModelKind::kHeuristic, ModelKind::kRandom}, {0, 1}, {});
  ASSERT_EQ(report.trials.size(), 8u);
  for (const auto& t : report.trials) {
    if (t.scenario == "A2") {
      EXPECT_TRUE(t.failed);
      EXPECT_NE(t.error.find("demand"), std::string::npos);
    } else {
      EXPECT_FALSE(t.failed);
      const auto alone = run_trial("A1", parse_model(t.model), t.seed, {});
      EXPECT_EQ(t.best_cost, alone.best_cost);
      EXPECT_EQ(t.benchmark_cost, alone.benchmark_cost);
    }
  }
  const auto* failed = report.cell("A2", "heuristic");
  ASSERT_NE(failed, nullptr);
  EXPECT_EQ(failed->failed, 2);
  EXPECT_TRUE(std::isnan(failed->best_cost));
}

TEST(Grid, ParallelWorkersMatchTheSequentialRun) {
  const auto one = run_grid({"A1", "A3"}, {ModelKind::kHeuristic, ModelKind::kRandom}, {0, 1}, {}, 1);
  const auto many = run_grid({"A1", "A3"}, {ModelKind::kHeuristic, ModelKind::kRandom}, {0, 1}, {}, 3);
  ASSERT_EQ(one.trials.size(), many.trials.size());
  for (std::size_t i = 0; i < one.trials.size(); ++i) {
    EXPECT_EQ(one.trials[i].scenario, many.trials[i].scenario);
    EXPECT_EQ(one.trials[i].best_cost, many.trials[i].best_cost);
  }
}

TEST(Grid, FullNamedGridHasThirteenColumnsAndZeroHeuristicSavings) {
  const auto report = run_grid(named_scenarios(), {ModelKind::kHeuristic}, {0}, {});
  const auto dir = scratch_dir("full");
  export_report(report, dir);
  const auto grid = lines_of(slurp(dir / "grid_best.csv"));
  ASSERT_EQ(grid.size(), 3u);
  const auto header = fields(grid[0]);
  ASSERT_EQ(header.size(), 14u);
  EXPECT_EQ(header[0], "model");
  for (std::size_t i = 0; i < 13; ++i) EXPECT_EQ(header[i + 1], named_scenarios()[i]);
  for (const auto& c : report.cells) {
    if (c.failed) continue;
    EXPECT_EQ(c.best_savings, 0.0) << c.scenario;
    EXPECT_EQ(c.mean_savings, 0.0) << c.scenario;
  }
}

TEST(Aggregate, BestNeverExceedsMeanAndSavingsFollowTheFormula) {
  std::vector<TrialResult> trials;
  for (int s = 0; s < 4; ++s) {
    trials.push_back(synthetic("A1", "sarl", s, 2000.0 + 37.0 * s, 2400.0));
    trials.push_back(synthetic("A1", "imarl", s, 2300.0 - 11.0 * s, 2400.0));
    trials.push_back(synthetic("B1", "sarl", s, 6000.0 - 3.0 * s * s, 5600.0));
  }
  const auto report = aggregate(trials);
  EXPECT_EQ(report.scenarios, (std::vector<std::string>{"A1", "B1"}));
  EXPECT_EQ(report.models, (std::vector<std::string>{"sarl", "imarl"}));
  for (const auto& c : report.cells) {
    if (c.trials == 0) continue;
    EXPECT_LE(c.best_cost, c.mean_cost);
    EXPECT_NEAR(c.best_savings, (c.benchmark_cost - c.best_cost) / c.benchmark_cost, 1e-12);
    EXPECT_NEAR(c.mean_savings, (c.benchmark_cost - c.mean_cost) / c.benchmark_cost, 1e-12);
  }
  const auto* a = report.cell("A1", "sarl");
  ASSERT_NE(a, nullptr);
  EXPECT_EQ(a->best_cost, 2000.0);
  EXPECT_DOUBLE_EQ(a->mean_cost, 2000.0 + 37.0 * 1.5);
  EXPECT_EQ(report.cell("B1", "imarl"), nullptr);
}

// ---------------------------------------------------------------------------

TEST(Export, EmptyGridWritesHeadersOnly) {
  const auto dir = scratch_dir("empty");
  export_report(aggregate({}), dir);
  EXPECT_EQ(slurp(dir / "grid_best.csv"), "model\n");
  EXPECT_EQ(slurp(dir / "grid_mean.csv"), "model\n");
  EXPECT_EQ(lines_of(slurp(dir / "trials.csv")).size(), 1u);
  EXPECT_EQ(lines_of(slurp(dir / "cells.csv")).size(), 1u);
  EXPECT_EQ(lines_of(slurp(dir / "timing.csv")).size(), 1u);
  EXPECT_TRUE(fs::is_directory(dir / "curves"));
  EXPECT_TRUE(fs::exists(dir / "README.md"));
}

TEST(Export, TrialsCsvRoundTripsExactly) {
  std::vector<TrialResult> trials{synthetic("A1", "sarl", 0, 2412.123456789012, 2418.18),
                                  synthetic("C3", "imarl", 3, 1.0 / 3.0, 0.1 + 0.2)};
  trials[1].diverged = true;
  trials[1].error = "non-finite loss, \"policy\" nan";
  TrialResult failed;
  failed.scenario = "A2";
  failed.model = "marl";
  failed.seed = 9;
  failed.failed = true;
  failed.error = "scenario A2 needs demand data";
  failed.best_cost = std::numeric_limits<double>::quiet_NaN();
  trials.push_back(failed);

  std::stringstream buf;
  write_trials_csv(buf, trials);
  const auto back = read_trials_csv(buf);
  ASSERT_EQ(back.size(), trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    EXPECT_EQ(back[i].scenario, trials[i].scenario);
    EXPECT_EQ(back[i].model, trials[i].model);
    EXPECT_EQ(back[i].seed, trials[i].seed);
    if (std::isnan(trials[i].best_cost)) EXPECT_TRUE(std::isnan(back[i].best_cost));
    else EXPECT_EQ(back[i].best_cost, trials[i].best_cost);
    EXPECT_EQ(back[i].benchmark_cost, trials[i].benchmark_cost);
    EXPECT_EQ(back[i].episodes, trials[i].episodes);
    EXPECT_EQ(back[i].diverged, trials[i].diverged);
    EXPECT_EQ(back[i].failed, trials[i].failed);
    EXPECT_EQ(back[i].error, trials[i].error);
  }
}

TEST(Export, CurveCsvRoundTripsExactly) {
  const std::vector<CurvePoint> curve{{0, 2418.18, 298.1}, {100, 1.0 / 7.0, 1e-300}, {200, 123456789.125, 0.0}};
  std::stringstream buf;
  write_curve_csv(buf, curve);
  EXPECT_EQ(lines_of(buf.str()).front(), "episode,eval_mean_cost,eval_std");
  const auto back = read_curve_csv(buf);
  ASSERT_EQ(back.size(), curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    EXPECT_EQ(back[i].episode, curve[i].episode);
    EXPECT_EQ(back[i].mean_cost, curve[i].mean_cost);
    EXPECT_EQ(back[i].std_cost, curve[i].std_cost);
  }
}

TEST(Export, ReloadedReportReaggregatesIdentically) {
  std::vector<TrialResult> trials;
  for (int s = 0; s < 3; ++s) {
    trials.push_back(synthetic("A1", "marl", s, 2100.0 + s * 0.1, 2418.18));
    trials.push_back(synthetic("A3", "marl", s, 5800.0 / (s + 1.0), 5950.9));
  }
  const auto report = aggregate(trials);
  const auto dir = scratch_dir("reload");
  export_report(report, dir);
  const auto back = load_report(dir);
  ASSERT_EQ(back.cells.size(), report.cells.size());
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    EXPECT_EQ(back.cells[i].scenario, report.cells[i].scenario);
    EXPECT_EQ(back.cells[i].best_cost, report.cells[i].best_cost);
    EXPECT_EQ(back.cells[i].mean_cost, report.cells[i].mean_cost);
    EXPECT_EQ(back.cells[i].best_savings, report.cells[i].best_savings);
  }
  ASSERT_EQ(back.trials.size(), trials.size());
  EXPECT_EQ(back.trials[1].curve.size(), 2u);
  EXPECT_EQ(back.trials[1].curve[1].mean_cost, trials[1].curve[1].mean_cost);
  // Re-exporting the reloaded report reproduces the deterministic files.
  const auto again = scratch_dir("reload_again");
  export_report(back, again);
  for (const char* f : {"grid_best.csv", "grid_mean.csv", "cells.csv", "trials.csv"})
    EXPECT_EQ(slurp(dir / f), slurp(again / f)) << f;
}

TEST(Export, SavingsColumnMatchesRawColumns) {
  std::vector<TrialResult> trials{synthetic("A1", "sarl", 0, 2211.5, 2418.18),
                                  synthetic("A1", "sarl", 1, 2999.25, 2418.18)};
  const auto dir = scratch_dir("savings");
  export_report(aggregate(trials), dir);
  const auto rows = lines_of(slurp(dir / "trials.csv"));
  const auto header = fields(rows[0]);
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  ASSERT_LT(col("savings"), header.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto f = fields(rows[r]);
    const double best = std::stod(f[col("best_cost")]);
    const double bench = std::stod(f[col("benchmark_cost")]);
    EXPECT_NEAR(std::stod(f[col("savings")]), (bench - best) / bench, 1e-9);
  }
  EXPECT_EQ(curve_file_name(trials[1]), "A1_sarl_seed1.csv");
  EXPECT_TRUE(fs::exists(dir / "curves" / "A1_sarl_seed1.csv"));
}

// ---------------------------------------------------------------------------

TEST(PolicyMap, BenchmarkFollowsTheOrderUpToRuleAtEverySample) {
  const auto s = prepare_scenario("A3", {});
  BaseStockPolicy policy(*s);
  const auto map = policy_map(s, policy, 5000, 1);
  ASSERT_EQ(map.rows.size(), 5000u * 4u);
  EXPECT_EQ(map.names, s->topology.names());
  for (const auto& r : map.rows) {
    const auto& sp = s->at(r.stock_point);
    EXPECT_EQ(r.order, std::clamp<std::int64_t>(*sp.bsl - r.ip, 0, sp.o_max));
  }
  EXPECT_EQ(kPolicyMapPeriods, 100000);
}

TEST(PolicyMap, BinnedProfileOfTheBenchmarkIsNonIncreasing) {
  const auto s = prepare_scenario("A1", {});
  BaseStockPolicy policy(*s);
  const auto map = policy_map(s, policy, 20000, 2);
  for (NodeId p = 0; p < s->size(); ++p) {
    const auto bins = binned_order_profile(map, p, 10);
    ASSERT_FALSE(bins.empty());
    for (std::size_t i = 0; i < bins.size(); ++i) {
      EXPECT_GT(bins[i].count, 0);
      EXPECT_LT(bins[i].ip_lo, bins[i].ip_hi);
      if (i) EXPECT_LE(bins[i].mean_order, bins[i - 1].mean_order);
    }
  }
  std::stringstream out;
  write_policy_map_csv(out, map);
  const auto text = lines_of(out.str());
  EXPECT_EQ(text.front(), "period,stock_point,ip,order");
  EXPECT_EQ(text.size(), 1u + map.rows.size());
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(MEIO_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ErrorsProduceAMachineReadableRecord) {
  const auto dir = scratch_dir("cli_err");
  EXPECT_EQ(run_cli("heuristic --scenario A2", dir / "err.txt"), 1);
  const auto err = slurp(dir / "err.txt");
  EXPECT_NE(err.find(R"({"error":{"kind":"missing-data")"), std::string::npos) << err;

  EXPECT_EQ(run_cli("train --scenario A1 --model ppo --out " + (dir / "x").string(), dir / "err2.txt"), 1);
  EXPECT_NE(slurp(dir / "err2.txt").find("\"kind\":\"invalid-parameter\""), std::string::npos);

  EXPECT_EQ(run_cli("grid --bogus-flag", dir / "err3.txt"), 2);
  EXPECT_NE(slurp(dir / "err3.txt").find("\"error\""), std::string::npos);
}

TEST(Cli, TrainEvaluateAndGridWriteCsvFiles) {
  const auto dir = scratch_dir("cli_ok");
  {
    std::ofstream cfg(dir / "tiny.json");
    cfg << kTinyConfig;
  }
  const auto err = dir / "err.txt";
  ASSERT_EQ(run_cli("train --scenario A1 --model marl --seeds 0 --episodes 2 --config " + (dir / "tiny.json").string() +
                        " --out " + (dir / "train").string(),
                    err),
            0)
      << slurp(err);
  EXPECT_TRUE(fs::exists(dir / "train" / "trials.csv"));
  const auto ckpt = dir / "train" / "checkpoints" / "A1_marl_seed0.json";
  ASSERT_TRUE(fs::exists(ckpt));

  ASSERT_EQ(run_cli("evaluate --scenario A1 --checkpoint " + ckpt.string() + " --out " + (dir / "eval").string(), err), 0)
      << slurp(err);
  ASSERT_EQ(run_cli("policy-map --scenario A1 --checkpoint " + ckpt.string() + " --periods 50 --out " +
                        (dir / "map").string(),
                    err),
            0)
      << slurp(err);
  ASSERT_EQ(run_cli("heuristic --scenario A1 --out " + (dir / "heur").string(), err), 0) << slurp(err);
  EXPECT_TRUE(fs::exists(dir / "heur" / "heuristic.csv"));
  EXPECT_TRUE(fs::exists(dir / "heur" / "benchmark.csv"));
  ASSERT_EQ(run_cli("grid --scenarios A1,A3 --models heuristic,random --seeds 0-1 --out " + (dir / "grid").string(), err),
            0)
      << slurp(err);
  const auto grid = lines_of(slurp(dir / "grid" / "grid_best.csv"));
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_EQ(grid[0], "model,A1,A3");
  EXPECT_EQ(lines_of(slurp(dir / "grid" / "trials.csv")).size(), 9u);

  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    const auto text = slurp(entry.path());
    EXPECT_FALSE(text.empty()) << entry.path();
    EXPECT_TRUE(std::isalpha(static_cast<unsigned char>(text[0]))) << "missing header in " << entry.path();
  }
}

}  // namespace
}  // namespace meio
