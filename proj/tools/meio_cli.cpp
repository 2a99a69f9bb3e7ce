// Command-line front end: heuristic, train, evaluate, policy-map, grid.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "meio/error.hpp"
#include "meio/experiment.hpp"
#include "meio/heuristic.hpp"

namespace fs = std::filesystem;
using namespace meio;

namespace {

struct Common {
  std::string scenario;
  std::string data;
  std::string lead_data;
  std::string config;
  std::string out;
  std::uint64_t master_seed = 0;
};

DataSource load_data(const Common& c) {
  DataSource d;
  if (!c.data.empty()) d.demand = read_series_csv_file(c.data);
  if (!c.lead_data.empty()) d.lead_time = read_series_csv_file(c.lead_data);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

int to_int(const std::string& s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::kInvalidParameter,
          "not an integer: '" + s + "'");
  return v;
}

/// "3", "0,2,5" or "0-9".
std::vector<int> parse_seeds(const std::string& text) {
  std::vector<int> seeds;
  for (const auto& part : split(text, ',')) {
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      seeds.push_back(to_int(part));
    } else {
      const int lo = to_int(part.substr(0, dash));
      const int hi = to_int(part.substr(dash + 1));
      require(lo <= hi, ErrorKind::kInvalidParameter, "empty seed range '" + part + "'");
      for (int s = lo; s <= hi; ++s) seeds.push_back(s);
    }
  }
  require(!seeds.empty(), ErrorKind::kInvalidParameter, "no seeds given");
  return seeds;
}

std::vector<std::string> parse_scenarios(const std::string& text) {
  if (text == "all") return named_scenarios();
  auto list = split(text, ',');
  require(!list.empty(), ErrorKind::kInvalidParameter, "no scenarios given");
  return list;
}

TrialOptions trial_options(const Common& c) {
  TrialOptions o;
  o.master_seed = c.master_seed;
  o.data = load_data(c);
  if (!c.config.empty()) o.config_json = slurp(c.config);
  return o;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Writes to <out>/<name> when an output directory is set, else to stdout.
void emit(const Common& c, const std::string& name, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(c.out);
  const fs::path path = fs::path(c.out) / name;
  std::ofstream out(path);
  out << text;
  out.close();
  require(!out.fail(), ErrorKind::kIo, "failed writing " + path.string());
  std::cerr << "wrote " << path.string() << '\n';
}

std::unique_ptr<Policy> resolve_policy(const std::string& model, const std::string& checkpoint,
                                       const ScenarioConfig& scenario, std::uint64_t seed,
                                       std::string& label) {
  if (!checkpoint.empty()) {
    std::ifstream in(checkpoint);
    require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + checkpoint);
    const auto trained = load_checkpoint(in);
    label = trained.model;
    return trained.make_policy(scenario);
  }
  const auto kind = parse_model(model);
  label = std::string(to_string(kind));
  if (kind == ModelKind::kHeuristic) return std::make_unique<BaseStockPolicy>(scenario);
  if (kind == ModelKind::kRandom) return std::make_unique<RandomPolicy>(seed);
  fail(ErrorKind::kInvalidParameter, "model '" + model + "' needs --checkpoint to evaluate");
}

// ---------------------------------------------------------------------------

int cmd_heuristic(const Common& c) {
  const auto data = load_data(c);
  const auto scenario = build_scenario(c.scenario, data);
  const auto result = da_heuristic(scenario, evaluation_seed(c.master_seed, scenario));
  std::ostringstream levels;
  levels << "stock_point,echelon,installation_level,echelon_level,target_backorders,expected_backorders\n";
  for (NodeId p = 0; p < scenario.size(); ++p) {
    const auto i = static_cast<std::size_t>(p);
    levels << scenario.topology.name(p) << ',' << scenario.topology.echelon(p) << ','
           << result.levels.installation_level[i] << ',' << result.levels.echelon_level[i] << ','
           << fmt(result.levels.target_backorders[i]) << ',' << fmt(result.levels.expected_backorders[i])
           << '\n';
  }
  std::ostringstream bench;
  bench << "scenario,topology_hash,benchmark_cost,benchmark_std\n"
        << scenario.id << ',' << scenario.topology_hash << ',' << fmt(result.benchmark_cost) << ','
        << fmt(result.benchmark.std_cost) << '\n';
  emit(c, "heuristic.csv", levels.str());
  emit(c, "benchmark.csv", bench.str());
  return 0;
}

struct TrainArgs {
  std::string model = "imarl";
  std::string seeds = "0";
  long episodes = -1;
  int jobs = 1;
  std::string imarl_init = "heuristic";
  std::string imarl_order = "downstream-up";
};

ImarlOptions imarl_options(const TrainArgs& a) {
  ImarlOptions o;
  if (a.imarl_init == "heuristic") o.init = ImarlInit::kHeuristic;
  else if (a.imarl_init == "random") o.init = ImarlInit::kRandom;
  else fail(ErrorKind::kInvalidParameter, "--imarl-init must be heuristic or random");
  if (a.imarl_order == "downstream-up") o.order = ImarlOrder::kDownstreamUp;
  else if (a.imarl_order == "upstream-down") o.order = ImarlOrder::kUpstreamDown;
  else fail(ErrorKind::kInvalidParameter, "--imarl-order must be downstream-up or upstream-down");
  return o;
}

int cmd_train(const Common& c, const TrainArgs& a) {
  require(!c.out.empty(), ErrorKind::kInvalidParameter, "train needs --out");
  const auto kind = parse_model(a.model);
  auto options = trial_options(c);
  options.imarl = imarl_options(a);
  options.keep_policy = true;
  if (a.episodes >= 0) options.episodes = a.episodes;
  const auto seeds = parse_seeds(a.seeds);

  std::vector<TrialResult> trials;
  for (int seed : seeds) {
    std::cerr << "training " << to_string(kind) << " on " << c.scenario << ", seed " << seed << '\n';
    auto t = run_trial(c.scenario, kind, seed, options);
    if (t.failed) std::cerr << "trial failed: " << t.error << '\n';
    trials.push_back(std::move(t));
  }
  const auto report = aggregate(trials);
  export_report(report, c.out);
  fs::create_directories(fs::path(c.out) / "checkpoints");
  for (const auto& t : report.trials) {
    if (!t.policy || !t.resolved) continue;
    const auto config = resolve_train_config(kind, *t.resolved, options);
    const fs::path path = fs::path(c.out) / "checkpoints" /
                          (t.scenario + "_" + t.model + "_seed" + std::to_string(t.seed) + ".json");
    std::ofstream out(path);
    save_checkpoint(out, *t.policy, config_hash(*t.resolved, config, t.model));
  }
  bool failed = false;
  for (const auto& t : report.trials) failed = failed || t.failed;
  std::ostringstream summary;
  write_trials_csv(summary, report.trials);
  std::cout << summary.str();
  return failed ? 1 : 0;
}

int cmd_evaluate(const Common& c, const std::string& model, const std::string& checkpoint,
                 const std::string& seeds_text) {
  const auto scenario = prepare_scenario(c.scenario, load_data(c));
  const auto eval_seed = evaluation_seed(c.master_seed, *scenario);
  BaseStockPolicy bench(*scenario);
  const double bench_cost = evaluate_policy(bench, scenario, eval_seed).mean_cost;
  std::ostringstream out;
  out << "scenario,policy,seed,mean_cost,std_cost,benchmark_cost,savings\n";
  for (int seed : parse_seeds(seeds_text)) {
    std::string label;
    auto policy = resolve_policy(model, checkpoint, *scenario,
                                 training_seed(c.master_seed, *scenario, ModelKind::kRandom, seed), label);
    const auto r = evaluate_policy(*policy, scenario, eval_seed);
    out << scenario->id << ',' << label << ',' << seed << ',' << fmt(r.mean_cost) << ',' << fmt(r.std_cost)
        << ',' << fmt(bench_cost) << ',' << fmt((bench_cost - r.mean_cost) / bench_cost) << '\n';
  }
  emit(c, "evaluation.csv", out.str());
  return 0;
}

int cmd_policy_map(const Common& c, const std::string& model, const std::string& checkpoint,
                   std::int64_t periods) {
  const auto scenario = prepare_scenario(c.scenario, load_data(c));
  std::string label;
  const auto seed = evaluation_seed(c.master_seed, *scenario);
  auto policy = resolve_policy(model, checkpoint, *scenario, seed, label);
  const auto map = policy_map(scenario, *policy, periods, seed);
  std::ostringstream out;
  write_policy_map_csv(out, map);
  emit(c, scenario->id + "_" + label + ".csv", out.str());
  return 0;
}

int cmd_grid(const Common& c, const std::string& scenarios, const std::string& models, const TrainArgs& a,
             std::int64_t map_periods) {
  require(!c.out.empty(), ErrorKind::kInvalidParameter, "grid needs --out");
  auto options = trial_options(c);
  options.imarl = imarl_options(a);
  options.keep_policy = map_periods > 0;
  if (a.episodes >= 0) options.episodes = a.episodes;
  std::vector<ModelKind> kinds;
  for (const auto& m : split(models, ',')) kinds.push_back(parse_model(m));
  require(!kinds.empty(), ErrorKind::kInvalidParameter, "no models given");
  const auto report = run_grid(parse_scenarios(scenarios), kinds, parse_seeds(a.seeds), options, a.jobs);

  std::map<std::string, PolicyMap> maps;
  if (map_periods > 0) {
    // One map per cell, from the seed with the lowest cost.
    for (const auto& cell : report.cells) {
      const TrialResult* best = nullptr;
      for (const auto& t : report.trials) {
        if (t.scenario != cell.scenario || t.model != cell.model || t.failed || !t.policy) continue;
        if (!best || t.best_cost < best->best_cost) best = &t;
      }
      if (!best) continue;
      auto policy = best->policy->make_policy(*best->resolved);
      maps[cell.scenario + "_" + cell.model] =
          policy_map(best->resolved, *policy, map_periods, evaluation_seed(c.master_seed, *best->resolved));
    }
  }
  export_report(report, c.out, maps);
  std::ostringstream summary;
  summary << "scenario,model,best_cost,mean_cost,benchmark_cost,best_savings,mean_savings\n";
  for (const auto& cell : report.cells) {
    summary << cell.scenario << ',' << cell.model << ',' << fmt(cell.best_cost) << ',' << fmt(cell.mean_cost)
            << ',' << fmt(cell.benchmark_cost) << ',' << fmt(cell.best_savings) << ','
            << fmt(cell.mean_savings) << '\n';
  }
  std::cout << summary.str();
  return 0;
}

void print_error(std::string_view kind, std::string_view message) {
  const nlohmann::json record{{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << record.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-echelon inventory optimization: heuristic benchmark and reinforcement learning"};
  app.require_subcommand(1);
  Common common;
  TrainArgs train;
  std::string checkpoint;
  std::string eval_model = "heuristic";
  std::string scenarios = "all";
  std::string models = "heuristic,random,sarl,marl,imarl";
  std::int64_t periods = kPolicyMapPeriods;
  std::int64_t grid_map_periods = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_scenario) {
    auto* opt = cmd->add_option("--scenario", common.scenario, "Named scenario (A1..D1) or scenario file");
    if (needs_scenario) opt->required();
    cmd->add_option("--data", common.data, "CSV of demand series for empirical scenarios");
    cmd->add_option("--lead-data", common.lead_data, "CSV of lead-time series for empirical scenarios");
    cmd->add_option("--master-seed", common.master_seed, "Master seed for all derived streams");
  };

  auto* heuristic = app.add_subcommand("heuristic", "Base-stock levels and benchmark cost");
  add_common(heuristic, true);
  heuristic->add_option("--out", common.out, "Output directory (default: stdout)");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints, curves and trials");
  add_common(train_cmd, true);
  train_cmd->add_option("--model", train.model, "sarl, marl or imarl")->required();
  train_cmd->add_option("--seeds", train.seeds, "Seeds, e.g. 0 or 0-9 or 1,4");
  train_cmd->add_option("--episodes", train.episodes, "Training episode budget override");
  train_cmd->add_option("--config", common.config, "JSON file overriding training settings");
  train_cmd->add_option("--out", common.out, "Output directory")->required();
  train_cmd->add_option("--imarl-init", train.imarl_init, "heuristic or random");
  train_cmd->add_option("--imarl-order", train.imarl_order, "downstream-up or upstream-down");

  auto* evaluate = app.add_subcommand("evaluate", "Score a policy with the evaluation protocol");
  add_common(evaluate, true);
  evaluate->add_option("--model", eval_model, "heuristic or random (or use --checkpoint)");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint written by train");
  evaluate->add_option("--seeds", train.seeds, "Policy seeds (random policy only)");
  evaluate->add_option("--out", common.out, "Output directory (default: stdout)");

  auto* pmap = app.add_subcommand("policy-map", "Record (IP, order) pairs from a long simulation");
  add_common(pmap, true);
  pmap->add_option("--model", eval_model, "heuristic or random (or use --checkpoint)");
  pmap->add_option("--checkpoint", checkpoint, "Checkpoint written by train");
  pmap->add_option("--periods", periods, "Simulated periods")->check(CLI::PositiveNumber);
  pmap->add_option("--out", common.out, "Output directory (default: stdout)");

  auto* grid = app.add_subcommand("grid", "Run every scenario x model x seed trial and export a report");
  grid->add_option("--scenarios,--scenario", scenarios, "Comma list of scenarios or 'all'");
  grid->add_option("--models,--model", models, "Comma list of models");
  grid->add_option("--seeds", train.seeds, "Seeds, e.g. 0-9")->default_val("0-9");
  grid->add_option("--episodes", train.episodes, "Training episode budget override");
  grid->add_option("--config", common.config, "JSON file overriding training settings");
  grid->add_option("--data", common.data, "CSV of demand series for empirical scenarios");
  grid->add_option("--lead-data", common.lead_data, "CSV of lead-time series for empirical scenarios");
  grid->add_option("--master-seed", common.master_seed, "Master seed for all derived streams");
  grid->add_option("--jobs", train.jobs, "Trials run concurrently")->check(CLI::PositiveNumber);
  grid->add_option("--imarl-init", train.imarl_init, "heuristic or random");
  grid->add_option("--imarl-order", train.imarl_order, "downstream-up or upstream-down");
  grid->add_option("--policy-map-periods", grid_map_periods, "Also export policy maps of this length");
  grid->add_option("--out", common.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*heuristic) return cmd_heuristic(common);
    if (*train_cmd) return cmd_train(common, train);
    if (*evaluate) return cmd_evaluate(common, eval_model, checkpoint, train.seeds);
    if (*pmap) return cmd_policy_map(common, eval_model, checkpoint, periods);
    if (*grid) return cmd_grid(common, scenarios, models, train, grid_map_periods);
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
