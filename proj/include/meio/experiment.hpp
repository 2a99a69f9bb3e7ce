#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meio/network.hpp"
#include "meio/simulator.hpp"
#include "meio/training.hpp"

namespace meio {

struct TrialOptions {
  std::uint64_t master_seed = 0;
  DataSource data;
  std::optional<std::string> config_json;  // overrides on top of the per-model defaults
  std::optional<long> episodes;            // overrides the training budget
  ImarlOptions imarl;
  bool keep_policy = false;                // keep the trained policy in the result
};

struct TrialResult {
  std::string scenario;
  std::string model;
  int seed = 0;
  double best_cost = 0.0;       // min over the curve (cost orientation)
  double benchmark_cost = 0.0;  // heuristic under the same evaluation seed
  long episodes = 0;
  bool diverged = false;
  bool failed = false;
  std::string error;
  std::vector<CurvePoint> curve;
  double wall_clock_s = 0.0;  // not exported to the deterministic files
  std::optional<TrainedPolicy> policy;
  std::shared_ptr<const ScenarioConfig> resolved;  // scenario with base-stock levels

  double savings() const { return (benchmark_cost - best_cost) / benchmark_cost; }
};

/// Scenario with heuristic base-stock levels attached, as used by training.
std::shared_ptr<const ScenarioConfig> prepare_scenario(const std::string& id, const DataSource& data);

/// Evaluation stream shared by every trial of one scenario, so all models and
/// seeds are scored on common random numbers.
std::uint64_t evaluation_seed(std::uint64_t master_seed, const ScenarioConfig& scenario);
/// Training stream of one (scenario, model, seed) trial.
std::uint64_t training_seed(std::uint64_t master_seed, const ScenarioConfig& scenario, ModelKind model,
                            int seed);

TrainConfig resolve_train_config(ModelKind model, const ScenarioConfig& scenario,
                                 const TrialOptions& options);

/// Trains (or, for heuristic and random, only evaluates) one trial. Failures
/// are captured in the result instead of thrown.
TrialResult run_trial(const std::string& scenario, ModelKind model, int seed, const TrialOptions& options);

struct CellSummary {
  std::string scenario;
  std::string model;
  double best_cost = 0.0;
  double mean_cost = 0.0;
  double benchmark_cost = 0.0;
  double best_savings = 0.0;
  double mean_savings = 0.0;
  int trials = 0;
  int failed = 0;
};

struct EvalReport {
  std::vector<std::string> scenarios;
  std::vector<std::string> models;
  std::vector<TrialResult> trials;
  std::vector<CellSummary> cells;  // scenario-major, then model

  const CellSummary* cell(const std::string& scenario, const std::string& model) const;
};

/// Pure aggregation over trial results; scenario and model order follow
/// first appearance.
EvalReport aggregate(std::vector<TrialResult> trials);

/// Runs every (scenario, model, seed) combination, `jobs` trials at a time.
EvalReport run_grid(const std::vector<std::string>& scenarios, const std::vector<ModelKind>& models,
                    const std::vector<int>& seeds, const TrialOptions& options, int jobs = 1);

struct PolicyMapRow {
  std::int64_t period = 0;
  NodeId stock_point = 0;
  std::int64_t ip = 0;
  std::int64_t order = 0;
};

struct PolicyMap {
  std::vector<std::string> names;
  std::vector<PolicyMapRow> rows;
};

inline constexpr std::int64_t kPolicyMapPeriods = 100000;

/// One continuous deterministic simulation recording (IP, order) for every
/// stock point and period.
PolicyMap policy_map(std::shared_ptr<const ScenarioConfig> scenario, Policy& policy,
                     std::int64_t periods, std::uint64_t seed);

void write_policy_map_csv(std::ostream& out, const PolicyMap& map);

/// Mean order per equal-width IP bin over the [lo, hi] quantile range of the
/// IPs visited by `stock_point`. Empty bins are dropped.
struct OrderBin {
  double ip_lo = 0.0, ip_hi = 0.0;
  double mean_order = 0.0;
  long count = 0;
};
std::vector<OrderBin> binned_order_profile(const PolicyMap& map, NodeId stock_point, int bins,
                                           double lo_quantile = 0.1, double hi_quantile = 0.9);

/// Writes grid_best.csv, grid_mean.csv, cells.csv, trials.csv, timing.csv,
/// curves/*.csv and README.md under `dir`. Policy maps go to
/// policy_maps/<name>.csv.
void export_report(const EvalReport& report, const std::filesystem::path& dir,
                   const std::map<std::string, PolicyMap>& policy_maps = {});

void write_trials_csv(std::ostream& out, const std::vector<TrialResult>& trials);
/// Inverse of write_trials_csv (curves and policies are not part of it).
std::vector<TrialResult> read_trials_csv(std::istream& in);
void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);
std::vector<CurvePoint> read_curve_csv(std::istream& in);
/// Reloads trials.csv and the curves of an exported report and re-aggregates.
EvalReport load_report(const std::filesystem::path& dir);

std::string curve_file_name(const TrialResult& trial);

}  // namespace meio
