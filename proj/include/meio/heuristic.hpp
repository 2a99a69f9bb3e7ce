#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "meio/distributions.hpp"
#include "meio/network.hpp"
#include "meio/simulator.hpp"

namespace meio {

/// A serial chain cut out of the network. Stage 0 is the retailer, the last
/// stage is supplied by the outside source.
struct SerialSystem {
  std::vector<NodeId> path;           // stock point per stage, downstream first
  std::vector<Pmf> effective_lead;    // shipping lead (+1 processing period) per stage
  std::vector<double> echelon_h;      // echelon holding cost per stage
  Pmf demand;                         // per-period retailer demand
  double b = 0.0;
  /// Probability that an order from the retailer flows through this exact
  /// path under uniform random supplier choice.
  double routing_weight = 1.0;

  std::size_t stages() const { return path.size(); }
};

struct BaseStockSolution {
  std::vector<std::int64_t> echelon_level;
  std::vector<std::int64_t> installation_level;
  std::vector<double> expected_backorders;
};

/// Echelon cost of stage j = local_h[j] - local_h[j+1]; local costs must
/// strictly decrease upstream.
std::vector<double> echelon_holding_costs(std::span<const double> local_h);

/// Newsvendor-bound heuristic for a serial system: per stage the midpoint of
/// two fractiles of the echelon lead-time demand.
BaseStockSolution shang_song_serial(const SerialSystem& system);

/// Shipping lead of p (uniform mixture over its inbound edges, zero treated
/// as one) convolved with the one-period order processing delay.
Pmf effective_lead(const ScenarioConfig& scenario, NodeId p);

/// One serial system per (retailer, supply path to the outside source).
std::vector<SerialSystem> decompose(const ScenarioConfig& scenario);

/// Per-period order stream arriving at stock point u under base-stock
/// operation: convolution of the thinned order streams of its customers.
Pmf upstream_demand_pmf(const ScenarioConfig& scenario, NodeId u);

/// Demand over p's own effective replenishment lead.
Pmf lead_time_demand(const ScenarioConfig& scenario, NodeId p);

/// Smallest S >= 0 minimizing |E[(X - S)^+] - target|.
std::int64_t match_shortfall(const Pmf& lead_time_demand, double target);

struct MatchedLevels {
  std::vector<std::int64_t> installation_level;  // per stock point
  std::vector<std::int64_t> echelon_level;       // per stock point, max over its serial stages
  std::vector<double> target_backorders;         // per stock point
  std::vector<double> expected_backorders;       // at the chosen level
};

/// Recombines serial solutions: retailers keep their serial level, shared
/// stock points match the summed expected backorders of their counterparts.
MatchedLevels backorder_match(const ScenarioConfig& scenario, std::span<const SerialSystem> systems,
                              std::span<const BaseStockSolution> solutions);

/// Order-up-to rule: order clamp(bsl - IP, 0, o_max).
class BaseStockPolicy final : public Policy {
 public:
  BaseStockPolicy(std::vector<std::int64_t> bsl, std::vector<std::int64_t> o_max);
  explicit BaseStockPolicy(const ScenarioConfig& scenario);

  void act(const ObservationBatch& obs, std::span<double> actions) override;
  std::int64_t raw_order(NodeId p, std::int64_t ip) const;

 private:
  std::vector<std::int64_t> bsl_;
  std::vector<std::int64_t> o_max_;
};

struct HeuristicResult {
  std::vector<SerialSystem> systems;
  std::vector<BaseStockSolution> solutions;
  MatchedLevels levels;
  std::vector<std::int64_t> bsl;
  EvaluationResult benchmark;
  double benchmark_cost = 0.0;
};

/// decompose -> shang_song_serial -> backorder_match, then scores the
/// resulting base-stock policy with the scenario's evaluation protocol.
/// Refuses (ErrorKind::kValidation) when the preconditions do not hold.
HeuristicResult da_heuristic(const ScenarioConfig& scenario, std::uint64_t eval_seed);

/// Levels only, no evaluation run.
std::vector<std::int64_t> da_base_stock_levels(const ScenarioConfig& scenario);

}  // namespace meio
