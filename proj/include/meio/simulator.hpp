#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "meio/network.hpp"
#include "meio/rng.hpp"

namespace meio {

/// Ledger of one stock point. Customer slots list the internal customers in
/// outbound-edge order, followed by the external customer for retailers.
struct NodeState {
  std::int64_t on_hand = 0;                 // I^end of the last processed period
  std::int64_t on_order = 0;                // ordered by this node, not yet arrived
  std::vector<std::int64_t> backorders;     // owed per customer slot
  std::vector<std::int64_t> open_orders;    // received last period, per customer slot
  std::vector<std::int64_t> pipeline;       // [inbound slot * horizon + period % horizon]
};

struct SimState {
  std::int64_t period = 0;
  std::vector<NodeState> nodes;
  std::vector<std::int64_t> external_open;  // per edge index; only external edges used
};

/// Per-step diagnostics. Costs are unscaled.
struct StepInfo {
  double cost = 0.0;
  std::vector<double> node_cost;       // h * on_hand + b * external backlog, per node
  std::vector<std::int64_t> orders;    // raw order placed per node this period
  std::int64_t external_injection = 0; // units shipped by the outside source
  std::int64_t external_shipped = 0;   // units shipped to external customers
  bool action_clamped = false;
};

/// Source of the exogenous draws of one period. The RNG-backed default is
/// used for simulation; tests script these values.
class Exogenous {
 public:
  virtual ~Exogenous() = default;
  virtual std::int64_t demand(NodeId retailer) = 0;
  virtual std::int64_t lead(int edge) = 0;
  virtual int choose_supplier(NodeId p, int supplier_count) = 0;
};

class RandomExogenous final : public Exogenous {
 public:
  RandomExogenous(const ScenarioConfig& scenario, Rng& rng);
  std::int64_t demand(NodeId retailer) override;
  std::int64_t lead(int edge) override;
  int choose_supplier(NodeId p, int supplier_count) override;

 private:
  const ScenarioConfig& scenario_;
  std::vector<const Pmf*> edge_lead_;
  Rng& rng_;
};

/// Maps a normalized action in [-1, 1] to an integer order in [0, o_max].
std::int64_t decode_order(double normalized, std::int64_t o_max);
double encode_order(std::int64_t raw, std::int64_t o_max);
/// Scales an inventory position onto [-1, 1] using [ip_min, ip_max].
double scale_ip(std::int64_t ip, std::int64_t ip_min, std::int64_t ip_max);

inline constexpr double kRewardScale = 1000.0;

/// The inventory MDP. One instance is driven by one caller at a time.
class Environment {
 public:
  explicit Environment(std::shared_ptr<const ScenarioConfig> scenario);

  const ScenarioConfig& scenario() const { return *scenario_; }
  int size() const { return scenario_->size(); }

  /// Starts an episode with on-hand equal to the base-stock levels and every
  /// order, backorder and shipment cleared.
  void reset();
  void reset(std::span<const std::int64_t> initial_on_hand);

  /// Advances one period with a normalized action vector; returns the reward
  /// -cost / 1000.
  double step(std::span<const double> normalized_action, Rng& rng);
  double step(std::span<const double> normalized_action, Exogenous& draws);
  /// Same with raw integer orders (clamped to [0, o_max]).
  double step_raw(std::span<const std::int64_t> orders, Exogenous& draws);

  std::int64_t inventory_position(NodeId p) const;
  void observe(std::span<std::int64_t> ip) const;
  void observe_scaled(std::span<double> scaled) const;

  const StepInfo& info() const { return info_; }
  const SimState& state() const { return state_; }
  /// Direct state access for tests and tooling.
  SimState& mutable_state() { return state_; }

  /// Customer slot of customer `d` at supplier `p`; the external customer of
  /// a retailer is slot 0.
  int customer_slot(NodeId p, NodeId d) const;
  int external_slot(NodeId p) const;
  int horizon() const { return horizon_; }
  std::int64_t in_transit() const;
  std::int64_t in_transit_to(NodeId p) const;

 private:
  void receive();
  void fulfil(std::span<const std::int64_t> ip_snapshot, Exogenous& draws);
  void place_orders(std::span<const std::int64_t> orders, Exogenous& draws);

  std::shared_ptr<const ScenarioConfig> scenario_;
  int horizon_ = 2;
  std::vector<std::vector<NodeId>> slot_customer_;  // per node; -1 = external customer
  std::vector<std::vector<int>> slot_edge_;         // per node; outbound edge per slot (-1 external)
  std::vector<int> edge_inbound_slot_;              // edge -> position in receiver's inbound list
  SimState state_;
  StepInfo info_;
  std::vector<std::int64_t> ip_buffer_;
  std::vector<std::int64_t> order_buffer_;
  std::vector<int> rank_buffer_;
};

// ---------------------------------------------------------------------------

/// Observations for a batch of environments, environment-major:
/// element (node, env) lives at env * nodes + node.
struct ObservationBatch {
  int nodes = 0;
  int envs = 0;
  std::vector<std::int64_t> ip;
  std::vector<double> scaled;
};

/// Deterministic or stochastic decision rule over a batch of environments.
/// Writes normalized actions in the same layout as the observations.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void act(const ObservationBatch& obs, std::span<double> actions) = 0;
};

struct EvaluationResult {
  double mean_cost = 0.0;
  double std_cost = 0.0;
  std::vector<double> episode_costs;
  std::vector<double> node_mean_cost;  // per node, mean over episodes of the scored-window sum

  double scope_cost(std::span<const NodeId> nodes) const;
};

/// Runs `episodes` episodes of `steps` periods from reset and scores the sum
/// of unscaled costs over the periods after `warmup`. Episode e draws from a
/// stream derived from (seed, e), so two policies evaluated with the same
/// seed see common random numbers.
EvaluationResult evaluate_policy(Policy& policy, std::shared_ptr<const ScenarioConfig> scenario,
                                 int episodes, int steps, int warmup, std::uint64_t seed);
EvaluationResult evaluate_policy(Policy& policy, std::shared_ptr<const ScenarioConfig> scenario,
                                 std::uint64_t seed);

struct TrajectoryRow {
  std::int64_t period = 0;
  NodeId stock_point = 0;
  std::int64_t on_hand = 0;
  std::int64_t ip = 0;            // observed before the decision
  std::int64_t order_placed = 0;
  std::int64_t backlog = 0;       // total backorders owed after fulfilment
  double cost = 0.0;
};

/// One continuous simulation from reset, recording a row per period and
/// stock point.
std::vector<TrajectoryRow> simulate_trajectory(Policy& policy,
                                               std::shared_ptr<const ScenarioConfig> scenario,
                                               std::int64_t periods, std::uint64_t seed);

void write_trajectory_csv(std::ostream& out, const ScenarioConfig& scenario,
                          std::span<const TrajectoryRow> rows);

/// Uniformly random normalized actions, the untrained baseline.
class RandomPolicy final : public Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed) {}
  void act(const ObservationBatch& obs, std::span<double> actions) override;

 private:
  Rng rng_;
};

}  // namespace meio
