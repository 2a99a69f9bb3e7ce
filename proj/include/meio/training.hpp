#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meio/network.hpp"
#include "meio/ppo.hpp"

namespace meio {

enum class ModelKind { kSarl, kMarl, kImarl, kHeuristic, kRandom };

std::string_view to_string(ModelKind kind);
ModelKind parse_model(std::string_view text);

/// Hyperparameters for a model on a scenario: shared PPO settings, network
/// width and the training-episode budget.
TrainConfig default_train_config(ModelKind model, std::string_view scenario_id);
/// Overrides fields of `base` from a JSON object; unknown keys are rejected.
TrainConfig train_config_from_json(std::string_view text, TrainConfig base);
std::string train_config_to_json(const TrainConfig& config);

/// One central agent observing and ordering for every stock point.
ModelSpec sarl_spec(const NetworkTopology& topology, std::vector<int> hidden);
/// One agent per stock point; retailers share actor 0, every other stock
/// point has its own actor; one critic over all IPs with a value per agent.
ModelSpec mappo_spec(const NetworkTopology& topology, std::vector<int> hidden);
/// Agent for stock point p: observes and is charged for p and everything
/// downstream of it; its critic sees the same slice.
ModelSpec imarl_agent_spec(const NetworkTopology& topology, NodeId p, std::vector<int> hidden);

/// A deployable policy: networks for the stock points they control and
/// order-up-to levels for the rest.
struct TrainedPolicy {
  struct Network {
    ModelSpec spec;
    ParamVector params;
  };
  std::string model;
  std::vector<Network> networks;
  std::vector<std::int64_t> base_stock;  // empty when networks cover everything

  std::unique_ptr<Policy> make_policy(const ScenarioConfig& scenario) const;
};

struct ImarlIteration {
  int index = 0;
  NodeId agent = 0;
  long episodes = 0;          // training episodes spent in this iteration
  double saved_scope = 0.0;   // saved ensemble, agent's own scope
  double saved_total = 0.0;
  double candidate_scope = 0.0;
  double candidate_total = 0.0;
  bool accepted = false;
  bool diverged = false;
  std::vector<NodeId> enqueued;
};

struct TrainOutcome {
  TrainedPolicy policy;
  std::vector<CurvePoint> curve;
  double best_cost = 0.0;
  EvaluationResult best_eval;
  long episodes = 0;
  bool diverged = false;
  bool converged = true;  // IMARL: job list emptied before any agent hit its cap
  std::string diagnostics;
  std::vector<ImarlIteration> log;
};

/// The scenario must carry base-stock levels (used for resets and scaling).
/// `seed` drives initialization, rollouts and minibatch order; every
/// evaluation uses `eval_seed`, so runs sharing it are scored on common
/// random numbers.
TrainOutcome train_sarl(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                        std::uint64_t seed, std::uint64_t eval_seed);
TrainOutcome train_mappo(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                         std::uint64_t seed, std::uint64_t eval_seed);

enum class ImarlInit { kHeuristic, kRandom };
enum class ImarlOrder { kDownstreamUp, kUpstreamDown };

struct ImarlOptions {
  ImarlInit init = ImarlInit::kHeuristic;
  ImarlOrder order = ImarlOrder::kDownstreamUp;
  int max_iterations_per_agent = 20;
  double tolerance = 0.001;  // relative own-scope improvement required to accept
};

/// Iterative scheme: agents train one at a time against the deterministic
/// saved policies of the others; a candidate replaces the saved policy only
/// if it lowers the agent's own-scope cost by the tolerance without raising
/// the total cost (same evaluation seed), after which the agent's suppliers
/// and customers are queued again. The curve holds the saved ensemble's cost
/// at episode 0 and after every iteration.
TrainOutcome train_imarl(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                         std::uint64_t seed, std::uint64_t eval_seed, const ImarlOptions& options = {});

/// Hash of everything that shapes a trained policy.
std::string config_hash(const ScenarioConfig& scenario, const TrainConfig& config,
                        std::string_view model);

void save_checkpoint(std::ostream& out, const TrainedPolicy& policy, std::string_view hash);
/// Throws ErrorKind::kIo on malformed input and, when `expected_hash` is not
/// empty, ErrorKind::kConfiguration on a hash mismatch.
TrainedPolicy load_checkpoint(std::istream& in, std::string_view expected_hash = {});

}  // namespace meio
