#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "meio/network.hpp"
#include "meio/nn.hpp"
#include "meio/rng.hpp"
#include "meio/simulator.hpp"

namespace meio {

// ---------------------------------------------------------------------------
// Gaussian action head

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)

/// Diagonal Gaussian log-density at x.
double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std);
double gaussian_entropy(std::span<const double> log_std);

struct HeadSample {
  std::vector<double> action;     // clamped to [-1, 1]
  std::vector<double> pre_clamp;  // the raw Gaussian draw
  double log_prob = 0.0;          // at pre_clamp
  double entropy = 0.0;
};

/// Samples when `rng` is given, otherwise returns the clamped mean.
HeadSample gaussian_head(std::span<const double> mean, std::span<const double> log_std, Rng* rng);

// ---------------------------------------------------------------------------
// Advantage estimation

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Recursive GAE over one stream. next_values[t] is V(s_{t+1}) evaluated on
/// the observation reached by step t, before any reset; boundary[t] != 0
/// cuts the recursion after t (truncation with bootstrap).
GaeResult gae(std::span<const double> rewards, std::span<const double> values,
              std::span<const double> next_values, std::span<const std::uint8_t> boundary,
              double gamma, double lambda);

/// Shifts and scales in place to mean 0, standard deviation 1.
void normalize_advantages(std::span<double> advantages);

// ---------------------------------------------------------------------------
// Actor-critic layout

/// One decision maker. Its actions are the normalized orders of `actions`;
/// it observes the scaled IPs of `observation` and is rewarded with the
/// negative scaled cost of `reward_scope`.
struct AgentSpec {
  std::vector<NodeId> actions;
  std::vector<NodeId> observation;
  std::vector<NodeId> reward_scope;
  int actor = 0;  // agents with the same actor share its parameters
};

struct ModelSpec {
  int nodes = 0;  // stock points in the environment
  std::vector<int> hidden;
  std::vector<AgentSpec> agents;
  int actor_count = 1;
  std::vector<NodeId> critic_observation;  // critic outputs one value per agent
};

/// Actors (one per actor id) with a state-independent log-std each, plus one
/// critic. All parameters sit in a single flat vector:
/// [actor 0 | log_std 0 | actor 1 | log_std 1 | ... | critic].
class ActorCritic {
 public:
  explicit ActorCritic(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return count_; }
  int agent_count() const { return static_cast<int>(spec_.agents.size()); }
  const Mlp& actor(int k) const { return actors_[static_cast<std::size_t>(k)]; }
  const Mlp& critic() const { return critic_; }
  std::size_t log_std_offset(int k) const { return log_std_offset_[static_cast<std::size_t>(k)]; }
  int action_dim(int k) const { return actors_[static_cast<std::size_t>(k)].outputs(); }
  /// Agents served by actor k, in agent order.
  const std::vector<int>& actor_agents(int k) const { return actor_agents_[static_cast<std::size_t>(k)]; }

  /// Orthogonal weights, zero biases, log-std 0.
  ParamVector initial_parameters(Rng& rng, double actor_output_gain = 0.01) const;

  /// Rows of `global` (nodes x batch) picked by `nodes`.
  static Matrix gather(const Matrix& global, std::span<const NodeId> nodes);
  /// Actor-k input for a batch: agent blocks stacked column-wise in actor_agents(k) order.
  Matrix actor_input(int k, const Matrix& global) const;

  struct Output {
    std::vector<Matrix> mean;  // per agent: action_dim x batch
    Matrix value;              // agents x batch
  };
  Output forward(std::span<const double> params, const Matrix& global_obs) const;
  /// Actor means only, per agent.
  std::vector<Matrix> act_mean(std::span<const double> params, const Matrix& global_obs) const;
  Matrix value(std::span<const double> params, const Matrix& global_obs) const;

 private:
  ModelSpec spec_;
  std::vector<Mlp> actors_;
  std::vector<std::size_t> log_std_offset_;
  std::vector<std::vector<int>> actor_agents_;
  Mlp critic_;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// PPO

struct TrainConfig {
  double learning_rate = 1e-4;
  int num_envs = 4;
  int steps_per_env = 256;
  int epochs = 4;
  int minibatches = 16;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  std::vector<int> hidden{64, 64};
  long episodes = 20000;  // training budget (per iteration for IMARL)
  int eval_every = 100;   // training episodes between evaluations
  double actor_output_gain = 0.01;

  int batch_size() const { return num_envs * steps_per_env; }
};

/// Transitions of one batch, sample index s = t * num_envs + e.
struct RolloutBatch {
  int samples = 0;
  Matrix observations;                   // nodes x samples (scaled IPs)
  std::vector<Matrix> pre_clamp;         // per agent: action_dim x samples
  std::vector<std::vector<double>> log_prob, value, next_value, reward;  // per agent
  std::vector<std::uint8_t> boundary;    // per sample
  std::vector<std::vector<double>> advantage, target;  // per agent
};

/// Fills advantages and return targets, then normalizes advantages over the
/// batch per actor.
void compute_advantages(const ActorCritic& model, RolloutBatch& batch, int num_envs, double gamma,
                        double lambda);

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// Composite clipped PPO loss over the samples in `index` and its exact
/// gradient (written to `grad`, overwritten). Throws ErrorKind::kTraining on a
/// non-finite loss.
LossTerms ppo_loss(const ActorCritic& model, std::span<const double> params,
                   const RolloutBatch& batch, std::span<const int> index, const TrainConfig& config,
                   std::span<double> grad);

/// epochs x minibatches Adam steps on shuffled minibatches.
LossTerms ppo_update(const ActorCritic& model, ParamVector& params, Adam& optimizer,
                     const RolloutBatch& batch, const TrainConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Policies built from networks

/// Deterministic policy: each network writes the clamped means of the stock
/// points its agents control; a base-stock rule covers the rest.
class CompositePolicy final : public Policy {
 public:
  struct Part {
    std::shared_ptr<const ActorCritic> model;
    ParamVector params;
  };

  CompositePolicy(std::vector<Part> parts, std::vector<std::int64_t> base_stock,
                  std::vector<std::int64_t> o_max);

  void act(const ObservationBatch& obs, std::span<double> actions) override;

 private:
  std::vector<Part> parts_;
  std::vector<std::int64_t> base_stock_;
  std::vector<std::int64_t> o_max_;
};

struct CurvePoint {
  long episode = 0;
  double mean_cost = 0.0;
  double std_cost = 0.0;
};

struct PpoRunOptions {
  TrainConfig config;
  /// Acts for the stock points no agent controls; may be null when agents
  /// cover the whole network.
  Policy* background = nullptr;
  /// Lower is better; defaults to the total mean cost.
  std::function<double(const EvaluationResult&)> score;
  std::uint64_t eval_seed = 0;
};

struct PpoRunResult {
  ParamVector best_params;
  double best_score = 0.0;
  EvaluationResult best_eval;
  bool evaluated = false;
  std::vector<CurvePoint> curve;
  long episodes = 0;
  bool diverged = false;
  std::string diagnostics;
};

/// Trains `model` from `params` on `scenario` for config.episodes training
/// episodes, evaluating the deterministic policy every config.eval_every
/// episodes under the scenario's evaluation protocol and seed eval_seed.
PpoRunResult run_ppo(std::shared_ptr<const ActorCritic> model, ParamVector params,
                     std::shared_ptr<const ScenarioConfig> scenario, const PpoRunOptions& options,
                     std::uint64_t seed);

}  // namespace meio
