#include "meio/training.hpp"

#include <algorithm>
#include <deque>
#include <istream>
#include <limits>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "meio/error.hpp"

namespace meio {

using nlohmann::json;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kSarl: return "sarl";
    case ModelKind::kMarl: return "marl";
    case ModelKind::kImarl: return "imarl";
    case ModelKind::kHeuristic: return "heuristic";
    case ModelKind::kRandom: return "random";
  }
  return "unknown";
}

ModelKind parse_model(std::string_view text) {
  for (auto k : {ModelKind::kSarl, ModelKind::kMarl, ModelKind::kImarl, ModelKind::kHeuristic,
                 ModelKind::kRandom}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorKind::kInvalidParameter,
       "unknown model '" + std::string(text) + "' (expected sarl, marl, imarl, heuristic or random)");
}

TrainConfig default_train_config(ModelKind model, std::string_view scenario_id) {
  TrainConfig c;
  switch (model) {
    case ModelKind::kSarl: {
      c.hidden = {256, 256};
      static const std::map<std::string, long, std::less<>> budget{
          {"A1", 25000},  {"A2", 25000},  {"A3", 75000},  {"A4", 75000},  {"B1", 75000},
          {"B2", 75000},  {"B3", 150000}, {"B4", 150000}, {"C1", 75000},  {"C2", 75000},
          {"C3", 150000}, {"C4", 150000}, {"D1", 300000}};
      const auto it = budget.find(scenario_id);
      c.episodes = it == budget.end() ? 25000 : it->second;
      break;
    }
    case ModelKind::kMarl: c.episodes = 20000; break;
    case ModelKind::kImarl: c.episodes = 25000; break;
    case ModelKind::kHeuristic:
    case ModelKind::kRandom: c.episodes = 0; break;
  }
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"learning_rate", c.learning_rate}, {"num_envs", c.num_envs},
         {"steps_per_env", c.steps_per_env}, {"epochs", c.epochs},
         {"minibatches", c.minibatches},     {"gamma", c.gamma},
         {"gae_lambda", c.gae_lambda},       {"clip", c.clip},
         {"entropy_coef", c.entropy_coef},   {"value_coef", c.value_coef},
         {"max_grad_norm", c.max_grad_norm}, {"hidden", c.hidden},
         {"episodes", c.episodes},           {"eval_every", c.eval_every},
         {"actor_output_gain", c.actor_output_gain}};
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfiguration, std::string("training config is not valid JSON: ") + e.what());
  }
  if (j.contains("training")) j = j.at("training");
  require(j.is_object(), ErrorKind::kConfiguration, "training config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "num_envs") c.num_envs = value.get<int>();
      else if (key == "steps_per_env") c.steps_per_env = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "minibatches") c.minibatches = value.get<int>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "gae_lambda") c.gae_lambda = value.get<double>();
      else if (key == "clip") c.clip = value.get<double>();
      else if (key == "entropy_coef") c.entropy_coef = value.get<double>();
      else if (key == "value_coef") c.value_coef = value.get<double>();
      else if (key == "max_grad_norm") c.max_grad_norm = value.get<double>();
      else if (key == "hidden") c.hidden = value.get<std::vector<int>>();
      else if (key == "episodes") c.episodes = value.get<long>();
      else if (key == "eval_every") c.eval_every = value.get<int>();
      else if (key == "actor_output_gain") c.actor_output_gain = value.get<double>();
      else fail(ErrorKind::kConfiguration, "unknown training config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfiguration, std::string("bad training config value: ") + e.what());
  }
  require(c.num_envs > 0 && c.steps_per_env > 0 && c.epochs > 0 && c.minibatches > 0,
          ErrorKind::kConfiguration, "rollout and update counts must be positive");
  require(c.batch_size() % c.minibatches == 0, ErrorKind::kConfiguration,
          "batch size must be a multiple of the minibatch count");
  require(c.eval_every > 0 && c.episodes >= 0, ErrorKind::kConfiguration,
          "episode budget and evaluation cadence must be non-negative");
  return c;
}

// ---------------------------------------------------------------------------

ModelSpec sarl_spec(const NetworkTopology& topology, std::vector<int> hidden) {
  ModelSpec spec;
  spec.nodes = topology.size();
  spec.hidden = std::move(hidden);
  std::vector<NodeId> all(static_cast<std::size_t>(spec.nodes));
  for (NodeId p = 0; p < spec.nodes; ++p) all[static_cast<std::size_t>(p)] = p;
  spec.agents.push_back({all, all, all, 0});
  spec.actor_count = 1;
  spec.critic_observation = all;
  return spec;
}

ModelSpec mappo_spec(const NetworkTopology& topology, std::vector<int> hidden) {
  ModelSpec spec;
  spec.nodes = topology.size();
  spec.hidden = std::move(hidden);
  std::vector<NodeId> all(static_cast<std::size_t>(spec.nodes));
  for (NodeId p = 0; p < spec.nodes; ++p) all[static_cast<std::size_t>(p)] = p;
  int next_actor = 1;
  for (NodeId p = 0; p < spec.nodes; ++p) {
    if (topology.is_retailer(p)) spec.agents.push_back({{p}, {p}, {p}, 0});
    else spec.agents.push_back({{p}, {p}, all, next_actor++});
  }
  spec.actor_count = next_actor;
  spec.critic_observation = all;
  return spec;
}

ModelSpec imarl_agent_spec(const NetworkTopology& topology, NodeId p, std::vector<int> hidden) {
  ModelSpec spec;
  spec.nodes = topology.size();
  spec.hidden = std::move(hidden);
  std::vector<NodeId> scope = topology.descendants(p);
  scope.push_back(p);
  std::sort(scope.begin(), scope.end());
  spec.agents.push_back({{p}, scope, scope, 0});
  spec.actor_count = 1;
  spec.critic_observation = scope;
  return spec;
}

std::unique_ptr<Policy> TrainedPolicy::make_policy(const ScenarioConfig& scenario) const {
  std::vector<CompositePolicy::Part> parts;
  for (const auto& net : networks) {
    require(net.spec.nodes == scenario.size(), ErrorKind::kConfiguration,
            "policy was trained on a network of a different size");
    parts.push_back({std::make_shared<const ActorCritic>(net.spec), net.params});
  }
  std::vector<std::int64_t> o_max;
  for (const auto& sp : scenario.params) o_max.push_back(sp.o_max);
  require(base_stock.empty() || static_cast<int>(base_stock.size()) == scenario.size(),
          ErrorKind::kConfiguration, "policy base-stock map does not match the scenario");
  return std::make_unique<CompositePolicy>(std::move(parts), base_stock, std::move(o_max));
}

// ---------------------------------------------------------------------------

namespace {

void require_trainable(const ScenarioConfig& scenario) {
  require(scenario.has_base_stock(), ErrorKind::kConfiguration,
          "training needs base-stock levels for episode resets");
}

constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kPpoStream = 20;

TrainOutcome train_single_model(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                                std::uint64_t seed, std::uint64_t eval_seed, ModelSpec spec,
                                std::string model_name) {
  require_trainable(*scenario);
  auto model = std::make_shared<const ActorCritic>(std::move(spec));
  Rng init(derive_seed(seed, {kInitStream}));
  auto params = model->initial_parameters(init, config.actor_output_gain);

  PpoRunOptions options;
  options.config = config;
  options.eval_seed = eval_seed;
  auto run = run_ppo(model, params, scenario, options, derive_seed(seed, {kPpoStream}));

  TrainOutcome out;
  out.policy.model = std::move(model_name);
  out.policy.networks.push_back({model->spec(), run.best_params});
  out.curve = std::move(run.curve);
  out.episodes = run.episodes;
  out.diverged = run.diverged;
  out.diagnostics = std::move(run.diagnostics);
  if (run.evaluated) {
    out.best_cost = run.best_score;
    out.best_eval = std::move(run.best_eval);
  } else {
    auto policy = out.policy.make_policy(*scenario);
    out.best_eval = evaluate_policy(*policy, scenario, options.eval_seed);
    out.best_cost = out.best_eval.mean_cost;
  }
  return out;
}

}  // namespace

TrainOutcome train_sarl(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                        std::uint64_t seed, std::uint64_t eval_seed) {
  return train_single_model(scenario, config, seed, eval_seed, sarl_spec(scenario->topology, config.hidden), "sarl");
}

TrainOutcome train_mappo(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                         std::uint64_t seed, std::uint64_t eval_seed) {
  return train_single_model(scenario, config, seed, eval_seed, mappo_spec(scenario->topology, config.hidden), "marl");
}

TrainOutcome train_imarl(std::shared_ptr<const ScenarioConfig> scenario, const TrainConfig& config,
                         std::uint64_t seed, std::uint64_t eval_seed, const ImarlOptions& options) {
  require_trainable(*scenario);
  require(options.max_iterations_per_agent > 0, ErrorKind::kInvalidParameter,
          "iteration cap must be positive");
  require(options.tolerance >= 0.0, ErrorKind::kInvalidParameter, "tolerance must be non-negative");
  const auto& topo = scenario->topology;
  const int n = topo.size();
  const auto bsl = scenario->base_stock();
  std::vector<std::int64_t> o_max;
  for (const auto& sp : scenario->params) o_max.push_back(sp.o_max);

  std::vector<std::shared_ptr<const ActorCritic>> models;
  std::vector<std::vector<NodeId>> scope;
  std::vector<std::optional<ParamVector>> saved(static_cast<std::size_t>(n));
  for (NodeId p = 0; p < n; ++p) {
    models.push_back(std::make_shared<const ActorCritic>(imarl_agent_spec(topo, p, config.hidden)));
    scope.push_back(models.back()->spec().agents.front().reward_scope);
    if (options.init == ImarlInit::kRandom) {
      Rng init(derive_seed(seed, {kInitStream, static_cast<std::uint64_t>(p)}));
      saved[static_cast<std::size_t>(p)] = models.back()->initial_parameters(init, config.actor_output_gain);
    }
  }

  auto ensemble = [&](NodeId skip) {
    std::vector<CompositePolicy::Part> parts;
    for (NodeId q = 0; q < n; ++q) {
      if (q != skip && saved[static_cast<std::size_t>(q)])
        parts.push_back({models[static_cast<std::size_t>(q)], *saved[static_cast<std::size_t>(q)]});
    }
    return CompositePolicy(std::move(parts), bsl, o_max);
  };

  TrainOutcome out;
  EvaluationResult current;
  {
    auto policy = ensemble(-1);
    current = evaluate_policy(policy, scenario, eval_seed);
  }
  out.curve.push_back({0, current.mean_cost, current.std_cost});

  std::vector<NodeId> order(static_cast<std::size_t>(n));
  for (NodeId p = 0; p < n; ++p) order[static_cast<std::size_t>(p)] = p;
  std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    return options.order == ImarlOrder::kDownstreamUp ? topo.echelon(a) < topo.echelon(b)
                                                      : topo.echelon(a) > topo.echelon(b);
  });
  std::deque<NodeId> jobs(order.begin(), order.end());
  std::vector<char> queued(static_cast<std::size_t>(n), 1);
  std::vector<int> iterations(static_cast<std::size_t>(n), 0);

  int index = 0;
  while (!jobs.empty()) {
    const NodeId p = jobs.front();
    jobs.pop_front();
    const auto pi = static_cast<std::size_t>(p);
    queued[pi] = 0;
    if (iterations[pi] >= options.max_iterations_per_agent) {
      out.converged = false;
      continue;
    }
    ++iterations[pi];

    ImarlIteration it;
    it.index = index;
    it.agent = p;
    it.saved_scope = current.scope_cost(scope[pi]);
    it.saved_total = current.mean_cost;

    auto background = ensemble(p);
    ParamVector start;
    if (saved[pi]) {
      start = *saved[pi];
    } else {
      Rng init(derive_seed(seed, {kInitStream, pi, static_cast<std::uint64_t>(index)}));
      start = models[pi]->initial_parameters(init, config.actor_output_gain);
    }
    PpoRunOptions ppo;
    ppo.config = config;
    ppo.background = &background;
    ppo.eval_seed = eval_seed;
    const double total_cap = it.saved_total;
    const auto& own = scope[pi];
    ppo.score = [total_cap, &own](const EvaluationResult& r) {
      return r.mean_cost <= total_cap ? r.scope_cost(own) : std::numeric_limits<double>::infinity();
    };
    auto run = run_ppo(models[pi], std::move(start), scenario, ppo,
                       derive_seed(seed, {kPpoStream, static_cast<std::uint64_t>(index)}));
    it.episodes = run.episodes;
    it.diverged = run.diverged;
    out.episodes += run.episodes;
    if (run.diverged) {
      out.diverged = true;
      out.diagnostics = run.diagnostics;
    }
    if (run.evaluated) {
      it.candidate_scope = run.best_eval.scope_cost(own);
      it.candidate_total = run.best_eval.mean_cost;
      it.accepted = it.candidate_scope < it.saved_scope * (1.0 - options.tolerance) &&
                    it.candidate_total <= it.saved_total;
    }
    if (it.accepted) {
      saved[pi] = std::move(run.best_params);
      current = std::move(run.best_eval);
      for (NodeId q : topo.neighbours(p)) {
        if (!queued[static_cast<std::size_t>(q)]) {
          jobs.push_back(q);
          queued[static_cast<std::size_t>(q)] = 1;
          it.enqueued.push_back(q);
        }
      }
    }
    out.log.push_back(std::move(it));
    out.curve.push_back({out.episodes, current.mean_cost, current.std_cost});
    ++index;
  }

  out.policy.model = "imarl";
  out.policy.base_stock = bsl;
  for (NodeId p = 0; p < n; ++p) {
    if (saved[static_cast<std::size_t>(p)])
      out.policy.networks.push_back({models[static_cast<std::size_t>(p)]->spec(), *saved[static_cast<std::size_t>(p)]});
  }
  out.best_cost = current.mean_cost;
  out.best_eval = std::move(current);
  return out;
}

// ---------------------------------------------------------------------------

std::string config_hash(const ScenarioConfig& scenario, const TrainConfig& config,
                        std::string_view model) {
  std::string key = scenario.id + "|" + scenario.topology_hash + "|" + std::string(model) + "|" +
                    train_config_to_json(config) + "|";
  for (const auto& sp : scenario.params) key += std::to_string(sp.bsl.value_or(-1)) + ",";
  return fnv1a_hex(key);
}

namespace {

ParamVector to_params(const std::vector<double>& v) { return ParamVector(v.begin(), v.end()); }


constexpr std::string_view kCheckpointFormat = "meio-policy";
constexpr int kCheckpointVersion = 1;

json spec_to_json(const ModelSpec& s) {
  json agents = json::array();
  for (const auto& a : s.agents) {
    agents.push_back({{"actions", a.actions},
                      {"observation", a.observation},
                      {"reward_scope", a.reward_scope},
                      {"actor", a.actor}});
  }
  return {{"nodes", s.nodes},
          {"hidden", s.hidden},
          {"actor_count", s.actor_count},
          {"critic_observation", s.critic_observation},
          {"agents", agents}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.nodes = j.at("nodes").get<int>();
  s.hidden = j.at("hidden").get<std::vector<int>>();
  s.actor_count = j.at("actor_count").get<int>();
  s.critic_observation = j.at("critic_observation").get<std::vector<NodeId>>();
  for (const auto& a : j.at("agents")) {
    s.agents.push_back({a.at("actions").get<std::vector<NodeId>>(),
                        a.at("observation").get<std::vector<NodeId>>(),
                        a.at("reward_scope").get<std::vector<NodeId>>(), a.at("actor").get<int>()});
  }
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const TrainedPolicy& policy, std::string_view hash) {
  json nets = json::array();
  for (const auto& net : policy.networks)
    nets.push_back({{"spec", spec_to_json(net.spec)}, {"params", std::vector<double>(net.params.begin(), net.params.end())}});
  const json doc{{"format", kCheckpointFormat},
                 {"version", kCheckpointVersion},
                 {"config_hash", hash},
                 {"model", policy.model},
                 {"base_stock", policy.base_stock},
                 {"networks", nets}};
  out << doc.dump() << '\n';
  require(static_cast<bool>(out), ErrorKind::kIo, "failed to write checkpoint");
}

TrainedPolicy load_checkpoint(std::istream& in, std::string_view expected_hash) {
  TrainedPolicy policy;
  try {
    const json doc = json::parse(in);
    require(doc.at("format").get<std::string>() == kCheckpointFormat, ErrorKind::kIo,
            "not a policy checkpoint");
    require(doc.at("version").get<int>() == kCheckpointVersion, ErrorKind::kIo,
            "unsupported checkpoint version");
    const auto hash = doc.at("config_hash").get<std::string>();
    require(expected_hash.empty() || hash == expected_hash, ErrorKind::kConfiguration,
            "checkpoint hash " + hash + " does not match the requested configuration");
    policy.model = doc.at("model").get<std::string>();
    policy.base_stock = doc.at("base_stock").get<std::vector<std::int64_t>>();
    for (const auto& net : doc.at("networks")) {
      TrainedPolicy::Network n{spec_from_json(net.at("spec")), to_params(net.at("params").get<std::vector<double>>())};
      require(n.params.size() == ActorCritic(n.spec).parameter_count(), ErrorKind::kIo,
              "checkpoint parameter count does not match its layout");
      policy.networks.push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed checkpoint: ") + e.what());
  }
  return policy;
}

}  // namespace meio
