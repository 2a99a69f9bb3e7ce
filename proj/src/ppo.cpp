#include "meio/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "meio/distributions.hpp"
#include "meio/error.hpp"

namespace meio {

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std) {
  require(x.size() == mean.size() && x.size() == log_std.size(), ErrorKind::kContract,
          "Gaussian head dimensions differ");
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kLogSqrt2Pi;
  }
  return lp;
}

double gaussian_entropy(std::span<const double> log_std) {
  double h = 0.0;
  for (double s : log_std) h += 0.5 + kLogSqrt2Pi + s;
  return h;
}

HeadSample gaussian_head(std::span<const double> mean, std::span<const double> log_std, Rng* rng) {
  require(mean.size() == log_std.size(), ErrorKind::kContract, "Gaussian head dimensions differ");
  HeadSample out;
  out.pre_clamp.assign(mean.begin(), mean.end());
  if (rng) {
    for (std::size_t i = 0; i < mean.size(); ++i)
      out.pre_clamp[i] = mean[i] + std::exp(log_std[i]) * standard_normal(*rng);
  }
  out.action.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) out.action[i] = std::clamp(out.pre_clamp[i], -1.0, 1.0);
  out.log_prob = gaussian_log_prob(out.pre_clamp, mean, log_std);
  out.entropy = gaussian_entropy(log_std);
  return out;
}

// ---------------------------------------------------------------------------

GaeResult gae(std::span<const double> rewards, std::span<const double> values,
              std::span<const double> next_values, std::span<const std::uint8_t> boundary,
              double gamma, double lambda) {
  const std::size_t n = rewards.size();
  require(values.size() == n && next_values.size() == n && boundary.size() == n,
          ErrorKind::kContract, "GAE inputs must be aligned");
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    const double carry = boundary[t] != 0 ? 0.0 : gamma * lambda * running;
    running = delta + carry;
    out.advantages[t] = running;
    out.returns[t] = running + values[t];
  }
  return out;
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : advantages) a = (a - mean) / (sd + 1e-8);
}

// ---------------------------------------------------------------------------

ActorCritic::ActorCritic(ModelSpec spec) : spec_(std::move(spec)) {
  require(spec_.nodes > 0, ErrorKind::kContract, "model needs at least one stock point");
  require(!spec_.agents.empty(), ErrorKind::kContract, "model needs at least one agent");
  require(spec_.actor_count > 0, ErrorKind::kContract, "model needs at least one actor");
  require(!spec_.critic_observation.empty(), ErrorKind::kContract, "critic observes nothing");
  auto check_nodes = [&](const std::vector<NodeId>& nodes, const char* what) {
    require(!nodes.empty(), ErrorKind::kContract, std::string("agent has an empty ") + what);
    for (NodeId p : nodes)
      require(p >= 0 && p < spec_.nodes, ErrorKind::kContract,
              std::string("agent ") + what + " refers to an unknown stock point");
  };
  check_nodes(spec_.critic_observation, "critic observation");

  actor_agents_.resize(static_cast<std::size_t>(spec_.actor_count));
  std::vector<int> obs_dim(actor_agents_.size(), -1), act_dim(actor_agents_.size(), -1);
  for (int a = 0; a < agent_count(); ++a) {
    const auto& ag = spec_.agents[static_cast<std::size_t>(a)];
    check_nodes(ag.actions, "action set");
    check_nodes(ag.observation, "observation");
    check_nodes(ag.reward_scope, "reward scope");
    require(ag.actor >= 0 && ag.actor < spec_.actor_count, ErrorKind::kContract,
            "agent refers to an unknown actor");
    const auto k = static_cast<std::size_t>(ag.actor);
    const int od = static_cast<int>(ag.observation.size());
    const int ad = static_cast<int>(ag.actions.size());
    require(obs_dim[k] < 0 || (obs_dim[k] == od && act_dim[k] == ad), ErrorKind::kContract,
            "agents sharing an actor must have identical shapes");
    obs_dim[k] = od;
    act_dim[k] = ad;
    actor_agents_[k].push_back(a);
  }
  std::size_t pos = 0;
  for (std::size_t k = 0; k < actor_agents_.size(); ++k) {
    require(!actor_agents_[k].empty(), ErrorKind::kContract, "actor without agents");
    actors_.emplace_back(obs_dim[k], spec_.hidden, act_dim[k], pos);
    pos = actors_.back().end();
    log_std_offset_.push_back(pos);
    pos += static_cast<std::size_t>(act_dim[k]);
  }
  critic_ = Mlp(static_cast<int>(spec_.critic_observation.size()), spec_.hidden, agent_count(), pos);
  count_ = critic_.end();
}

ParamVector ActorCritic::initial_parameters(Rng& rng, double actor_output_gain) const {
  ParamVector params(count_, 0.0);
  for (const auto& actor : actors_) actor.initialize(params, rng, actor_output_gain);
  critic_.initialize(params, rng, 1.0);
  return params;
}

Matrix ActorCritic::gather(const Matrix& global, std::span<const NodeId> nodes) {
  Matrix out(static_cast<Eigen::Index>(nodes.size()), global.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = global.row(nodes[i]);
  return out;
}

Matrix ActorCritic::actor_input(int k, const Matrix& global) const {
  const auto& members = actor_agents(k);
  const Eigen::Index batch = global.cols();
  Matrix x(actor(k).inputs(), batch * static_cast<Eigen::Index>(members.size()));
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& obs = spec_.agents[static_cast<std::size_t>(members[i])].observation;
    x.middleCols(static_cast<Eigen::Index>(i) * batch, batch) = gather(global, obs);
  }
  return x;
}

std::vector<Matrix> ActorCritic::act_mean(std::span<const double> params, const Matrix& global_obs) const {
  require(global_obs.rows() == spec_.nodes, ErrorKind::kContract, "observation has the wrong width");
  require(params.size() == count_, ErrorKind::kContract, "parameter vector has the wrong size");
  std::vector<Matrix> mean(static_cast<std::size_t>(agent_count()));
  const Eigen::Index batch = global_obs.cols();
  for (int k = 0; k < spec_.actor_count; ++k) {
    const Matrix out = actor(k).forward(params, actor_input(k, global_obs));
    const auto& members = actor_agents(k);
    for (std::size_t i = 0; i < members.size(); ++i)
      mean[static_cast<std::size_t>(members[i])] = out.middleCols(static_cast<Eigen::Index>(i) * batch, batch);
  }
  return mean;
}

Matrix ActorCritic::value(std::span<const double> params, const Matrix& global_obs) const {
  require(global_obs.rows() == spec_.nodes, ErrorKind::kContract, "observation has the wrong width");
  require(params.size() == count_, ErrorKind::kContract, "parameter vector has the wrong size");
  return critic_.forward(params, gather(global_obs, spec_.critic_observation));
}

ActorCritic::Output ActorCritic::forward(std::span<const double> params, const Matrix& global_obs) const {
  return Output{act_mean(params, global_obs), value(params, global_obs)};
}

// ---------------------------------------------------------------------------

void compute_advantages(const ActorCritic& model, RolloutBatch& batch, int num_envs, double gamma,
                        double lambda) {
  const int n = batch.samples;
  require(num_envs > 0 && n % num_envs == 0, ErrorKind::kContract, "batch is not env-aligned");
  const int steps = n / num_envs;
  const auto agents = static_cast<std::size_t>(model.agent_count());
  batch.advantage.assign(agents, std::vector<double>(static_cast<std::size_t>(n)));
  batch.target.assign(agents, std::vector<double>(static_cast<std::size_t>(n)));
  std::vector<double> r(static_cast<std::size_t>(steps)), v(r.size()), nv(r.size());
  std::vector<std::uint8_t> b(r.size());
  for (std::size_t a = 0; a < agents; ++a) {
    for (int e = 0; e < num_envs; ++e) {
      for (int t = 0; t < steps; ++t) {
        const auto s = static_cast<std::size_t>(t * num_envs + e);
        const auto i = static_cast<std::size_t>(t);
        r[i] = batch.reward[a][s];
        v[i] = batch.value[a][s];
        nv[i] = batch.next_value[a][s];
        b[i] = batch.boundary[s];
      }
      const auto res = gae(r, v, nv, b, gamma, lambda);
      for (int t = 0; t < steps; ++t) {
        const auto s = static_cast<std::size_t>(t * num_envs + e);
        batch.advantage[a][s] = res.advantages[static_cast<std::size_t>(t)];
        batch.target[a][s] = res.returns[static_cast<std::size_t>(t)];
      }
    }
  }
  // Normalization pools every agent of an actor.
  for (int k = 0; k < model.spec().actor_count; ++k) {
    std::vector<double> pooled;
    for (int a : model.actor_agents(k)) {
      const auto& adv = batch.advantage[static_cast<std::size_t>(a)];
      pooled.insert(pooled.end(), adv.begin(), adv.end());
    }
    normalize_advantages(pooled);
    std::size_t pos = 0;
    for (int a : model.actor_agents(k)) {
      auto& adv = batch.advantage[static_cast<std::size_t>(a)];
      std::copy_n(pooled.begin() + static_cast<std::ptrdiff_t>(pos), adv.size(), adv.begin());
      pos += adv.size();
    }
  }
}

LossTerms ppo_loss(const ActorCritic& model, std::span<const double> params,
                   const RolloutBatch& batch, std::span<const int> index, const TrainConfig& config,
                   std::span<double> grad) {
  require(params.size() == model.parameter_count() && grad.size() == params.size(),
          ErrorKind::kContract, "parameter and gradient sizes differ");
  require(!index.empty(), ErrorKind::kContract, "empty minibatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto m = static_cast<Eigen::Index>(index.size());
  Matrix obs(batch.observations.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) obs.col(j) = batch.observations.col(index[static_cast<std::size_t>(j)]);

  LossTerms terms;
  double clipped = 0.0;
  double policy_count = 0.0;
  const double eps = config.clip;

  for (int k = 0; k < model.spec().actor_count; ++k) {
    const auto& members = model.actor_agents(k);
    const int d = model.action_dim(k);
    const auto cols = m * static_cast<Eigen::Index>(members.size());
    const Matrix x = model.actor_input(k, obs);
    Mlp::Cache cache;
    const Matrix mu = model.actor(k).forward(params, x, &cache);
    const double* log_std = params.data() + model.log_std_offset(k);
    std::vector<double> inv_sd(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) inv_sd[static_cast<std::size_t>(i)] = std::exp(-log_std[i]);

    Matrix d_mu(d, cols);
    std::vector<double> d_log_std(static_cast<std::size_t>(d), 0.0);
    const double per_col = 1.0 / static_cast<double>(cols);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto a = static_cast<std::size_t>(members[i]);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto s = index[static_cast<std::size_t>(j)];
        const auto c = static_cast<Eigen::Index>(i) * m + j;
        double lp = 0.0;
        for (int q = 0; q < d; ++q) {
          const double z = (batch.pre_clamp[a](q, s) - mu(q, c)) * inv_sd[static_cast<std::size_t>(q)];
          lp += -0.5 * z * z - log_std[q] - kLogSqrt2Pi;
        }
        const double adv = batch.advantage[a][static_cast<std::size_t>(s)];
        const double ratio = std::exp(lp - batch.log_prob[a][static_cast<std::size_t>(s)]);
        const double unclipped = ratio * adv;
        const double bounded = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
        terms.policy += -std::min(unclipped, bounded) * per_col;
        if (std::abs(ratio - 1.0) > eps) clipped += 1.0;
        // d(loss)/d(log_prob); zero when the clipped branch is the minimum.
        const double g = unclipped <= bounded ? -adv * ratio * per_col : 0.0;
        for (int q = 0; q < d; ++q) {
          const double z = (batch.pre_clamp[a](q, s) - mu(q, c)) * inv_sd[static_cast<std::size_t>(q)];
          d_mu(q, c) = g * z * inv_sd[static_cast<std::size_t>(q)];
          d_log_std[static_cast<std::size_t>(q)] += g * (z * z - 1.0);
        }
      }
    }
    policy_count += static_cast<double>(cols);
    std::vector<double> ls(log_std, log_std + d);
    terms.entropy += gaussian_entropy(ls);
    model.actor(k).backward(params, cache, d_mu, grad);
    for (int q = 0; q < d; ++q)
      grad[model.log_std_offset(k) + static_cast<std::size_t>(q)] +=
          d_log_std[static_cast<std::size_t>(q)] - config.entropy_coef;
  }

  {
    const Matrix xc = ActorCritic::gather(obs, model.spec().critic_observation);
    Mlp::Cache cache;
    const Matrix v = model.critic().forward(params, xc, &cache);
    Matrix d_v(v.rows(), v.cols());
    const double per = 1.0 / static_cast<double>(v.size());
    for (Eigen::Index a = 0; a < v.rows(); ++a) {
      const auto ai = static_cast<std::size_t>(a);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto s = static_cast<std::size_t>(index[static_cast<std::size_t>(j)]);
        const double old = batch.value[ai][s];
        const double target = batch.target[ai][s];
        const double delta = v(a, j) - old;
        const double v_clip = old + std::clamp(delta, -eps, eps);
        const double l1 = (v(a, j) - target) * (v(a, j) - target);
        const double l2 = (v_clip - target) * (v_clip - target);
        terms.value += 0.5 * std::max(l1, l2) * per;
        double dv = 0.0;
        if (l1 >= l2) dv = v(a, j) - target;
        else if (std::abs(delta) < eps) dv = v_clip - target;
        d_v(a, j) = config.value_coef * dv * per;
      }
    }
    model.critic().backward(params, cache, d_v, grad);
  }

  terms.clip_fraction = clipped / policy_count;
  terms.total = terms.policy + config.value_coef * terms.value - config.entropy_coef * terms.entropy;
  if (!std::isfinite(terms.total)) {
    std::ostringstream msg;
    msg << "non-finite PPO loss (policy " << terms.policy << ", value " << terms.value
        << ", entropy " << terms.entropy << ")";
    fail(ErrorKind::kTraining, msg.str());
  }
  return terms;
}

LossTerms ppo_update(const ActorCritic& model, ParamVector& params, Adam& optimizer,
                     const RolloutBatch& batch, const TrainConfig& config, Rng& rng) {
  const int n = batch.samples;
  require(config.minibatches > 0 && n % config.minibatches == 0, ErrorKind::kContract,
          "batch size must be a multiple of the minibatch count");
  const int size = n / config.minibatches;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  ParamVector grad(params.size());
  LossTerms last;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(rng, i));
      std::swap(order[i - 1], order[j]);
    }
    for (int b = 0; b < config.minibatches; ++b) {
      const std::span<const int> index(order.data() + static_cast<std::ptrdiff_t>(b) * size,
                                       static_cast<std::size_t>(size));
      last = ppo_loss(model, params, batch, index, config, grad);
      const double norm = clip_global_norm(grad, config.max_grad_norm);
      if (!std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "non-finite gradient norm at epoch " << epoch << ", minibatch " << b;
        fail(ErrorKind::kTraining, msg.str());
      }
      optimizer.step(params, grad);
    }
  }
  return last;
}

// ---------------------------------------------------------------------------

namespace {

/// Writes clamped means of `model`'s agents into env-major `actions`.
void overwrite_actions(const ActorCritic& model, std::span<const double> params,
                       const ObservationBatch& obs, std::span<double> actions) {
  Matrix global(obs.nodes, obs.envs);
  for (int e = 0; e < obs.envs; ++e)
    for (int p = 0; p < obs.nodes; ++p) global(p, e) = obs.scaled[static_cast<std::size_t>(e * obs.nodes + p)];
  const auto mean = model.act_mean(params, global);
  for (int a = 0; a < model.agent_count(); ++a) {
    const auto& nodes = model.spec().agents[static_cast<std::size_t>(a)].actions;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (int e = 0; e < obs.envs; ++e)
        actions[static_cast<std::size_t>(e * obs.nodes + nodes[i])] =
            std::clamp(mean[static_cast<std::size_t>(a)](static_cast<Eigen::Index>(i), e), -1.0, 1.0);
  }
}

class OverlayPolicy final : public Policy {
 public:
  OverlayPolicy(Policy* background, const ActorCritic& model, std::span<const double> params)
      : background_(background), model_(model), params_(params) {}

  void act(const ObservationBatch& obs, std::span<double> actions) override {
    if (background_) background_->act(obs, actions);
    else std::fill(actions.begin(), actions.end(), 0.0);
    overwrite_actions(model_, params_, obs, actions);
  }

 private:
  Policy* background_;
  const ActorCritic& model_;
  std::span<const double> params_;
};

}  // namespace

CompositePolicy::CompositePolicy(std::vector<Part> parts, std::vector<std::int64_t> base_stock,
                                 std::vector<std::int64_t> o_max)
    : parts_(std::move(parts)), base_stock_(std::move(base_stock)), o_max_(std::move(o_max)) {
  require(base_stock_.empty() || base_stock_.size() == o_max_.size(), ErrorKind::kContract,
          "base-stock and bound vectors must align");
  for (const auto& part : parts_)
    require(part.model && part.params.size() == part.model->parameter_count(), ErrorKind::kContract,
            "policy part has mismatched parameters");
}

void CompositePolicy::act(const ObservationBatch& obs, std::span<double> actions) {
  std::fill(actions.begin(), actions.end(), 0.0);
  if (!base_stock_.empty()) {
    require(static_cast<int>(base_stock_.size()) == obs.nodes, ErrorKind::kContract,
            "observation does not match the base-stock map");
    for (int e = 0; e < obs.envs; ++e) {
      for (int p = 0; p < obs.nodes; ++p) {
        const auto k = static_cast<std::size_t>(e * obs.nodes + p);
        const auto i = static_cast<std::size_t>(p);
        const auto raw = std::clamp<std::int64_t>(base_stock_[i] - obs.ip[k], 0, o_max_[i]);
        actions[k] = encode_order(raw, o_max_[i]);
      }
    }
  }
  for (const auto& part : parts_) overwrite_actions(*part.model, part.params, obs, actions);
}

// ---------------------------------------------------------------------------

PpoRunResult run_ppo(std::shared_ptr<const ActorCritic> model_ptr, ParamVector params,
                     std::shared_ptr<const ScenarioConfig> scenario, const PpoRunOptions& options,
                     std::uint64_t seed) {
  const FlushSubnormals flush;
  const auto& config = options.config;
  const ActorCritic& model = *model_ptr;
  const int n = scenario->size();
  const int envs = config.num_envs;
  const int steps = config.steps_per_env;
  require(envs > 0 && steps > 0, ErrorKind::kInvalidParameter, "rollout shape must be positive");
  require(config.minibatches > 0 && config.batch_size() % config.minibatches == 0,
          ErrorKind::kInvalidParameter, "batch size must be a multiple of the minibatch count");
  require(config.eval_every > 0, ErrorKind::kInvalidParameter, "evaluation cadence must be positive");
  require(model.spec().nodes == n, ErrorKind::kContract, "model does not match the scenario");
  require(params.size() == model.parameter_count(), ErrorKind::kContract,
          "initial parameters do not match the model");
  require(scenario->has_base_stock(), ErrorKind::kConfiguration,
          "training resets need base-stock levels");

  const auto agents = static_cast<std::size_t>(model.agent_count());
  const int samples = envs * steps;
  const auto score = options.score ? options.score
                                   : std::function<double(const EvaluationResult&)>(
                                         [](const EvaluationResult& r) { return r.mean_cost; });

  std::vector<Environment> env;
  std::vector<Rng> env_rng;
  for (int e = 0; e < envs; ++e) {
    env.emplace_back(scenario);
    env.back().reset();
    env_rng.emplace_back(derive_seed(seed, {1, static_cast<std::uint64_t>(e)}));
  }
  Rng noise(derive_seed(seed, {2}));
  Rng shuffle(derive_seed(seed, {3}));
  Adam optimizer(params.size(), config.learning_rate);

  RolloutBatch batch;
  batch.samples = samples;
  batch.observations.resize(n, samples);
  for (std::size_t a = 0; a < agents; ++a)
    batch.pre_clamp.emplace_back(static_cast<Eigen::Index>(model.spec().agents[a].actions.size()), samples);
  const std::vector<double> zeros(static_cast<std::size_t>(samples), 0.0);
  batch.log_prob.assign(agents, zeros);
  batch.value.assign(agents, zeros);
  batch.next_value.assign(agents, zeros);
  batch.reward.assign(agents, zeros);
  batch.boundary.assign(static_cast<std::size_t>(samples), 0);

  ObservationBatch ob;
  ob.nodes = n;
  ob.envs = envs;
  ob.ip.resize(static_cast<std::size_t>(n * envs));
  ob.scaled.resize(ob.ip.size());
  Matrix obs(n, envs);
  auto observe = [&](int e) {
    const auto at = static_cast<std::size_t>(e * n);
    env[static_cast<std::size_t>(e)].observe(std::span(ob.ip).subspan(at, static_cast<std::size_t>(n)));
    env[static_cast<std::size_t>(e)].observe_scaled(std::span(ob.scaled).subspan(at, static_cast<std::size_t>(n)));
    for (int p = 0; p < n; ++p) obs(p, e) = ob.scaled[at + static_cast<std::size_t>(p)];
  };
  for (int e = 0; e < envs; ++e) observe(e);

  std::vector<double> action(static_cast<std::size_t>(n * envs), 0.0);
  std::vector<int> step_in_episode(static_cast<std::size_t>(envs), 0);
  std::vector<std::vector<double>> log_std(static_cast<std::size_t>(model.spec().actor_count));

  PpoRunResult result;
  result.best_params = params;
  long next_eval = config.eval_every;

  try {
    while (result.episodes < config.episodes) {
      for (int k = 0; k < model.spec().actor_count; ++k) {
        const double* ls = params.data() + model.log_std_offset(k);
        log_std[static_cast<std::size_t>(k)].assign(ls, ls + model.action_dim(k));
      }
      for (int t = 0; t < steps; ++t) {
        const auto out = model.forward(params, obs);
        if (options.background) options.background->act(ob, action);
        for (std::size_t a = 0; a < agents; ++a) {
          const auto& spec = model.spec().agents[a];
          const auto& ls = log_std[static_cast<std::size_t>(spec.actor)];
          for (int e = 0; e < envs; ++e) {
            const auto s = t * envs + e;
            double lp = 0.0;
            for (std::size_t i = 0; i < spec.actions.size(); ++i) {
              const double mu = out.mean[a](static_cast<Eigen::Index>(i), e);
              const double y = mu + std::exp(ls[i]) * standard_normal(noise);
              if (!std::isfinite(y)) fail(ErrorKind::kTraining, "non-finite action sampled");
              const double z = (y - mu) * std::exp(-ls[i]);
              lp += -0.5 * z * z - ls[i] - kLogSqrt2Pi;
              batch.pre_clamp[a](static_cast<Eigen::Index>(i), s) = y;
              action[static_cast<std::size_t>(e * n + spec.actions[i])] = std::clamp(y, -1.0, 1.0);
            }
            batch.log_prob[a][static_cast<std::size_t>(s)] = lp;
            batch.value[a][static_cast<std::size_t>(s)] = out.value(static_cast<Eigen::Index>(a), e);
          }
        }
        for (int e = 0; e < envs; ++e) {
          const auto s = static_cast<std::size_t>(t * envs + e);
          auto& en = env[static_cast<std::size_t>(e)];
          batch.observations.col(static_cast<Eigen::Index>(s)) = obs.col(e);
          en.step(std::span<const double>(action).subspan(static_cast<std::size_t>(e * n),
                                                          static_cast<std::size_t>(n)),
                  env_rng[static_cast<std::size_t>(e)]);
          const auto& cost = en.info().node_cost;
          for (std::size_t a = 0; a < agents; ++a) {
            double c = 0.0;
            for (NodeId p : model.spec().agents[a].reward_scope) c += cost[static_cast<std::size_t>(p)];
            batch.reward[a][s] = -c / kRewardScale;
          }
          auto& count = step_in_episode[static_cast<std::size_t>(e)];
          ++count;
          batch.boundary[s] = count >= scenario->episode_length ? 1 : 0;
          observe(e);
        }
        // Bootstrap values come from the observation reached, before resets.
        const Matrix next = model.value(params, obs);
        for (int e = 0; e < envs; ++e) {
          const auto s = static_cast<std::size_t>(t * envs + e);
          for (std::size_t a = 0; a < agents; ++a)
            batch.next_value[a][s] = next(static_cast<Eigen::Index>(a), e);
          if (batch.boundary[s]) {
            env[static_cast<std::size_t>(e)].reset();
            step_in_episode[static_cast<std::size_t>(e)] = 0;
            ++result.episodes;
            observe(e);
          }
        }
      }
      compute_advantages(model, batch, envs, config.gamma, config.gae_lambda);
      ppo_update(model, params, optimizer, batch, config, shuffle);

      if (result.episodes >= next_eval) {
        const long mark = (result.episodes / config.eval_every) * config.eval_every;
        next_eval = mark + config.eval_every;
        OverlayPolicy policy(options.background, model, params);
        auto eval = evaluate_policy(policy, scenario, options.eval_seed);
        const double s = score(eval);
        result.curve.push_back({mark, eval.mean_cost, eval.std_cost});
        if (!result.evaluated || s < result.best_score) {
          result.evaluated = true;
          result.best_score = s;
          result.best_params = params;
          result.best_eval = std::move(eval);
        }
      }
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kTraining) throw;
    result.diverged = true;
    result.diagnostics = e.what();
  }
  return result;
}

}  // namespace meio
