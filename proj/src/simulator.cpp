#include "meio/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "meio/error.hpp"

namespace meio {

RandomExogenous::RandomExogenous(const ScenarioConfig& scenario, Rng& rng)
    : scenario_(scenario), rng_(rng) {
  const auto& topo = scenario.topology;
  edge_lead_.resize(topo.edges().size(), nullptr);
  for (NodeId p = 0; p < topo.size(); ++p) {
    const auto& inbound = topo.inbound_edges(p);
    for (std::size_t k = 0; k < inbound.size(); ++k)
      edge_lead_[static_cast<std::size_t>(inbound[k])] = &scenario.at(p).lead_in.at(k).resolved;
  }
}

std::int64_t RandomExogenous::demand(NodeId retailer) {
  return sample(scenario_.at(retailer).demand->resolved, rng_);
}

std::int64_t RandomExogenous::lead(int edge) {
  return sample(*edge_lead_[static_cast<std::size_t>(edge)], rng_);
}

int RandomExogenous::choose_supplier(NodeId, int supplier_count) {
  if (supplier_count <= 1) return 0;
  return static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(supplier_count)));
}

std::int64_t decode_order(double normalized, std::int64_t o_max) {
  if (!std::isfinite(normalized)) return 0;
  const double a = std::clamp(normalized, -1.0, 1.0);
  const auto raw = std::llround((a + 1.0) * 0.5 * static_cast<double>(o_max));
  return std::clamp<std::int64_t>(raw, 0, o_max);
}

double encode_order(std::int64_t raw, std::int64_t o_max) {
  if (o_max <= 0) return -1.0;
  const auto q = std::clamp<std::int64_t>(raw, 0, o_max);
  return 2.0 * static_cast<double>(q) / static_cast<double>(o_max) - 1.0;
}

double scale_ip(std::int64_t ip, std::int64_t ip_min, std::int64_t ip_max) {
  if (ip_max <= ip_min) return 0.0;
  const double s = 2.0 * static_cast<double>(ip - ip_min) / static_cast<double>(ip_max - ip_min) - 1.0;
  return std::clamp(s, -1.0, 1.0);
}

// ---------------------------------------------------------------------------

Environment::Environment(std::shared_ptr<const ScenarioConfig> scenario)
    : scenario_(std::move(scenario)) {
  require(scenario_ != nullptr, ErrorKind::kConfiguration, "environment needs a scenario");
  const auto& topo = scenario_->topology;
  const int n = topo.size();
  require(static_cast<int>(scenario_->params.size()) == n, ErrorKind::kConfiguration,
          "scenario parameters do not cover the topology");

  std::int64_t max_lead = 1;
  for (NodeId p = 0; p < n; ++p) {
    require(scenario_->at(p).lead_in.size() == topo.inbound_edges(p).size(),
            ErrorKind::kConfiguration, "lead times missing for '" + topo.name(p) + "'");
    for (const auto& l : scenario_->at(p).lead_in) max_lead = std::max(max_lead, l.resolved.max_value());
    if (topo.is_retailer(p))
      require(scenario_->at(p).demand.has_value(), ErrorKind::kConfiguration,
              "retailer '" + topo.name(p) + "' has no demand");
  }
  horizon_ = static_cast<int>(max_lead) + 1;

  edge_inbound_slot_.assign(topo.edges().size(), -1);
  slot_customer_.resize(static_cast<std::size_t>(n));
  slot_edge_.resize(static_cast<std::size_t>(n));
  for (NodeId p = 0; p < n; ++p) {
    const auto& inbound = topo.inbound_edges(p);
    for (std::size_t k = 0; k < inbound.size(); ++k)
      edge_inbound_slot_[static_cast<std::size_t>(inbound[k])] = static_cast<int>(k);
    auto& customers = slot_customer_[static_cast<std::size_t>(p)];
    auto& edges = slot_edge_[static_cast<std::size_t>(p)];
    for (int e : topo.outbound_edges(p)) {
      customers.push_back(topo.edges()[static_cast<std::size_t>(e)].to);
      edges.push_back(e);
    }
    if (topo.is_retailer(p)) {
      customers.push_back(-1);
      edges.push_back(-1);
    }
  }

  state_.nodes.resize(static_cast<std::size_t>(n));
  for (NodeId p = 0; p < n; ++p) {
    auto& node = state_.nodes[static_cast<std::size_t>(p)];
    const auto slots = slot_customer_[static_cast<std::size_t>(p)].size();
    node.backorders.assign(slots, 0);
    node.open_orders.assign(slots, 0);
    node.pipeline.assign(topo.inbound_edges(p).size() * static_cast<std::size_t>(horizon_), 0);
  }
  state_.external_open.assign(topo.edges().size(), 0);
  info_.node_cost.assign(static_cast<std::size_t>(n), 0.0);
  info_.orders.assign(static_cast<std::size_t>(n), 0);
  ip_buffer_.resize(static_cast<std::size_t>(n));
  order_buffer_.resize(static_cast<std::size_t>(n));
}

void Environment::reset() {
  const auto bsl = scenario_->base_stock();
  reset(bsl);
}

void Environment::reset(std::span<const std::int64_t> initial_on_hand) {
  require(static_cast<int>(initial_on_hand.size()) == size(), ErrorKind::kConfiguration,
          "initial inventory must cover every stock point");
  state_.period = 0;
  for (std::size_t p = 0; p < state_.nodes.size(); ++p) {
    auto& node = state_.nodes[p];
    node.on_hand = std::max<std::int64_t>(initial_on_hand[p], 0);
    node.on_order = 0;
    std::fill(node.backorders.begin(), node.backorders.end(), 0);
    std::fill(node.open_orders.begin(), node.open_orders.end(), 0);
    std::fill(node.pipeline.begin(), node.pipeline.end(), 0);
  }
  std::fill(state_.external_open.begin(), state_.external_open.end(), 0);
  info_.cost = 0.0;
  std::fill(info_.node_cost.begin(), info_.node_cost.end(), 0.0);
  std::fill(info_.orders.begin(), info_.orders.end(), 0);
}

int Environment::customer_slot(NodeId p, NodeId d) const {
  const auto& customers = slot_customer_.at(static_cast<std::size_t>(p));
  auto it = std::find(customers.begin(), customers.end(), d);
  require(it != customers.end(), ErrorKind::kContract, "not a customer of this stock point");
  return static_cast<int>(it - customers.begin());
}

int Environment::external_slot(NodeId p) const { return customer_slot(p, -1); }

std::int64_t Environment::inventory_position(NodeId p) const {
  const auto& node = state_.nodes.at(static_cast<std::size_t>(p));
  std::int64_t owed = 0;
  for (std::size_t s = 0; s < node.backorders.size(); ++s) owed += node.backorders[s] + node.open_orders[s];
  return node.on_hand + node.on_order - owed;
}

void Environment::observe(std::span<std::int64_t> ip) const {
  for (NodeId p = 0; p < size(); ++p) ip[static_cast<std::size_t>(p)] = inventory_position(p);
}

void Environment::observe_scaled(std::span<double> scaled) const {
  for (NodeId p = 0; p < size(); ++p) {
    const auto& sp = scenario_->at(p);
    scaled[static_cast<std::size_t>(p)] = scale_ip(inventory_position(p), sp.ip_min, sp.ip_max());
  }
}

std::int64_t Environment::in_transit_to(NodeId p) const {
  const auto& pipe = state_.nodes.at(static_cast<std::size_t>(p)).pipeline;
  return std::accumulate(pipe.begin(), pipe.end(), std::int64_t{0});
}

std::int64_t Environment::in_transit() const {
  std::int64_t total = 0;
  for (NodeId p = 0; p < size(); ++p) total += in_transit_to(p);
  return total;
}

double Environment::step(std::span<const double> normalized_action, Rng& rng) {
  RandomExogenous draws(*scenario_, rng);
  return step(normalized_action, draws);
}

double Environment::step(std::span<const double> normalized_action, Exogenous& draws) {
  require(static_cast<int>(normalized_action.size()) == size(), ErrorKind::kContract,
          "action size does not match the number of stock points");
  bool clamped = false;
  for (NodeId p = 0; p < size(); ++p) {
    const double a = normalized_action[static_cast<std::size_t>(p)];
    if (!(a >= -1.0 && a <= 1.0)) clamped = true;
    order_buffer_[static_cast<std::size_t>(p)] = decode_order(a, scenario_->at(p).o_max);
  }
  const double reward = step_raw(order_buffer_, draws);
  info_.action_clamped = info_.action_clamped || clamped;
  return reward;
}

double Environment::step_raw(std::span<const std::int64_t> orders, Exogenous& draws) {
  require(static_cast<int>(orders.size()) == size(), ErrorKind::kContract,
          "order vector size does not match the number of stock points");
  // Customer ranking uses positions at the start of the period; receiving
  // and shipping leave every position unchanged.
  observe(ip_buffer_);
  ++state_.period;
  info_.external_injection = 0;
  info_.external_shipped = 0;
  info_.action_clamped = false;

  receive();
  fulfil(ip_buffer_, draws);

  const auto& topo = scenario_->topology;
  double total = 0.0;
  for (NodeId p = 0; p < size(); ++p) {
    const auto& sp = scenario_->at(p);
    const auto& node = state_.nodes[static_cast<std::size_t>(p)];
    double c = sp.h * static_cast<double>(node.on_hand);
    if (topo.is_retailer(p))
      c += sp.b * static_cast<double>(node.backorders[static_cast<std::size_t>(external_slot(p))]);
    info_.node_cost[static_cast<std::size_t>(p)] = c;
    total += c;
  }
  info_.cost = total;

  place_orders(orders, draws);
  return -total / kRewardScale;
}

void Environment::receive() {
  const auto slot = static_cast<std::size_t>(state_.period % horizon_);
  for (auto& node : state_.nodes) {
    const std::size_t inbound = node.pipeline.size() / static_cast<std::size_t>(horizon_);
    for (std::size_t k = 0; k < inbound; ++k) {
      auto& cell = node.pipeline[k * static_cast<std::size_t>(horizon_) + slot];
      node.on_hand += cell;
      node.on_order -= cell;
      cell = 0;
    }
  }
}

void Environment::fulfil(std::span<const std::int64_t> ip_snapshot, Exogenous& draws) {
  const auto& topo = scenario_->topology;
  const auto& edges = topo.edges();
  auto ship = [&](int edge, std::int64_t quantity) {
    // A lead time of zero cannot arrive before this period's receipt event,
    // so it behaves as one period.
    const std::int64_t lead = std::max<std::int64_t>(draws.lead(edge), 1);
    const auto& e = edges[static_cast<std::size_t>(edge)];
    auto& receiver = state_.nodes[static_cast<std::size_t>(e.to)];
    const auto k = static_cast<std::size_t>(edge_inbound_slot_[static_cast<std::size_t>(edge)]);
    const auto when = static_cast<std::size_t>((state_.period + lead) % horizon_);
    receiver.pipeline[k * static_cast<std::size_t>(horizon_) + when] += quantity;
  };

  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    if (!edges[static_cast<std::size_t>(e)].external()) continue;
    auto& open = state_.external_open[static_cast<std::size_t>(e)];
    ship(e, open);
    info_.external_injection += open;
    open = 0;
  }

  for (NodeId p = 0; p < size(); ++p) {
    auto& node = state_.nodes[static_cast<std::size_t>(p)];
    const auto& customers = slot_customer_[static_cast<std::size_t>(p)];
    const std::size_t slots = customers.size();
    rank_buffer_.resize(slots);
    std::iota(rank_buffer_.begin(), rank_buffer_.end(), 0);
    std::stable_sort(rank_buffer_.begin(), rank_buffer_.end(), [&](int a, int b) {
      const NodeId ca = customers[static_cast<std::size_t>(a)];
      const NodeId cb = customers[static_cast<std::size_t>(b)];
      const std::int64_t ia = ca < 0 ? 0 : ip_snapshot[static_cast<std::size_t>(ca)];
      const std::int64_t ib = cb < 0 ? 0 : ip_snapshot[static_cast<std::size_t>(cb)];
      return ia < ib;
    });

    std::int64_t shipped[64];
    std::vector<std::int64_t> shipped_heap;
    std::int64_t* out = shipped;
    if (slots > 64) {
      shipped_heap.assign(slots, 0);
      out = shipped_heap.data();
    } else {
      std::fill(shipped, shipped + slots, 0);
    }

    // Backorders are served before new orders; within each pass the
    // customer with the lowest inventory position goes first.
    for (auto* pass : {&node.backorders, &node.open_orders}) {
      for (int s : rank_buffer_) {
        const auto slot = static_cast<std::size_t>(s);
        const std::int64_t qty = (*pass)[slot];
        const std::int64_t sent = std::min(qty, node.on_hand);
        node.on_hand -= sent;
        out[slot] += sent;
      }
    }
    for (std::size_t slot = 0; slot < slots; ++slot) {
      node.backorders[slot] += node.open_orders[slot] - out[slot];
      node.open_orders[slot] = 0;
      const int edge = slot_edge_[static_cast<std::size_t>(p)][slot];
      if (edge < 0) info_.external_shipped += out[slot];
      else ship(edge, out[slot]);
    }
  }
}

void Environment::place_orders(std::span<const std::int64_t> orders, Exogenous& draws) {
  const auto& topo = scenario_->topology;
  const auto& edges = topo.edges();
  for (NodeId p = 0; p < size(); ++p) {
    const auto& sp = scenario_->at(p);
    auto& node = state_.nodes[static_cast<std::size_t>(p)];
    const std::int64_t requested = orders[static_cast<std::size_t>(p)];
    const std::int64_t q = std::clamp<std::int64_t>(requested, 0, sp.o_max);
    if (q != requested) info_.action_clamped = true;
    info_.orders[static_cast<std::size_t>(p)] = q;

    const auto& inbound = topo.inbound_edges(p);
    const int pick = draws.choose_supplier(p, static_cast<int>(inbound.size()));
    const int edge = inbound.at(static_cast<std::size_t>(pick));
    const auto& e = edges[static_cast<std::size_t>(edge)];
    if (e.external()) {
      state_.external_open[static_cast<std::size_t>(edge)] += q;
    } else {
      auto& supplier = state_.nodes[static_cast<std::size_t>(e.from)];
      supplier.open_orders[static_cast<std::size_t>(customer_slot(e.from, p))] += q;
    }
    node.on_order += q;

    if (topo.is_retailer(p)) {
      const std::int64_t q_ext = draws.demand(p);
      node.open_orders[static_cast<std::size_t>(external_slot(p))] += q_ext;
    }
  }
}

// ---------------------------------------------------------------------------

double EvaluationResult::scope_cost(std::span<const NodeId> nodes) const {
  double total = 0.0;
  for (NodeId p : nodes) total += node_mean_cost.at(static_cast<std::size_t>(p));
  return total;
}

EvaluationResult evaluate_policy(Policy& policy, std::shared_ptr<const ScenarioConfig> scenario,
                                 int episodes, int steps, int warmup, std::uint64_t seed) {
  require(episodes > 0 && steps > 0, ErrorKind::kInvalidParameter,
          "evaluation needs positive episodes and steps");
  require(warmup >= 0 && warmup < steps, ErrorKind::kInvalidParameter,
          "evaluation warmup must be shorter than the episode");
  const int n = scenario->size();
  std::vector<Environment> envs;
  std::vector<Rng> rngs;
  envs.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    envs.emplace_back(scenario);
    envs.back().reset();
    rngs.emplace_back(derive_seed(seed, {static_cast<std::uint64_t>(e)}));
  }

  ObservationBatch obs;
  obs.nodes = n;
  obs.envs = episodes;
  obs.ip.resize(static_cast<std::size_t>(n * episodes));
  obs.scaled.resize(obs.ip.size());
  std::vector<double> actions(obs.ip.size());

  EvaluationResult result;
  result.episode_costs.assign(static_cast<std::size_t>(episodes), 0.0);
  std::vector<double> node_total(static_cast<std::size_t>(n), 0.0);

  for (int t = 0; t < steps; ++t) {
    for (int e = 0; e < episodes; ++e) {
      const auto off = static_cast<std::size_t>(e * n);
      envs[static_cast<std::size_t>(e)].observe(std::span(obs.ip).subspan(off, static_cast<std::size_t>(n)));
      envs[static_cast<std::size_t>(e)].observe_scaled(
          std::span(obs.scaled).subspan(off, static_cast<std::size_t>(n)));
    }
    policy.act(obs, actions);
    for (int e = 0; e < episodes; ++e) {
      auto& env = envs[static_cast<std::size_t>(e)];
      const auto off = static_cast<std::size_t>(e * n);
      RandomExogenous draws(*scenario, rngs[static_cast<std::size_t>(e)]);
      env.step(std::span<const double>(actions).subspan(off, static_cast<std::size_t>(n)), draws);
      if (t >= warmup) {
        result.episode_costs[static_cast<std::size_t>(e)] += env.info().cost;
        for (int p = 0; p < n; ++p) node_total[static_cast<std::size_t>(p)] += env.info().node_cost[static_cast<std::size_t>(p)];
      }
    }
  }

  double sum = 0.0;
  for (double c : result.episode_costs) sum += c;
  result.mean_cost = sum / episodes;
  double var = 0.0;
  for (double c : result.episode_costs) var += (c - result.mean_cost) * (c - result.mean_cost);
  result.std_cost = episodes > 1 ? std::sqrt(var / (episodes - 1)) : 0.0;
  result.node_mean_cost.resize(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p)
    result.node_mean_cost[static_cast<std::size_t>(p)] = node_total[static_cast<std::size_t>(p)] / episodes;
  return result;
}

EvaluationResult evaluate_policy(Policy& policy, std::shared_ptr<const ScenarioConfig> scenario,
                                 std::uint64_t seed) {
  const auto protocol = scenario->evaluation;
  return evaluate_policy(policy, std::move(scenario), protocol.episodes, protocol.steps,
                         protocol.warmup, seed);
}

std::vector<TrajectoryRow> simulate_trajectory(Policy& policy,
                                               std::shared_ptr<const ScenarioConfig> scenario,
                                               std::int64_t periods, std::uint64_t seed) {
  const int n = scenario->size();
  Environment env(scenario);
  env.reset();
  Rng rng(seed);
  ObservationBatch obs;
  obs.nodes = n;
  obs.envs = 1;
  obs.ip.resize(static_cast<std::size_t>(n));
  obs.scaled.resize(static_cast<std::size_t>(n));
  std::vector<double> actions(static_cast<std::size_t>(n));
  std::vector<TrajectoryRow> rows;
  rows.reserve(static_cast<std::size_t>(periods * n));
  RandomExogenous draws(*scenario, rng);
  for (std::int64_t t = 0; t < periods; ++t) {
    env.observe(obs.ip);
    env.observe_scaled(obs.scaled);
    policy.act(obs, actions);
    env.step(actions, draws);
    for (NodeId p = 0; p < n; ++p) {
      const auto& node = env.state().nodes[static_cast<std::size_t>(p)];
      TrajectoryRow row;
      row.period = env.state().period;
      row.stock_point = p;
      row.on_hand = node.on_hand;
      row.ip = obs.ip[static_cast<std::size_t>(p)];
      row.order_placed = env.info().orders[static_cast<std::size_t>(p)];
      row.backlog = std::accumulate(node.backorders.begin(), node.backorders.end(), std::int64_t{0});
      row.cost = env.info().node_cost[static_cast<std::size_t>(p)];
      rows.push_back(row);
    }
  }
  return rows;
}

void write_trajectory_csv(std::ostream& out, const ScenarioConfig& scenario,
                          std::span<const TrajectoryRow> rows) {
  out << "period,stock_point,on_hand,ip,order_placed,backlog,cost\n";
  for (const auto& r : rows) {
    out << r.period << ',' << scenario.topology.name(r.stock_point) << ',' << r.on_hand << ','
        << r.ip << ',' << r.order_placed << ',' << r.backlog << ',' << r.cost << '\n';
  }
}

void RandomPolicy::act(const ObservationBatch& obs, std::span<double> actions) {
  (void)obs;
  for (double& a : actions) a = 2.0 * uniform01(rng_) - 1.0;
}

}  // namespace meio
