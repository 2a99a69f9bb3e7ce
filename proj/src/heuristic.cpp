#include "meio/heuristic.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

#include "meio/error.hpp"

namespace meio {

std::vector<double> echelon_holding_costs(std::span<const double> local_h) {
  require(!local_h.empty(), ErrorKind::kInvalidParameter, "no holding costs given");
  std::vector<double> out(local_h.size());
  for (std::size_t j = 0; j < local_h.size(); ++j) {
    const double upstream = j + 1 < local_h.size() ? local_h[j + 1] : 0.0;
    require(local_h[j] > upstream, ErrorKind::kInvalidParameter,
            "local holding costs must strictly decrease upstream");
    out[j] = local_h[j] - upstream;
  }
  return out;
}

namespace {

std::int64_t round_half_up(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

}  // namespace

BaseStockSolution shang_song_serial(const SerialSystem& system) {
  const std::size_t n = system.stages();
  require(n > 0 && system.effective_lead.size() == n && system.echelon_h.size() == n,
          ErrorKind::kInvalidParameter, "serial system stages are inconsistent");
  for (double e : system.echelon_h)
    require(e > 0.0, ErrorKind::kInvalidParameter, "echelon holding costs must be positive");

  // tail[k] = sum of echelon costs from stage k upward; tail[n] = 0.
  std::vector<double> tail(n + 1, 0.0);
  for (std::size_t k = n; k-- > 0;) tail[k] = tail[k + 1] + system.echelon_h[k];

  BaseStockSolution sol;
  Pmf cumulative_lead = make_point_mass(0);
  for (std::size_t j = 0; j < n; ++j) {
    cumulative_lead = convolve(cumulative_lead, system.effective_lead[j]);
    const Pmf echelon_demand = compound_lead_time_demand(system.demand, cumulative_lead);
    const double penalty = system.b + tail[j + 1];
    const double r_low = penalty / (system.b + tail[0]);
    const double r_high = penalty / (system.b + tail[j]);
    const auto s_low = quantile(echelon_demand, r_low);
    const auto s_high = quantile(echelon_demand, r_high);
    sol.echelon_level.push_back(round_half_up(0.5 * static_cast<double>(s_low + s_high)));
  }
  for (std::size_t j = 0; j < n; ++j) {
    std::int64_t inst = sol.echelon_level[j] - (j > 0 ? sol.echelon_level[j - 1] : 0);
    if (inst < 0) {
      std::clog << "warning: negative installation level at stage " << j << " floored to 0\n";
      inst = 0;
    }
    sol.installation_level.push_back(inst);
    const Pmf local = compound_lead_time_demand(system.demand, system.effective_lead[j]);
    sol.expected_backorders.push_back(expected_shortfall(local, inst));
  }
  return sol;
}

Pmf effective_lead(const ScenarioConfig& scenario, NodeId p) {
  const auto& leads = scenario.at(p).lead_in;
  require(!leads.empty(), ErrorKind::kConfiguration, "stock point without inbound lead time");
  std::vector<Pmf> parts;
  for (const auto& l : leads) parts.push_back(floor_support(l.resolved, 1));
  const std::vector<double> weights(parts.size(), 1.0);
  return convolve(mixture(weights, parts), make_point_mass(1));
}

std::vector<SerialSystem> decompose(const ScenarioConfig& scenario) {
  const auto& topo = scenario.topology;
  std::vector<SerialSystem> systems;
  std::vector<Pmf> leads;
  for (NodeId p = 0; p < topo.size(); ++p) leads.push_back(effective_lead(scenario, p));

  for (NodeId r : topo.retailers()) {
    std::vector<NodeId> path{r};
    std::vector<double> weight{1.0};
    // Depth-first over supplier choices; a path closes at the outside source.
    auto extend = [&](auto&& self) -> void {
      const NodeId top = path.back();
      const auto suppliers = topo.suppliers(top);
      const double share = weight.back() / static_cast<double>(suppliers.size());
      for (NodeId u : suppliers) {
        if (u == kExternalSupplier) {
          SerialSystem sys;
          sys.path = path;
          sys.demand = scenario.at(r).demand->resolved;
          sys.b = scenario.at(r).b;
          sys.routing_weight = share;
          std::vector<double> local_h;
          for (NodeId p : path) {
            sys.effective_lead.push_back(leads[static_cast<std::size_t>(p)]);
            local_h.push_back(scenario.at(p).h);
          }
          sys.echelon_h = echelon_holding_costs(local_h);
          systems.push_back(std::move(sys));
        } else {
          path.push_back(u);
          weight.push_back(share);
          self(self);
          path.pop_back();
          weight.pop_back();
        }
      }
    };
    extend(extend);
  }
  return systems;
}

Pmf upstream_demand_pmf(const ScenarioConfig& scenario, NodeId u) {
  const auto& topo = scenario.topology;
  if (topo.is_retailer(u)) return scenario.at(u).demand->resolved;
  Pmf total = make_point_mass(0);
  for (NodeId d : topo.customers(u)) {
    total = convolve(total, thin_random_routing(upstream_demand_pmf(scenario, d), topo.supplier_count(d)));
  }
  return total;
}

Pmf lead_time_demand(const ScenarioConfig& scenario, NodeId p) {
  return compound_lead_time_demand(upstream_demand_pmf(scenario, p), effective_lead(scenario, p));
}

std::int64_t match_shortfall(const Pmf& ltd, double target) {
  // Expected shortfall is non-increasing in S: bisect for the first S whose
  // shortfall is at or below the target, then compare with its neighbour.
  std::int64_t lo = 0;
  std::int64_t hi = std::max<std::int64_t>(ltd.max_value(), 0);
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (expected_shortfall(ltd, mid) <= target) hi = mid;
    else lo = mid + 1;
  }
  if (lo > 0) {
    const double above = std::abs(expected_shortfall(ltd, lo - 1) - target);
    const double at = std::abs(expected_shortfall(ltd, lo) - target);
    if (above <= at) return lo - 1;
  }
  return lo;
}

MatchedLevels backorder_match(const ScenarioConfig& scenario, std::span<const SerialSystem> systems,
                              std::span<const BaseStockSolution> solutions) {
  require(systems.size() == solutions.size(), ErrorKind::kInvalidParameter,
          "one serial solution per system is required");
  const auto& topo = scenario.topology;
  const auto n = static_cast<std::size_t>(topo.size());
  MatchedLevels out;
  out.installation_level.assign(n, 0);
  out.echelon_level.assign(n, 0);
  out.target_backorders.assign(n, 0.0);
  out.expected_backorders.assign(n, 0.0);

  std::vector<int> appearances(n, 0);
  std::vector<std::int64_t> serial_level(n, 0);
  std::vector<bool> unthinned(n, true);
  std::vector<bool> seen(n, false);

  for (std::size_t k = 0; k < systems.size(); ++k) {
    const auto& sys = systems[k];
    const auto& sol = solutions[k];
    for (std::size_t j = 0; j < sys.stages(); ++j) {
      const auto p = static_cast<std::size_t>(sys.path[j]);
      out.echelon_level[p] = seen[p] ? std::max(out.echelon_level[p], sol.echelon_level[j])
                                     : sol.echelon_level[j];
      seen[p] = true;
      ++appearances[p];
      if (j == 0) {
        serial_level[p] = std::max(serial_level[p], sol.installation_level[0]);
        continue;
      }
      serial_level[p] = sol.installation_level[j];
      for (std::size_t i = 0; i < j; ++i) {
        if (topo.supplier_count(sys.path[i]) > 1) unthinned[p] = false;
      }
      // Counterpart backorders: this stage facing the full retailer stream
      // over its own lead, weighted by how often the path is used.
      const Pmf local = compound_lead_time_demand(sys.demand, sys.effective_lead[j]);
      out.target_backorders[p] +=
          sys.routing_weight * expected_shortfall(local, sol.installation_level[j]);
    }
  }

  for (NodeId p = 0; p < topo.size(); ++p) {
    const auto i = static_cast<std::size_t>(p);
    if (topo.is_retailer(p)) {
      out.installation_level[i] = serial_level[i];
      const Pmf local = compound_lead_time_demand(scenario.at(p).demand->resolved,
                                                  effective_lead(scenario, p));
      out.expected_backorders[i] = expected_shortfall(local, serial_level[i]);
      out.target_backorders[i] = out.expected_backorders[i];
      continue;
    }
    const Pmf aggregate = lead_time_demand(scenario, p);
    if (appearances[i] == 1 && unthinned[i]) {
      // Single counterpart facing the same demand: aggregation is the identity.
      out.installation_level[i] = serial_level[i];
    } else {
      out.installation_level[i] = match_shortfall(aggregate, out.target_backorders[i]);
    }
    out.expected_backorders[i] = expected_shortfall(aggregate, out.installation_level[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

BaseStockPolicy::BaseStockPolicy(std::vector<std::int64_t> bsl, std::vector<std::int64_t> o_max)
    : bsl_(std::move(bsl)), o_max_(std::move(o_max)) {
  require(bsl_.size() == o_max_.size(), ErrorKind::kContract,
          "base-stock and bound vectors must align");
}

BaseStockPolicy::BaseStockPolicy(const ScenarioConfig& scenario) {
  bsl_ = scenario.base_stock();
  for (const auto& sp : scenario.params) o_max_.push_back(sp.o_max);
}

std::int64_t BaseStockPolicy::raw_order(NodeId p, std::int64_t ip) const {
  const auto i = static_cast<std::size_t>(p);
  return std::clamp<std::int64_t>(bsl_[i] - ip, 0, o_max_[i]);
}

void BaseStockPolicy::act(const ObservationBatch& obs, std::span<double> actions) {
  require(obs.nodes == static_cast<int>(bsl_.size()), ErrorKind::kContract,
          "observation does not match the base-stock map");
  for (int e = 0; e < obs.envs; ++e) {
    for (int p = 0; p < obs.nodes; ++p) {
      const auto k = static_cast<std::size_t>(e * obs.nodes + p);
      actions[k] = encode_order(raw_order(p, obs.ip[k]), o_max_[static_cast<std::size_t>(p)]);
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<std::int64_t> da_base_stock_levels(const ScenarioConfig& scenario) {
  const auto report = validate_heuristic_preconditions(scenario);
  if (!report.ok()) {
    std::string msg = "heuristic preconditions violated:";
    for (const auto& v : report.violations) msg += " " + v + ";";
    fail(ErrorKind::kValidation, msg);
  }
  const auto systems = decompose(scenario);
  std::vector<BaseStockSolution> solutions;
  for (const auto& s : systems) solutions.push_back(shang_song_serial(s));
  return backorder_match(scenario, systems, solutions).installation_level;
}

HeuristicResult da_heuristic(const ScenarioConfig& scenario, std::uint64_t eval_seed) {
  const auto report = validate_heuristic_preconditions(scenario);
  if (!report.ok()) {
    std::string msg = "heuristic preconditions violated:";
    for (const auto& v : report.violations) msg += " " + v + ";";
    fail(ErrorKind::kValidation, msg);
  }
  HeuristicResult result;
  result.systems = decompose(scenario);
  for (const auto& s : result.systems) result.solutions.push_back(shang_song_serial(s));
  result.levels = backorder_match(scenario, result.systems, result.solutions);
  result.bsl = result.levels.installation_level;

  auto with_bsl = std::make_shared<const ScenarioConfig>(scenario.with_base_stock(result.bsl));
  BaseStockPolicy policy(*with_bsl);
  result.benchmark = evaluate_policy(policy, with_bsl, eval_seed);
  result.benchmark_cost = result.benchmark.mean_cost;
  return result;
}

}  // namespace meio
