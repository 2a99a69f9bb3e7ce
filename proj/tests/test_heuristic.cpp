#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "meio/error.hpp"
#include "meio/heuristic.hpp"
#include "meio/simulator.hpp"
#include "test_support.hpp"

namespace meio {
namespace {

using testing::share;

// Warehouse above one retailer, Poisson(10) demand, unit shipping leads.
const char* kSerialDoc = R"({"nodes":["W","R"],"edges":[["EXT","W"],["W","R"]],
  "demand":{"kind":"poisson_uniform","lo":10,"hi":10},"lead_time":{"kind":"static","value":1}})";

// Warehouse above two identical retailers.
const char* kToyDoc = R"({"nodes":["W","R1","R2"],"edges":[["EXT","W"],["W","R1"],["W","R2"]],
  "demand":{"kind":"poisson_uniform","lo":10,"hi":10},"lead_time":{"kind":"static","value":1}})";

std::int64_t cdf_quantile(const Pmf& a, double r) {
  double acc = 0.0;
  for (std::int64_t k = a.min_value(); k <= a.max_value(); ++k) {
    acc += a(k);
    if (acc >= r) return k;
  }
  return a.max_value();
}

double brute_shortfall(const Pmf& a, std::int64_t s) {
  double total = 0.0;
  for (std::int64_t k = a.min_value(); k <= a.max_value(); ++k)
    if (k > s) total += static_cast<double>(k - s) * a(k);
  return total;
}

// Long-run cost of an order-up-to policy: one long episode on common random
// numbers so that grid points are compared on identical demand.
double simulated_cost(const ScenarioConfig& base, const std::vector<std::int64_t>& bsl, int periods) {
  auto s = share(base.with_base_stock(bsl));
  BaseStockPolicy policy(*s);
  return evaluate_policy(policy, s, 1, periods + 500, 500, 77).mean_cost / periods;
}

TEST(EchelonCosts, Examples) {
  EXPECT_EQ(echelon_holding_costs(std::vector<double>{1.0}), (std::vector<double>{1.0}));
  const auto two = echelon_holding_costs(std::vector<double>{1.0, 0.6});
  EXPECT_NEAR(two[0], 0.4, 1e-15);
  EXPECT_NEAR(two[1], 0.6, 1e-15);
  const auto three = echelon_holding_costs(std::vector<double>{1.0, 0.6, 0.4});
  EXPECT_NEAR(three[0], 0.4, 1e-15);
  EXPECT_NEAR(three[1], 0.2, 1e-15);
  EXPECT_NEAR(three[2], 0.4, 1e-15);
}

TEST(EchelonCosts, SumToRetailerHoldingCost) {
  const std::vector<double> local{1.0, 0.6, 0.4};
  const auto e = echelon_holding_costs(local);
  EXPECT_NEAR(e[0] + e[1] + e[2], 1.0, 1e-15);
}

TEST(EchelonCosts, NonMonotoneIsRejected) {
  try {
    echelon_holding_costs(std::vector<double>{0.6, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidParameter);
  }
  EXPECT_THROW(echelon_holding_costs(std::vector<double>{1.0, 1.0}), Error);
}

TEST(ShangSong, DeterministicNewsvendor) {
  SerialSystem sys;
  sys.path = {0};
  sys.demand = make_point_mass(10);
  sys.effective_lead = {make_point_mass(2)};
  sys.echelon_h = {1.0};
  for (double b : {0.5, 19.0, 1000.0}) {
    sys.b = b;
    EXPECT_EQ(shang_song_serial(sys).echelon_level, (std::vector<std::int64_t>{20})) << b;
  }
}

TEST(ShangSong, SingleStageUsesTheCriticalFractile) {
  SerialSystem sys;
  sys.path = {0};
  sys.demand = make_uniform_poisson_mixture(5, 15);
  sys.effective_lead = {make_point_mass(2)};
  sys.echelon_h = {1.0};
  sys.b = 19.0;
  const Pmf ltd = convolve(sys.demand, sys.demand);
  const auto sol = shang_song_serial(sys);
  // Both fractiles are (19 + 0) / (19 + 1).
  EXPECT_EQ(sol.echelon_level[0], cdf_quantile(ltd, 0.95));
  EXPECT_EQ(sol.installation_level[0], sol.echelon_level[0]);
  EXPECT_NEAR(sol.expected_backorders[0], brute_shortfall(ltd, sol.echelon_level[0]), 1e-9);
}

TEST(ShangSong, TwoStageMidpointOfFractiles) {
  const auto s = scenario_from_document(kSerialDoc);
  const auto systems = decompose(s);
  ASSERT_EQ(systems.size(), 1u);
  const auto sol = shang_song_serial(systems[0]);
  const Pmf d = make_poisson(10);
  // H = (1.0, 0.6, 0) from echelon costs (0.4, 0.6), b = 19.
  auto midpoint = [](std::int64_t a, std::int64_t b) {
    return static_cast<std::int64_t>(std::floor(0.5 * static_cast<double>(a + b) + 0.5));
  };
  // Stage 1 (retailer): cumulative lead 2; both ratios (19 + 0.6) / (19 + 1).
  const Pmf l1 = convolve(d, d);
  const auto s1 = midpoint(cdf_quantile(l1, 19.6 / 20.0), cdf_quantile(l1, 19.6 / 20.0));
  // Stage 2: cumulative lead 4; ratios 19 / 20 and 19 / 19.6.
  const Pmf l2 = convolve(l1, l1);
  const auto s2 = midpoint(cdf_quantile(l2, 19.0 / 20.0), cdf_quantile(l2, 19.0 / 19.6));
  EXPECT_EQ(sol.echelon_level, (std::vector<std::int64_t>{s1, s2}));
  EXPECT_EQ(sol.installation_level, (std::vector<std::int64_t>{s1, s2 - s1}));
}

// The serial solution must sit within one unit per stage of the best
// installation pair found by exhaustive simulation.
TEST(ShangSong, NearTheSimulatedGridOptimum) {
  const auto s = scenario_from_document(kSerialDoc);
  const auto sol = shang_song_serial(decompose(s)[0]);
  const std::int64_t w0 = sol.installation_level[1];
  const std::int64_t r0 = sol.installation_level[0];
  double best = std::numeric_limits<double>::infinity();
  std::int64_t bw = 0, br = 0;
  for (std::int64_t w = std::max<std::int64_t>(0, w0 - 6); w <= w0 + 6; ++w)
    for (std::int64_t r = std::max<std::int64_t>(0, r0 - 6); r <= r0 + 6; ++r) {
      const double c = simulated_cost(s, {w, r}, 200'000);
      if (c < best) {
        best = c;
        bw = w;
        br = r;
      }
    }
  EXPECT_LE(std::abs(bw - w0), 1) << "grid optimum (" << bw << ", " << br << ")";
  EXPECT_LE(std::abs(br - r0), 1) << "grid optimum (" << bw << ", " << br << ")";
}

TEST(ShangSong, RetailerLevelIsMonotoneInBackorderCost) {
  SerialSystem sys = decompose(scenario_from_document(kSerialDoc))[0];
  std::int64_t last = 0;
  for (double b : {1.0, 2.0, 5.0, 9.0, 19.0, 49.0, 99.0}) {
    sys.b = b;
    const auto level = shang_song_serial(sys).echelon_level[0];
    EXPECT_GE(level, last) << b;
    last = level;
  }
}

TEST(EffectiveLead, ShippingPlusOneProcessingPeriod) {
  const auto a1 = build_scenario("A1");
  for (NodeId p = 0; p < a1.size(); ++p) {
    const Pmf l = effective_lead(a1, p);
    EXPECT_EQ(l.min_value(), 2);
    EXPECT_EQ(l.max_value(), 2);
  }
  const Pmf c = effective_lead(build_scenario("C3"), 0);
  EXPECT_EQ(c.min_value(), 2);
  EXPECT_EQ(c.max_value(), 6);
  for (int k = 2; k <= 6; ++k) EXPECT_NEAR(c(k), 0.2, 1e-12);
}

// ---------------------------------------------------------------------------

// Supply paths from `p` to the outside source, enumerated independently.
void paths_from(const NetworkTopology& t, NodeId p, std::vector<NodeId>& path,
                std::vector<std::vector<NodeId>>& out) {
  path.push_back(p);
  for (NodeId u : t.suppliers(p)) {
    if (u == kExternalSupplier) out.push_back(path);
    else paths_from(t, u, path, out);
  }
  path.pop_back();
}

TEST(Decompose, DivergentGivesOneSystemPerRetailer) {
  const auto s = build_scenario("A1");
  const auto systems = decompose(s);
  ASSERT_EQ(systems.size(), 3u);
  for (const auto& sys : systems) {
    EXPECT_EQ(sys.stages(), 2u);
    EXPECT_EQ(sys.routing_weight, 1.0);
    EXPECT_EQ(sys.path[1], s.topology.index_of("W1"));
  }
}

TEST(Decompose, SerialChainGivesOneSystem) {
  const auto s = scenario_from_document(
      R"({"nodes":["T","M","R"],"edges":[["EXT","T"],["T","M"],["M","R"]]})");
  const auto systems = decompose(s);
  ASSERT_EQ(systems.size(), 1u);
  EXPECT_EQ(systems[0].stages(), 3u);
}

TEST(Decompose, PathsMatchEnumerationOracle) {
  for (const char* id : {"B1", "D1"}) {
    const auto s = build_scenario(id);
    const auto systems = decompose(s);
    std::vector<std::vector<NodeId>> expected;
    for (NodeId r : s.topology.retailers()) {
      std::vector<NodeId> path;
      paths_from(s.topology, r, path, expected);
    }
    std::vector<std::vector<NodeId>> got;
    for (const auto& sys : systems) got.push_back(sys.path);
    std::sort(expected.begin(), expected.end());
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, expected) << id;

    // Routing weights of one retailer's paths form a distribution.
    std::map<NodeId, double> weight;
    for (const auto& sys : systems) weight[sys.path[0]] += sys.routing_weight;
    for (const auto& [r, w] : weight) EXPECT_NEAR(w, 1.0, 1e-12) << id;
  }
}

TEST(Decompose, RetailerWithTwoRootFedSuppliers) {
  const auto s = scenario_from_document(R"({"nodes":["T","A","B","R"],
      "edges":[["EXT","T"],["T","A"],["T","B"],["A","R"],["B","R"]],
      "costs":{"3":{"h":0.2}},"bounds":{"3":{"o_max":500,"ip_min":-1000,"ip_max_offset":500}}})");
  const auto systems = decompose(s);
  ASSERT_EQ(systems.size(), 2u);
  for (const auto& sys : systems) {
    EXPECT_EQ(sys.path.front(), s.topology.index_of("R"));
    EXPECT_EQ(sys.path.back(), s.topology.index_of("T"));
    EXPECT_EQ(sys.routing_weight, 0.5);
  }
}

TEST(UpstreamDemand, Examples) {
  const auto serial = scenario_from_document(kSerialDoc);
  const Pmf d = upstream_demand_pmf(serial, 0);
  const Pmf r = serial.at(1).demand->resolved;
  ASSERT_EQ(d.size(), r.size());
  for (std::int64_t k = r.min_value(); k <= r.max_value(); ++k) EXPECT_EQ(d(k), r(k));

  const auto pair = scenario_from_document(testing::two_retailer_document(R"({"kind":"point","value":10})"));
  const Pmf two = upstream_demand_pmf(pair, 0);
  EXPECT_EQ(two.min_value(), 20);
  EXPECT_EQ(two.max_value(), 20);

  const auto split = scenario_from_document(R"({"nodes":["A","B","R"],
      "edges":[["EXT","A"],["EXT","B"],["A","R"],["B","R"]],"demand":{"kind":"point","value":10}})");
  for (NodeId u : {0, 1}) {
    const Pmf seen = upstream_demand_pmf(split, u);
    EXPECT_NEAR(seen(0), 0.5, 1e-12);
    EXPECT_NEAR(seen(10), 0.5, 1e-12);
  }
}

TEST(BackorderMatch, SingleCounterpartIsTheIdentity) {
  const auto s = scenario_from_document(kSerialDoc);
  const auto systems = decompose(s);
  const std::vector<BaseStockSolution> sols{shang_song_serial(systems[0])};
  const auto m = backorder_match(s, systems, sols);
  EXPECT_EQ(m.installation_level[0], sols[0].installation_level[1]);
  EXPECT_EQ(m.installation_level[1], sols[0].installation_level[0]);
}

TEST(BackorderMatch, SymmetricRetailersDoubleTheTarget) {
  const auto s = scenario_from_document(kToyDoc);
  const auto systems = decompose(s);
  ASSERT_EQ(systems.size(), 2u);
  std::vector<BaseStockSolution> sols;
  for (const auto& sys : systems) sols.push_back(shang_song_serial(sys));
  const auto m = backorder_match(s, systems, sols);

  const Pmf single = compound_lead_time_demand(make_poisson(10), make_point_mass(2));
  const double per_system = brute_shortfall(single, sols[0].installation_level[1]);
  EXPECT_NEAR(m.target_backorders[0], 2.0 * per_system, 1e-9);

  // Oracle: scan every level for the closest shortfall to the target.
  const Pmf aggregate = compound_lead_time_demand(make_poisson(20), make_point_mass(2));
  std::int64_t best = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (std::int64_t level = 0; level <= aggregate.max_value(); ++level) {
    const double g = std::abs(brute_shortfall(aggregate, level) - m.target_backorders[0]);
    if (g < gap) {
      gap = g;
      best = level;
    }
  }
  EXPECT_EQ(m.installation_level[0], best);
  EXPECT_EQ(m.installation_level[1], sols[0].installation_level[0]);
  EXPECT_EQ(m.installation_level[2], sols[1].installation_level[0]);
}

TEST(BackorderMatch, ShortfallSearchAgreesWithScan) {
  const Pmf a = make_uniform_poisson_mixture(20, 40);
  for (double target : {0.0, 0.01, 0.3, 2.5, 10.0, 29.9, 100.0}) {
    std::int64_t best = 0;
    double gap = std::numeric_limits<double>::infinity();
    for (std::int64_t level = 0; level <= a.max_value(); ++level) {
      const double g = std::abs(brute_shortfall(a, level) - target);
      if (g < gap) {
        gap = g;
        best = level;
      }
    }
    EXPECT_EQ(match_shortfall(a, target), best) << target;
  }
}

TEST(Da, SerialInputReproducesShangSong) {
  const auto s = scenario_from_document(R"({"nodes":["T","M","R"],"edges":[["EXT","T"],["T","M"],["M","R"]],
      "demand":{"kind":"poisson_uniform","lo":5,"hi":15},"lead_time":{"kind":"uniform","lo":1,"hi":3}})");
  const auto sol = shang_song_serial(decompose(s)[0]);
  const auto bsl = da_base_stock_levels(s);
  EXPECT_EQ(bsl, (std::vector<std::int64_t>{sol.installation_level[2], sol.installation_level[1],
                                            sol.installation_level[0]}));
}

TEST(Da, A1HasFourLevelsAndABenchmark) {
  const auto r = da_heuristic(build_scenario("A1"), 42);
  EXPECT_EQ(r.bsl.size(), 4u);
  EXPECT_EQ(r.benchmark.episode_costs.size(), 100u);
  EXPECT_GT(r.benchmark_cost, 0.0);
  EXPECT_EQ(r.benchmark_cost, r.benchmark.mean_cost);
  // Identical retailers receive identical levels.
  EXPECT_EQ(r.bsl[1], r.bsl[2]);
  EXPECT_EQ(r.bsl[2], r.bsl[3]);
}

TEST(Da, DeterministicSystemNeverBackorders) {
  const auto s = scenario_from_document(R"({"nodes":["W","R1","R2"],"edges":[["EXT","W"],["W","R1"],["W","R2"]],
      "demand":{"kind":"point","value":10},"lead_time":{"kind":"static","value":1}})");
  const auto r = da_heuristic(s, 1);
  // Lead-time demand over two periods covers every retailer exactly.
  EXPECT_EQ(r.bsl[1], 20);
  EXPECT_EQ(r.bsl[2], 20);
  auto shared = share(s.with_base_stock(r.bsl));
  BaseStockPolicy policy(*shared);
  for (const auto& row : simulate_trajectory(policy, shared, 500, 3)) EXPECT_EQ(row.backlog, 0);
  // No backorder cost anywhere: every episode pays holding only.
  for (NodeId p : {1, 2}) EXPECT_LE(r.benchmark.node_mean_cost[static_cast<std::size_t>(p)], 50.0 * 20);
}

TEST(Da, ToyNetworkWithinFivePercentOfGrid) {
  const auto s = scenario_from_document(kToyDoc);
  const auto bsl = da_base_stock_levels(s);
  const double heuristic = simulated_cost(s, bsl, 100'000);
  double best = std::numeric_limits<double>::infinity();
  for (std::int64_t w = std::max<std::int64_t>(0, bsl[0] - 12); w <= bsl[0] + 12; w += 2)
    for (std::int64_t r1 = bsl[1] - 4; r1 <= bsl[1] + 4; ++r1)
      for (std::int64_t r2 = bsl[2] - 4; r2 <= bsl[2] + 4; ++r2)
        best = std::min(best, simulated_cost(s, {w, r1, r2}, 20'000));
  EXPECT_LE(heuristic, 1.05 * best) << "heuristic " << heuristic << " grid " << best;
}

TEST(Da, PreconditionViolationIsRefused) {
  const auto s = scenario_from_document(
      R"({"nodes":["W","R"],"edges":[["EXT","W"],["W","R"]],"costs":{"2":{"b":5}}})");
  try {
    da_heuristic(s, 0);
    FAIL() << "heuristic accepted a backorder cost upstream";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

TEST(BaseStockPolicy, OrderUpToExamples) {
  BaseStockPolicy policy({40}, {50});
  EXPECT_EQ(policy.raw_order(0, 40), 0);
  EXPECT_EQ(policy.raw_order(0, 33), 7);
  EXPECT_EQ(policy.raw_order(0, 40 - 60), 50);
  EXPECT_EQ(policy.raw_order(0, 45), 0);

  ObservationBatch obs;
  obs.nodes = 1;
  obs.envs = 3;
  obs.ip = {40, 33, -20};
  obs.scaled = {0.0, 0.0, 0.0};
  std::vector<double> actions(3);
  policy.act(obs, actions);
  EXPECT_EQ(decode_order(actions[0], 50), 0);
  EXPECT_EQ(decode_order(actions[1], 50), 7);
  EXPECT_EQ(decode_order(actions[2], 50), 50);
}

}  // namespace
}  // namespace meio
