#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meio/distributions.hpp"

namespace meio {

/// Index of a stock point within a topology.
using NodeId = int;

/// Sentinel supplier standing for the unlimited outside source.
inline constexpr NodeId kExternalSupplier = -1;

struct SupplyEdge {
  NodeId from = kExternalSupplier;  // kExternalSupplier or an internal stock point
  NodeId to = 0;

  bool external() const { return from == kExternalSupplier; }
  auto operator<=>(const SupplyEdge&) const = default;
};

/// Directed acyclic supply network. Echelon 1 holds the retailers (no
/// internal customers); higher echelons sit further upstream.
class NetworkTopology {
 public:
  NetworkTopology() = default;

  /// Validates and indexes the network. `edges` may be listed in any order.
  /// Throws ErrorKind::kValidation naming the offending node or edge.
  NetworkTopology(std::vector<std::string> names, std::vector<SupplyEdge> edges,
                  const std::map<std::string, int>& echelon_overrides = {});

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(NodeId p) const { return names_.at(static_cast<std::size_t>(p)); }
  const std::vector<std::string>& names() const { return names_; }
  NodeId index_of(std::string_view name) const;

  /// Sorted by (from, to); external edges first.
  const std::vector<SupplyEdge>& edges() const { return edges_; }
  /// Edge indices into edges() for every supplier of p, internal or external.
  const std::vector<int>& inbound_edges(NodeId p) const { return inbound_[idx(p)]; }
  /// Edge indices into edges() for every internal customer of p.
  const std::vector<int>& outbound_edges(NodeId p) const { return outbound_[idx(p)]; }
  /// Supplier ids (kExternalSupplier for the outside source), aligned with inbound_edges().
  std::vector<NodeId> suppliers(NodeId p) const;
  std::vector<NodeId> customers(NodeId p) const;
  int supplier_count(NodeId p) const { return static_cast<int>(inbound_[idx(p)].size()); }

  int echelon(NodeId p) const { return echelon_[idx(p)]; }
  int echelon_count() const;
  bool is_retailer(NodeId p) const { return outbound_[idx(p)].empty(); }
  std::vector<NodeId> retailers() const;

  /// Every stock point strictly downstream of p (transitive customers).
  std::vector<NodeId> descendants(NodeId p) const;
  /// Direct internal suppliers and customers of p, deduplicated and sorted.
  std::vector<NodeId> neighbours(NodeId p) const;
  /// Stock points ordered so every supplier precedes its customers.
  const std::vector<NodeId>& topological_order() const { return topo_order_; }

 private:
  std::size_t idx(NodeId p) const { return static_cast<std::size_t>(p); }

  std::vector<std::string> names_;
  std::vector<SupplyEdge> edges_;
  std::vector<std::vector<int>> inbound_;
  std::vector<std::vector<int>> outbound_;
  std::vector<int> echelon_;
  std::vector<NodeId> topo_order_;
};

/// Parses the `nodes`, `edges` and `echelon_overrides` fields of a JSON
/// network document. Edge endpoints named "EXT" denote the external supplier.
NetworkTopology load_topology(std::string_view config_text);

/// Per-echelon cost and bound table.
struct EchelonParams {
  double h = 0.0;
  double b = 0.0;
  std::int64_t o_max = 0;
  std::int64_t ip_min = 0;
  std::int64_t ip_max_offset = 0;  // ip_max = bsl + offset
};

/// Default values per echelon (index 0 is echelon 1).
const std::vector<EchelonParams>& default_echelon_table();

struct StockPointParams {
  double h = 0.0;
  double b = 0.0;
  std::optional<DemandSpec> demand;     // retailers only
  std::vector<LeadTimeSpec> lead_in;    // aligned with NetworkTopology::inbound_edges
  std::int64_t o_max = 0;
  std::int64_t ip_min = 0;
  std::int64_t ip_max_offset = 0;
  std::optional<std::int64_t> bsl;      // filled by the heuristic

  std::int64_t ip_max() const { return bsl.value_or(0) + ip_max_offset; }
};

struct EvaluationProtocol {
  int episodes = 100;
  int steps = 75;
  int warmup = 25;

  int scored_periods() const { return steps - warmup; }
};

struct ScenarioConfig {
  std::string id;
  std::string structure;        // e.g. "small_divergent" or the file's name field
  std::string topology_hash;    // FNV-1a of the topology document
  NetworkTopology topology;
  std::vector<StockPointParams> params;
  int episode_length = 128;
  EvaluationProtocol evaluation;

  int size() const { return topology.size(); }
  const StockPointParams& at(NodeId p) const { return params.at(static_cast<std::size_t>(p)); }
  bool has_base_stock() const;
  std::vector<std::int64_t> base_stock() const;
  /// Copy with bsl filled in for every stock point.
  ScenarioConfig with_base_stock(const std::vector<std::int64_t>& bsl) const;
};

/// Empirical series used by the real-life-data scenarios.
struct DataSource {
  std::optional<SeriesTable> demand;
  std::optional<SeriesTable> lead_time;
};

inline constexpr double kEmpiricalDemandMean = 10.0;
inline constexpr double kEmpiricalLeadMean = 3.0;

/// The thirteen named scenarios, in grid order.
const std::vector<std::string>& named_scenarios();
bool is_named_scenario(std::string_view id);

/// Builds a named scenario (A1..D1) or, for any other id, reads it as a path
/// to a scenario document. Empirical scenarios require the matching data.
ScenarioConfig build_scenario(std::string_view id, const DataSource& data = {});

/// Builds a scenario from a JSON document (topology plus demand, lead_time,
/// costs, bounds and protocol fields).
ScenarioConfig scenario_from_document(std::string_view text, const DataSource& data = {},
                                      std::string id = {});

/// Text of a built-in topology: small_divergent, small_general,
/// large_divergent or large_general.
std::string_view builtin_topology(std::string_view structure);

std::string fnv1a_hex(std::string_view text);

struct PreconditionReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks the conditions the decomposition benchmark relies on: backorder
/// costs only at retailers, holding cost strictly increasing downstream, and
/// exactly one demand law per retailer.
PreconditionReport validate_heuristic_preconditions(const ScenarioConfig& scenario);

}  // namespace meio
