#include "meio/network.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "meio/error.hpp"

namespace meio {

namespace detail {
extern const std::string_view kSmallDivergent;
extern const std::string_view kSmallGeneral;
extern const std::string_view kLargeDivergent;
extern const std::string_view kLargeGeneral;
}  // namespace detail

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& message) { fail(ErrorKind::kValidation, message); }

}  // namespace

NetworkTopology::NetworkTopology(std::vector<std::string> names, std::vector<SupplyEdge> edges,
                                 const std::map<std::string, int>& echelon_overrides)
    : names_(std::move(names)), edges_(std::move(edges)) {
  const int n = size();
  if (n == 0) invalid("network has no stock points");
  {
    std::set<std::string> seen;
    for (const auto& name : names_) {
      if (name.empty()) invalid("stock point with empty name");
      if (name == "EXT") invalid("'EXT' is reserved for the external supplier");
      if (!seen.insert(name).second) invalid("duplicate stock point '" + name + "'");
    }
  }

  std::sort(edges_.begin(), edges_.end());
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    if (e.to < 0 || e.to >= n || e.from < kExternalSupplier || e.from >= n)
      invalid("edge refers to an unknown stock point");
    if (e.from == e.to) invalid("cycle: self-loop at '" + names_[idx(e.to)] + "'");
    if (i > 0 && edges_[i - 1] == e) {
      invalid("duplicate edge " + (e.external() ? std::string("EXT") : names_[idx(e.from)]) +
              " -> " + names_[idx(e.to)]);
    }
  }

  inbound_.assign(idx(n), {});
  outbound_.assign(idx(n), {});
  for (int i = 0; i < static_cast<int>(edges_.size()); ++i) {
    const auto& e = edges_[static_cast<std::size_t>(i)];
    inbound_[idx(e.to)].push_back(i);
    if (!e.external()) outbound_[idx(e.from)].push_back(i);
  }
  for (NodeId p = 0; p < n; ++p) {
    if (inbound_[idx(p)].empty()) {
      invalid("orphan stock point '" + names_[idx(p)] + "' has no supplier");
    }
  }

  // Kahn's algorithm from the external source; anything left over sits on a cycle.
  std::vector<int> pending(idx(n), 0);
  for (NodeId p = 0; p < n; ++p) {
    for (int e : inbound_[idx(p)])
      if (!edges_[idx(e)].external()) ++pending[idx(p)];
  }
  std::vector<NodeId> ready;
  for (NodeId p = 0; p < n; ++p)
    if (pending[idx(p)] == 0) ready.push_back(p);
  while (!ready.empty()) {
    std::sort(ready.begin(), ready.end(), std::greater<>());
    const NodeId p = ready.back();
    ready.pop_back();
    topo_order_.push_back(p);
    for (int e : outbound_[idx(p)]) {
      const NodeId d = edges_[idx(e)].to;
      if (--pending[idx(d)] == 0) ready.push_back(d);
    }
  }
  if (static_cast<int>(topo_order_.size()) != n) {
    for (NodeId p = 0; p < n; ++p) {
      if (pending[idx(p)] > 0) invalid("cycle detected through stock point '" + names_[idx(p)] + "'");
    }
  }

  // Longest path to external demand, plus one.
  echelon_.assign(idx(n), 1);
  for (auto it = topo_order_.rbegin(); it != topo_order_.rend(); ++it) {
    int e = 1;
    for (int out : outbound_[idx(*it)]) e = std::max(e, echelon_[idx(edges_[idx(out)].to)] + 1);
    echelon_[idx(*it)] = e;
  }
  for (const auto& [name, level] : echelon_overrides) {
    const NodeId p = index_of(name);
    if (level < 1) invalid("echelon override for '" + name + "' must be >= 1");
    if (level == 1 && !is_retailer(p))
      invalid("retailer '" + name + "' has internal customers");
    echelon_[idx(p)] = level;
  }
  for (const auto& e : edges_) {
    if (!e.external() && echelon_[idx(e.from)] <= echelon_[idx(e.to)]) {
      invalid("echelon of supplier '" + names_[idx(e.from)] + "' must exceed that of '" +
              names_[idx(e.to)] + "'");
    }
  }
}

NodeId NetworkTopology::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) invalid("unknown stock point '" + std::string(name) + "'");
  return static_cast<NodeId>(it - names_.begin());
}

std::vector<NodeId> NetworkTopology::suppliers(NodeId p) const {
  std::vector<NodeId> out;
  for (int e : inbound_[idx(p)]) out.push_back(edges_[idx(e)].from);
  return out;
}

std::vector<NodeId> NetworkTopology::customers(NodeId p) const {
  std::vector<NodeId> out;
  for (int e : outbound_[idx(p)]) out.push_back(edges_[idx(e)].to);
  return out;
}

int NetworkTopology::echelon_count() const {
  return *std::max_element(echelon_.begin(), echelon_.end());
}

std::vector<NodeId> NetworkTopology::retailers() const {
  std::vector<NodeId> out;
  for (NodeId p = 0; p < size(); ++p)
    if (is_retailer(p)) out.push_back(p);
  return out;
}

std::vector<NodeId> NetworkTopology::descendants(NodeId p) const {
  std::set<NodeId> seen;
  std::vector<NodeId> stack = customers(p);
  while (!stack.empty()) {
    const NodeId d = stack.back();
    stack.pop_back();
    if (!seen.insert(d).second) continue;
    for (NodeId c : customers(d)) stack.push_back(c);
  }
  return {seen.begin(), seen.end()};
}

std::vector<NodeId> NetworkTopology::neighbours(NodeId p) const {
  std::set<NodeId> out;
  for (NodeId s : suppliers(p))
    if (s != kExternalSupplier) out.insert(s);
  for (NodeId c : customers(p)) out.insert(c);
  return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------

namespace {

json parse_document(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfiguration, std::string("malformed network document: ") + e.what());
  }
}

NetworkTopology topology_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("nodes") || !doc.contains("edges"))
    fail(ErrorKind::kConfiguration, "network document needs 'nodes' and 'edges'");
  std::vector<std::string> names;
  for (const auto& n : doc.at("nodes")) names.push_back(n.get<std::string>());

  auto lookup = [&](const std::string& name) -> NodeId {
    if (name == "EXT") return kExternalSupplier;
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) invalid("edge refers to unknown stock point '" + name + "'");
    return static_cast<NodeId>(it - names.begin());
  };
  std::vector<SupplyEdge> edges;
  for (const auto& e : doc.at("edges")) {
    if (!e.is_array() || e.size() != 2) fail(ErrorKind::kConfiguration, "edges must be [from, to] pairs");
    const auto to = e[1].get<std::string>();
    if (to == "EXT") invalid("the external supplier cannot be a customer");
    edges.push_back({lookup(e[0].get<std::string>()), lookup(to)});
  }
  std::map<std::string, int> overrides;
  if (doc.contains("echelon_overrides")) {
    for (const auto& [k, v] : doc.at("echelon_overrides").items()) overrides[k] = v.get<int>();
  }
  return NetworkTopology(std::move(names), std::move(edges), overrides);
}

}  // namespace

NetworkTopology load_topology(std::string_view config_text) {
  try {
    return topology_from_json(parse_document(config_text));
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfiguration, std::string("bad network document: ") + e.what());
  }
}

const std::vector<EchelonParams>& default_echelon_table() {
  static const std::vector<EchelonParams> table{
      {1.0, 19.0, 50, -100, 50},
      {0.6, 0.0, 150, -300, 150},
      {0.4, 0.0, 500, -1000, 500},
  };
  return table;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string_view builtin_topology(std::string_view structure) {
  if (structure == "small_divergent") return detail::kSmallDivergent;
  if (structure == "small_general") return detail::kSmallGeneral;
  if (structure == "large_divergent") return detail::kLargeDivergent;
  if (structure == "large_general") return detail::kLargeGeneral;
  fail(ErrorKind::kInvalidParameter, "unknown built-in topology '" + std::string(structure) + "'");
}

bool ScenarioConfig::has_base_stock() const {
  return std::all_of(params.begin(), params.end(), [](const auto& p) { return p.bsl.has_value(); });
}

std::vector<std::int64_t> ScenarioConfig::base_stock() const {
  std::vector<std::int64_t> out;
  for (NodeId p = 0; p < size(); ++p) {
    require(at(p).bsl.has_value(), ErrorKind::kConfiguration,
            "missing base-stock level for '" + topology.name(p) + "'");
    out.push_back(*at(p).bsl);
  }
  return out;
}

ScenarioConfig ScenarioConfig::with_base_stock(const std::vector<std::int64_t>& bsl) const {
  require(static_cast<int>(bsl.size()) == size(), ErrorKind::kConfiguration,
          "base-stock map must cover every stock point");
  ScenarioConfig copy = *this;
  for (std::size_t i = 0; i < bsl.size(); ++i) copy.params[i].bsl = bsl[i];
  return copy;
}

// ---------------------------------------------------------------------------

namespace {

struct GridRow {
  const char* id;
  const char* structure;
  bool empirical_demand;
  LeadTimeSpec::Kind lead;
};

const std::vector<GridRow>& grid_rows() {
  using K = LeadTimeSpec::Kind;
  static const std::vector<GridRow> rows{
      {"A1", "small_divergent", false, K::kStatic},  {"A2", "small_divergent", true, K::kStatic},
      {"A3", "small_divergent", false, K::kUniform}, {"A4", "small_divergent", true, K::kEmpirical},
      {"B1", "small_general", false, K::kStatic},    {"B2", "small_general", true, K::kStatic},
      {"B3", "small_general", false, K::kUniform},   {"B4", "small_general", true, K::kEmpirical},
      {"C1", "large_divergent", false, K::kStatic},  {"C2", "large_divergent", true, K::kStatic},
      {"C3", "large_divergent", false, K::kUniform}, {"C4", "large_divergent", true, K::kEmpirical},
      {"D1", "large_general", false, K::kStatic},
  };
  return rows;
}

const SeriesTable& need_table(const std::optional<SeriesTable>& t, const std::string& what,
                              const std::string& id) {
  if (!t || t->column_count() == 0)
    fail(ErrorKind::kMissingData, "scenario " + id + " needs " + what + " data");
  return *t;
}

EchelonParams echelon_params(const json& doc, int echelon) {
  const auto& table = default_echelon_table();
  EchelonParams p;
  if (echelon <= static_cast<int>(table.size())) p = table[static_cast<std::size_t>(echelon - 1)];
  const auto key = std::to_string(echelon);
  bool have_costs = echelon <= static_cast<int>(table.size());
  bool have_bounds = have_costs;
  if (doc.contains("costs") && doc["costs"].contains(key)) {
    const auto& c = doc["costs"][key];
    p.h = c.value("h", p.h);
    p.b = c.value("b", p.b);
    have_costs = true;
  }
  if (doc.contains("bounds") && doc["bounds"].contains(key)) {
    const auto& b = doc["bounds"][key];
    p.o_max = b.value("o_max", p.o_max);
    p.ip_min = b.value("ip_min", p.ip_min);
    p.ip_max_offset = b.value("ip_max_offset", p.ip_max_offset);
    have_bounds = true;
  }
  require(have_costs && have_bounds, ErrorKind::kConfiguration,
          "no costs/bounds for echelon " + key);
  return p;
}

DemandSpec demand_from_json(const json& d, const DataSource& data, std::size_t retailer_index,
                            const std::string& id) {
  const auto kind = d.at("kind").get<std::string>();
  if (kind == "poisson_uniform") return DemandSpec::poisson_uniform(d.at("lo"), d.at("hi"));
  if (kind == "point") return DemandSpec::point_mass(d.at("value").get<std::int64_t>());
  if (kind == "empirical") {
    const auto& table = need_table(data.demand, "demand", id);
    std::size_t col = retailer_index % table.column_count();
    if (d.contains("column")) {
      const auto name = d["column"].get<std::string>();
      auto it = std::find(table.names.begin(), table.names.end(), name);
      require(it != table.names.end(), ErrorKind::kMissingData, "no demand column '" + name + "'");
      col = static_cast<std::size_t>(it - table.names.begin());
    }
    return DemandSpec::empirical(table.names[col], table.columns[col],
                                 d.value("mean", kEmpiricalDemandMean));
  }
  fail(ErrorKind::kConfiguration, "unknown demand kind '" + kind + "'");
}

LeadTimeSpec lead_from_json(const json& l, const DataSource& data, std::size_t edge_index,
                            const std::string& id) {
  const auto kind = l.at("kind").get<std::string>();
  if (kind == "static") return LeadTimeSpec::fixed(l.at("value").get<std::int64_t>());
  if (kind == "uniform")
    return LeadTimeSpec::uniform(l.at("lo").get<std::int64_t>(), l.at("hi").get<std::int64_t>());
  if (kind == "empirical") {
    const auto& table = need_table(data.lead_time, "lead-time", id);
    const std::size_t col = edge_index % table.column_count();
    return LeadTimeSpec::empirical(table.names[col], table.columns[col],
                                   l.value("mean", kEmpiricalLeadMean));
  }
  fail(ErrorKind::kConfiguration, "unknown lead_time kind '" + kind + "'");
}

}  // namespace

ScenarioConfig scenario_from_document(std::string_view text, const DataSource& data,
                                      std::string id) {
  const json doc = parse_document(text);
  try {
    ScenarioConfig s;
    s.topology = topology_from_json(doc);
    s.structure = doc.value("name", std::string("custom"));
    s.id = id.empty() ? s.structure : std::move(id);
    s.topology_hash = fnv1a_hex(text);
    s.episode_length = doc.value("episode_length", 128);
    if (doc.contains("evaluation")) {
      const auto& ev = doc["evaluation"];
      s.evaluation.episodes = ev.value("episodes", s.evaluation.episodes);
      s.evaluation.steps = ev.value("steps", s.evaluation.steps);
      s.evaluation.warmup = ev.value("warmup", s.evaluation.warmup);
    }
    require(s.evaluation.warmup < s.evaluation.steps, ErrorKind::kConfiguration,
            "evaluation warmup must be shorter than the episode");

    const auto& topo = s.topology;
    const json demand_doc = doc.value("demand", json{{"kind", "poisson_uniform"}, {"lo", 5}, {"hi", 15}});
    const json lead_doc = doc.value("lead_time", json{{"kind", "static"}, {"value", 1}});
    const bool per_node_demand = !demand_doc.contains("kind");
    const bool per_node_lead = !lead_doc.contains("kind");
    if (per_node_demand) {
      for (const auto& [name, _] : demand_doc.items()) {
        if (!topo.is_retailer(topo.index_of(name)))
          invalid("demand given for '" + name + "', which has internal customers");
      }
    }

    s.params.resize(static_cast<std::size_t>(topo.size()));
    std::size_t retailer_index = 0;
    for (NodeId p = 0; p < topo.size(); ++p) {
      auto& sp = s.params[static_cast<std::size_t>(p)];
      const auto e = echelon_params(doc, topo.echelon(p));
      sp.h = e.h;
      sp.b = e.b;
      sp.o_max = e.o_max;
      sp.ip_min = e.ip_min;
      sp.ip_max_offset = e.ip_max_offset;
      if (topo.is_retailer(p)) {
        const json* d = &demand_doc;
        if (per_node_demand) {
          require(demand_doc.contains(topo.name(p)), ErrorKind::kConfiguration,
                  "no demand for retailer '" + topo.name(p) + "'");
          d = &demand_doc.at(topo.name(p));
        }
        sp.demand = demand_from_json(*d, data, retailer_index++, s.id);
      }
      for (int edge : topo.inbound_edges(p)) {
        const json* l = &lead_doc;
        json local;
        if (per_node_lead) {
          const auto& from = topo.edges()[static_cast<std::size_t>(edge)];
          const auto key = (from.external() ? std::string("EXT") : topo.name(from.from)) + "->" +
                           topo.name(p);
          require(lead_doc.contains(key), ErrorKind::kConfiguration, "no lead_time for edge " + key);
          local = lead_doc.at(key);
          l = &local;
        }
        sp.lead_in.push_back(lead_from_json(*l, data, static_cast<std::size_t>(edge), s.id));
      }
    }
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfiguration, std::string("bad scenario document: ") + e.what());
  }
}

const std::vector<std::string>& named_scenarios() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& r : grid_rows()) out.emplace_back(r.id);
    return out;
  }();
  return ids;
}

bool is_named_scenario(std::string_view id) {
  const auto& ids = named_scenarios();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

ScenarioConfig build_scenario(std::string_view id, const DataSource& data) {
  const auto& rows = grid_rows();
  auto row = std::find_if(rows.begin(), rows.end(), [&](const GridRow& r) { return r.id == id; });
  if (row == rows.end()) {
    std::ifstream in{std::string(id)};
    require(in.good(), ErrorKind::kInvalidParameter,
            "'" + std::string(id) + "' is neither a named scenario nor a readable file");
    std::stringstream buf;
    buf << in.rdbuf();
    return scenario_from_document(buf.str(), data);
  }

  json doc = json::parse(builtin_topology(row->structure));
  if (row->empirical_demand) doc["demand"] = {{"kind", "empirical"}};
  else doc["demand"] = {{"kind", "poisson_uniform"}, {"lo", 5}, {"hi", 15}};
  switch (row->lead) {
    case LeadTimeSpec::Kind::kStatic: doc["lead_time"] = {{"kind", "static"}, {"value", 1}}; break;
    case LeadTimeSpec::Kind::kUniform:
      doc["lead_time"] = {{"kind", "uniform"}, {"lo", 1}, {"hi", 5}};
      break;
    case LeadTimeSpec::Kind::kEmpirical: doc["lead_time"] = {{"kind", "empirical"}}; break;
  }
  ScenarioConfig s = scenario_from_document(doc.dump(), data, row->id);
  s.structure = row->structure;
  s.topology_hash = fnv1a_hex(builtin_topology(row->structure));
  return s;
}

PreconditionReport validate_heuristic_preconditions(const ScenarioConfig& scenario) {
  PreconditionReport report;
  const auto& topo = scenario.topology;
  for (NodeId p = 0; p < topo.size(); ++p) {
    const auto& sp = scenario.at(p);
    const auto& name = topo.name(p);
    if (sp.b > 0.0 && !topo.is_retailer(p))
      report.violations.push_back("backorder cost at non-retailer '" + name + "'");
    if (sp.h < 0.0) report.violations.push_back("negative holding cost at '" + name + "'");
    if (topo.is_retailer(p) && !sp.demand)
      report.violations.push_back("retailer '" + name + "' has no demand law");
    if (!topo.is_retailer(p) && sp.demand)
      report.violations.push_back("non-retailer '" + name + "' has external demand");
    for (NodeId d : topo.customers(p)) {
      if (!(scenario.at(d).h > sp.h)) {
        report.violations.push_back("holding cost does not increase from '" + name + "' to '" +
                                    topo.name(d) + "'");
      }
    }
  }
  return report;
}

}  // namespace meio
