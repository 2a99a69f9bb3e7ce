#include "meio/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "meio/error.hpp"
#include "meio/heuristic.hpp"

namespace meio {

namespace {

std::uint64_t text_key(std::string_view text) { return std::stoull(fnv1a_hex(text), nullptr, 16); }

std::uint64_t scenario_key(const ScenarioConfig& s) { return text_key(s.id + "|" + s.topology_hash); }

constexpr std::uint64_t kEvalDomain = 0xe7a1;
constexpr std::uint64_t kTrainDomain = 0x7a1e;

}  // namespace

std::shared_ptr<const ScenarioConfig> prepare_scenario(const std::string& id, const DataSource& data) {
  ScenarioConfig s = build_scenario(id, data);
  if (!s.has_base_stock()) s = s.with_base_stock(da_base_stock_levels(s));
  return std::make_shared<const ScenarioConfig>(std::move(s));
}

std::uint64_t evaluation_seed(std::uint64_t master_seed, const ScenarioConfig& scenario) {
  return derive_seed(master_seed, {kEvalDomain, scenario_key(scenario)});
}

std::uint64_t training_seed(std::uint64_t master_seed, const ScenarioConfig& scenario, ModelKind model,
                            int seed) {
  return derive_seed(master_seed, {kTrainDomain, scenario_key(scenario), static_cast<std::uint64_t>(model),
                                   static_cast<std::uint64_t>(seed)});
}

TrainConfig resolve_train_config(ModelKind model, const ScenarioConfig& scenario,
                                 const TrialOptions& options) {
  TrainConfig c = default_train_config(model, scenario.id);
  if (options.config_json) c = train_config_from_json(*options.config_json, c);
  if (options.episodes) {
    require(*options.episodes >= 0, ErrorKind::kInvalidParameter, "episode budget must be non-negative");
    c.episodes = *options.episodes;
  }
  return c;
}

TrialResult run_trial(const std::string& scenario_id, ModelKind model, int seed, const TrialOptions& options) {
  TrialResult r;
  r.scenario = scenario_id;
  r.model = std::string(to_string(model));
  r.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto scenario = prepare_scenario(scenario_id, options.data);
    r.scenario = scenario->id;
    r.resolved = scenario;
    const auto eval_seed = evaluation_seed(options.master_seed, *scenario);
    const auto train_seed = training_seed(options.master_seed, *scenario, model, seed);

    BaseStockPolicy benchmark(*scenario);
    const auto bench = evaluate_policy(benchmark, scenario, eval_seed);
    r.benchmark_cost = bench.mean_cost;

    switch (model) {
      case ModelKind::kHeuristic:
        r.curve.push_back({0, bench.mean_cost, bench.std_cost});
        if (options.keep_policy) r.policy = TrainedPolicy{"heuristic", {}, scenario->base_stock()};
        break;
      case ModelKind::kRandom: {
        RandomPolicy policy(train_seed);
        const auto eval = evaluate_policy(policy, scenario, eval_seed);
        r.curve.push_back({0, eval.mean_cost, eval.std_cost});
        break;
      }
      case ModelKind::kSarl:
      case ModelKind::kMarl:
      case ModelKind::kImarl: {
        const TrainConfig config = resolve_train_config(model, *scenario, options);
        TrainOutcome out = model == ModelKind::kSarl   ? train_sarl(scenario, config, train_seed, eval_seed)
                           : model == ModelKind::kMarl ? train_mappo(scenario, config, train_seed, eval_seed)
                                                       : train_imarl(scenario, config, train_seed, eval_seed,
                                                                     options.imarl);
        r.curve = std::move(out.curve);
        r.episodes = out.episodes;
        r.diverged = out.diverged;
        if (out.diverged) r.error = out.diagnostics;
        if (r.curve.empty()) r.curve.push_back({out.episodes, out.best_cost, out.best_eval.std_cost});
        if (options.keep_policy) r.policy = std::move(out.policy);
        break;
      }
    }
    r.best_cost = std::numeric_limits<double>::infinity();
    for (const auto& p : r.curve) r.best_cost = std::min(r.best_cost, p.mean_cost);
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------

const CellSummary* EvalReport::cell(const std::string& scenario, const std::string& model) const {
  for (const auto& c : cells)
    if (c.scenario == scenario && c.model == model) return &c;
  return nullptr;
}

EvalReport aggregate(std::vector<TrialResult> trials) {
  EvalReport report;
  auto note = [](std::vector<std::string>& list, const std::string& v) {
    if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
  };
  for (const auto& t : trials) {
    note(report.scenarios, t.scenario);
    note(report.models, t.model);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : report.scenarios) {
    for (const auto& m : report.models) {
      CellSummary c{s, m, nan, nan, nan, nan, nan, 0, 0};
      double sum = 0.0;
      int ok = 0;
      for (const auto& t : trials) {
        if (t.scenario != s || t.model != m) continue;
        ++c.trials;
        if (t.failed) {
          ++c.failed;
          continue;
        }
        c.best_cost = ok == 0 ? t.best_cost : std::min(c.best_cost, t.best_cost);
        c.benchmark_cost = t.benchmark_cost;
        sum += t.best_cost;
        ++ok;
      }
      if (c.trials == 0) continue;
      if (ok > 0) {
        c.mean_cost = sum / ok;
        c.best_savings = (c.benchmark_cost - c.best_cost) / c.benchmark_cost;
        c.mean_savings = (c.benchmark_cost - c.mean_cost) / c.benchmark_cost;
      }
      report.cells.push_back(c);
    }
  }
  report.trials = std::move(trials);
  return report;
}

EvalReport run_grid(const std::vector<std::string>& scenarios, const std::vector<ModelKind>& models,
                    const std::vector<int>& seeds, const TrialOptions& options, int jobs) {
  struct Job {
    std::string scenario;
    ModelKind model;
    int seed;
  };
  std::vector<Job> work;
  for (const auto& s : scenarios)
    for (auto m : models)
      for (int seed : seeds) work.push_back({s, m, seed});
  std::vector<TrialResult> results(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++)
      results[i] = run_trial(work[i].scenario, work[i].model, work[i].seed, options);
  };
  const int threads = std::clamp<int>(jobs, 1, static_cast<int>(std::max<std::size_t>(work.size(), 1)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  return aggregate(std::move(results));
}

// ---------------------------------------------------------------------------

PolicyMap policy_map(std::shared_ptr<const ScenarioConfig> scenario, Policy& policy, std::int64_t periods,
                     std::uint64_t seed) {
  require(periods > 0, ErrorKind::kInvalidParameter, "policy map needs at least one period");
  PolicyMap map;
  map.names = scenario->topology.names();
  const auto rows = simulate_trajectory(policy, scenario, periods, seed);
  map.rows.reserve(rows.size());
  for (const auto& r : rows) map.rows.push_back({r.period, r.stock_point, r.ip, r.order_placed});
  return map;
}

void write_policy_map_csv(std::ostream& out, const PolicyMap& map) {
  out << "period,stock_point,ip,order\n";
  for (const auto& r : map.rows)
    out << r.period << ',' << map.names[static_cast<std::size_t>(r.stock_point)] << ',' << r.ip << ','
        << r.order << '\n';
}

std::vector<OrderBin> binned_order_profile(const PolicyMap& map, NodeId stock_point, int bins,
                                           double lo_quantile, double hi_quantile) {
  require(bins > 0, ErrorKind::kInvalidParameter, "bin count must be positive");
  require(0.0 <= lo_quantile && lo_quantile < hi_quantile && hi_quantile <= 1.0,
          ErrorKind::kInvalidParameter, "quantile range must satisfy 0 <= lo < hi <= 1");
  std::vector<std::int64_t> ips;
  for (const auto& r : map.rows)
    if (r.stock_point == stock_point) ips.push_back(r.ip);
  if (ips.empty()) return {};
  std::sort(ips.begin(), ips.end());
  auto at = [&](double q) {
    const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(ips.size() - 1)));
    return static_cast<double>(ips[k]);
  };
  const double lo = at(lo_quantile);
  const double hi = at(hi_quantile);
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  std::vector<OrderBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].ip_lo = lo + b * width;
    out[static_cast<std::size_t>(b)].ip_hi = lo + (b + 1) * width;
  }
  for (const auto& r : map.rows) {
    if (r.stock_point != stock_point) continue;
    const double ip = static_cast<double>(r.ip);
    if (ip < lo || ip > hi) continue;
    const int b = std::min(bins - 1, static_cast<int>((ip - lo) / width));
    auto& bin = out[static_cast<std::size_t>(b)];
    bin.mean_order += static_cast<double>(r.order);
    ++bin.count;
  }
  std::vector<OrderBin> kept;
  for (auto& bin : out) {
    if (bin.count == 0) continue;
    bin.mean_order /= static_cast<double>(bin.count);
    kept.push_back(bin);
  }
  return kept;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::kIo,
          "malformed number '" + s + "' in report");
  return v;
}

long parse_long(const std::string& s) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::kIo,
          "malformed integer '" + s + "' in report");
  return v;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' || c == '\r' ? ' ' : c;
  }
  return out + '"';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  require(!out.fail(), ErrorKind::kIo, "failed writing " + path.string());
}

constexpr std::string_view kTrialHeader =
    "scenario,model,seed,best_cost,benchmark_cost,savings,episodes,diverged,failed,error";

void write_grid(std::ostream& out, const EvalReport& report, bool best) {
  out << "model";
  for (const auto& s : report.scenarios) out << ',' << quote(s);
  out << '\n';
  if (!report.scenarios.empty()) {
    out << "benchmark";
    for (const auto& s : report.scenarios) {
      double bench = std::numeric_limits<double>::quiet_NaN();
      for (const auto& c : report.cells)
        if (c.scenario == s && !std::isnan(c.benchmark_cost)) bench = c.benchmark_cost;
      out << ',' << fmt(bench);
    }
    out << '\n';
  }
  for (const auto& m : report.models) {
    out << quote(m);
    for (const auto& s : report.scenarios) {
      const auto* c = report.cell(s, m);
      out << ',' << fmt(c ? (best ? c->best_cost : c->mean_cost) : std::numeric_limits<double>::quiet_NaN());
    }
    out << '\n';
  }
}

constexpr std::string_view kReportReadme = R"(# Experiment report

Costs are unscaled simulated costs per evaluation episode (sum over the
scored periods after warm-up), averaged over the evaluation episodes.
Savings are (benchmark_cost - cost) / benchmark_cost; positive means cheaper
than the heuristic benchmark.

## grid_best.csv, grid_mean.csv
One row per model plus a `benchmark` row, one column per scenario.
`grid_best.csv` holds the best trial cost over seeds, `grid_mean.csv` the
mean over seeds. Failed trials are excluded; `nan` marks empty cells.

## cells.csv
- scenario, model: cell identity
- best_cost: minimum best_cost over successful seeds
- mean_cost: mean best_cost over successful seeds
- benchmark_cost: heuristic cost under the same evaluation seed
- best_savings, mean_savings: savings of best_cost and mean_cost
- trials: number of seeds run; failed: seeds that raised an error

## trials.csv
- scenario, model, seed: trial identity
- best_cost: lowest evaluation cost on the trial's learning curve
- benchmark_cost: heuristic cost under the same evaluation seed
- savings: (benchmark_cost - best_cost) / benchmark_cost
- episodes: training episodes run (0 for heuristic and random)
- diverged: 1 if training stopped on a non-finite loss or update
- failed: 1 if the trial raised an error; error: its message

## timing.csv
scenario, model, seed, wall_clock_s. Wall-clock time is the only
non-reproducible output and is kept apart from the files above.

## curves/<scenario>_<model>_seed<seed>.csv
- episode: training episodes completed at the evaluation
- eval_mean_cost, eval_std: mean and standard deviation over evaluation episodes

## policy_maps/<name>.csv
- period: simulation period
- stock_point: stock point name
- ip: inventory position observed before the decision
- order: units ordered in that period
)";

}  // namespace

std::string curve_file_name(const TrialResult& t) {
  std::string name = t.scenario + "_" + t.model + "_seed" + std::to_string(t.seed) + ".csv";
  for (char& c : name)
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  return name;
}

void write_trials_csv(std::ostream& out, const std::vector<TrialResult>& trials) {
  out << kTrialHeader << '\n';
  for (const auto& t : trials) {
    out << quote(t.scenario) << ',' << quote(t.model) << ',' << t.seed << ',' << fmt(t.best_cost) << ','
        << fmt(t.benchmark_cost) << ',' << fmt(t.failed ? std::numeric_limits<double>::quiet_NaN() : t.savings())
        << ',' << t.episodes << ',' << (t.diverged ? 1 : 0) << ',' << (t.failed ? 1 : 0) << ','
        << quote(t.error) << '\n';
  }
}

std::vector<TrialResult> read_trials_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kIo, "trials file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kTrialHeader, ErrorKind::kIo, "unexpected trials header: " + line);
  std::vector<TrialResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    require(f.size() == 10, ErrorKind::kIo, "trials row has " + std::to_string(f.size()) + " fields");
    TrialResult t;
    t.scenario = f[0];
    t.model = f[1];
    t.seed = static_cast<int>(parse_long(f[2]));
    t.best_cost = parse_double(f[3]);
    t.benchmark_cost = parse_double(f[4]);
    t.episodes = parse_long(f[6]);
    t.diverged = f[7] == "1";
    t.failed = f[8] == "1";
    t.error = f[9];
    out.push_back(std::move(t));
  }
  return out;
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "episode,eval_mean_cost,eval_std\n";
  for (const auto& p : curve) out << p.episode << ',' << fmt(p.mean_cost) << ',' << fmt(p.std_cost) << '\n';
}

std::vector<CurvePoint> read_curve_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kIo, "curve file is empty");
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    require(f.size() == 3, ErrorKind::kIo, "curve row must have 3 fields");
    out.push_back({parse_long(f[0]), parse_double(f[1]), parse_double(f[2])});
  }
  return out;
}

void export_report(const EvalReport& report, const std::filesystem::path& dir,
                   const std::map<std::string, PolicyMap>& policy_maps) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "curves", ec);
  require(!ec, ErrorKind::kIo, "cannot create " + (dir / "curves").string() + ": " + ec.message());

  auto write = [&](const std::filesystem::path& path, auto&& body) {
    auto out = open_out(path);
    body(out);
    close_out(out, path);
  };
  write(dir / "grid_best.csv", [&](std::ostream& o) { write_grid(o, report, true); });
  write(dir / "grid_mean.csv", [&](std::ostream& o) { write_grid(o, report, false); });
  write(dir / "cells.csv", [&](std::ostream& o) {
    o << "scenario,model,best_cost,mean_cost,benchmark_cost,best_savings,mean_savings,trials,failed\n";
    for (const auto& c : report.cells) {
      o << quote(c.scenario) << ',' << quote(c.model) << ',' << fmt(c.best_cost) << ',' << fmt(c.mean_cost)
        << ',' << fmt(c.benchmark_cost) << ',' << fmt(c.best_savings) << ',' << fmt(c.mean_savings) << ','
        << c.trials << ',' << c.failed << '\n';
    }
  });
  write(dir / "trials.csv", [&](std::ostream& o) { write_trials_csv(o, report.trials); });
  write(dir / "timing.csv", [&](std::ostream& o) {
    o << "scenario,model,seed,wall_clock_s\n";
    for (const auto& t : report.trials)
      o << quote(t.scenario) << ',' << quote(t.model) << ',' << t.seed << ',' << fmt(t.wall_clock_s) << '\n';
  });
  for (const auto& t : report.trials)
    write(dir / "curves" / curve_file_name(t), [&](std::ostream& o) { write_curve_csv(o, t.curve); });
  if (!policy_maps.empty()) {
    std::filesystem::create_directories(dir / "policy_maps", ec);
    require(!ec, ErrorKind::kIo, "cannot create policy_maps: " + ec.message());
    for (const auto& [name, map] : policy_maps)
      write(dir / "policy_maps" / (name + ".csv"), [&](std::ostream& o) { write_policy_map_csv(o, map); });
  }
  write(dir / "README.md", [&](std::ostream& o) { o << kReportReadme; });
}

EvalReport load_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "trials.csv");
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + (dir / "trials.csv").string());
  auto trials = read_trials_csv(in);
  for (auto& t : trials) {
    std::ifstream curve(dir / "curves" / curve_file_name(t));
    if (curve) t.curve = read_curve_csv(curve);
  }
  return aggregate(std::move(trials));
}

}  // namespace meio
