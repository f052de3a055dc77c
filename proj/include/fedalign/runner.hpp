#pragma once

// Command implementations behind the fedalign CLI. Exit codes: 0 success,
// 1 runtime failure, 2 configuration error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedalign/config.hpp"
#include "fedalign/domains.hpp"
#include "fedalign/federation.hpp"
#include "fedalign/format.hpp"
#include "fedalign/serialize.hpp"

namespace fedalign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

struct CommandOptions {
  std::optional<std::uint64_t> seed_override;
  bool quiet = false;
  std::size_t jobs = 1;
  std::ostream* log = &std::cerr;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace runner_detail {

namespace fs = std::filesystem;

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + p.string() + "'");
}

inline void progress(const CommandOptions& o, const std::string& line) {
  if (!o.quiet && o.log) *o.log << line << '\n';
}

inline void error_line(const CommandOptions& o, const std::string& line) {
  if (o.log) *o.log << "error: " << line << '\n';
}

// A run document is either a bare config or a manifest wrapping one.
inline Json config_section(const Json& doc) {
  if (doc.is_object() && doc.contains("manifest_version") && doc.contains("config")) return doc["config"];
  return doc;
}

}  // namespace runner_detail

struct RunOutcome {
  ExperimentResult result;
  Json summary;
};

// Executes a fully parsed run config and returns the result plus the
// summary document (without timestamp).
inline RunOutcome execute_run(const RunConfig& rc) {
  const DomainSuite suite = load_data(rc.data);
  const ModelSpec spec = model_spec_for(rc.model, suite);
  RunOutcome out{run_any(suite, rc.target, spec, rc.federation, rc.model.loss), {}};
  out.summary = summary_json(out.result);
  out.summary["seed"] = rc.federation.seed;
  out.summary["label_map"] = suite.label_names;
  out.summary["tool_version"] = kToolVersion;
  return out;
}

inline int cmd_run(const std::string& config_path, const std::string& out_dir, const CommandOptions& opts = {}) {
  namespace fs = std::filesystem;
  using namespace runner_detail;
  RunConfig rc;
  try {
    rc = parse_run_config(config_section(read_json_file(config_path)));
    if (opts.seed_override) rc.federation.seed = *opts.seed_override;
    rc.federation.validate();
  } catch (const Error& e) {
    error_line(opts, e.what());
    return kExitConfig;
  }

  try {
    progress(opts, "run: strategy=" + to_string(rc.federation.strategy) + " target=" + rc.target +
                       " rounds=" + std::to_string(rc.federation.rounds) + " seed=" + std::to_string(rc.federation.seed));
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const std::string stamp = utc_timestamp();

    Json manifest{{"manifest_version", 1},
                  {"tool", "fedalign"},
                  {"tool_version", kToolVersion},
                  {"timestamp", stamp},
                  {"config", to_json(rc)},
                  {"seeds", Json::array({rc.federation.seed})},
                  {"outputs",
                   {{"manifest", (dir / "manifest.json").string()},
                    {"rounds_csv", (dir / "rounds.csv").string()},
                    {"summary", (dir / "summary.json").string()},
                    {"result", (dir / "result.json").string()}}}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    RunOutcome outcome = execute_run(rc);
    outcome.summary["timestamp"] = stamp;

    std::ostringstream rounds;
    write_rounds_csv(outcome.result, rounds);
    write_text(dir / "rounds.csv", rounds.str());
    write_text(dir / "summary.json", outcome.summary.dump(2) + "\n");
    write_text(dir / "result.json", to_json(outcome.result).dump() + "\n");
    progress(opts, "run: final target accuracy " + format_real(outcome.result.final_target_metrics.accuracy));
    return kExitOk;
  } catch (const Error& e) {
    error_line(opts, e.what());
    return e.kind() == ErrorKind::ConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    error_line(opts, e.what());
    return kExitRuntime;
  }
}

struct SweepSpec {
  Json base;  // run config; target and federation.strategy are set per cell
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> targets;
  std::map<std::string, Json> overrides;  // strategy name -> federation patch
  bool vary_data_seed = true;
};

inline SweepSpec parse_sweep_spec(const Json& j) {
  using namespace config_detail;
  reject_unknown(j, "", {"base", "strategies", "seeds", "targets", "overrides", "vary_data_seed"});
  SweepSpec s;
  s.base = j.contains("base") ? j["base"] : Json::object();
  if (!s.base.is_object()) throw ConfigError("base", "expected an object");
  for (const auto& name : get_strings(j, "", "strategies")) s.strategies.push_back(parse_strategy(name, "strategies"));
  if (s.strategies.empty()) throw ConfigError("strategies", "must be a nonempty list");
  if (!j.contains("seeds") || !j["seeds"].is_array()) throw ConfigError("seeds", "must be a list of integers");
  for (const auto& v : j["seeds"]) {
    if (!v.is_number_unsigned()) throw ConfigError("seeds", "must be a list of nonnegative integers");
    s.seeds.push_back(v.get<std::uint64_t>());
  }
  if (s.seeds.empty()) throw ConfigError("seeds", "must be a nonempty list");
  s.targets = get_strings(j, "", "targets");
  if (s.targets.empty()) throw ConfigError("targets", "must be a nonempty list");
  if (j.contains("overrides")) {
    reject_unknown(j["overrides"], "overrides", {"deepall", "fedavg", "fedprox", "aligned"});
    for (auto it = j["overrides"].begin(); it != j["overrides"].end(); ++it) {
      if (!it.value().is_object()) throw ConfigError("overrides." + it.key(), "expected an object");
      s.overrides[it.key()] = it.value();
    }
  }
  s.vary_data_seed = get_bool(j, "", "vary_data_seed", s.vary_data_seed);
  return s;
}

// Resolved run config for one sweep cell. Strategy-specific federation keys
// from the base are dropped, then the strategy's override patch is merged.
inline RunConfig sweep_cell_config(const SweepSpec& s, Strategy strategy, const std::string& target, std::uint64_t seed) {
  Json doc = s.base;
  Json fed = doc.contains("federation") ? doc["federation"] : Json::object();
  for (const char* k : {"lambda", "mu", "pooled_batch_size", "strategy", "seed"}) fed.erase(k);
  fed["strategy"] = to_string(strategy);
  fed["seed"] = seed;
  if (auto it = s.overrides.find(to_string(strategy)); it != s.overrides.end()) fed.merge_patch(it->second);
  doc["federation"] = fed;
  doc["target"] = target;
  if (s.vary_data_seed && doc.contains("data") && doc["data"].contains("synthetic")) {
    doc["data"]["synthetic"]["seed"] = seed;
  }
  return parse_run_config(doc);
}

struct SweepCell {
  Strategy strategy = Strategy::fedavg;
  std::string target;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double loss = 0.0;
  ConflictStats conflicts;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // grid order: strategy, target, seed
  // strategy -> per-target mean accuracy (in sweep target order), plus Average.
  std::vector<std::pair<Strategy, std::vector<double>>> means;
  std::vector<std::string> targets;

  double average(Strategy s) const {
    for (const auto& [st, m] : means) {
      if (st == s) return m.back();
    }
    return 0.0;
  }
};

inline SweepResult execute_sweep(const SweepSpec& spec, std::size_t jobs = 1,
                                 const std::function<void(const SweepCell&)>& on_cell = {}) {
  SweepResult res;
  res.targets = spec.targets;
  for (Strategy st : spec.strategies) {
    for (const auto& t : spec.targets) {
      for (std::uint64_t seed : spec.seeds) {
        SweepCell cell;
        cell.strategy = st;
        cell.target = t;
        cell.seed = seed;
        res.cells.push_back(std::move(cell));
      }
    }
  }
  auto run_cell = [&spec](SweepCell& cell) {
    try {
      const RunConfig rc = sweep_cell_config(spec, cell.strategy, cell.target, cell.seed);
      const RunOutcome o = execute_run(rc);
      cell.accuracy = o.result.final_target_metrics.accuracy;
      cell.loss = o.result.final_target_metrics.loss;
      cell.conflicts = conflict_stats(o.result);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  };
  if (jobs <= 1) {
    for (auto& c : res.cells) {
      run_cell(c);
      if (on_cell) on_cell(c);
    }
  } else {
    // Each cell owns its state and streams; results land in grid order.
    std::size_t next = 0;
    while (next < res.cells.size()) {
      std::vector<std::future<void>> batch;
      const std::size_t end = std::min(res.cells.size(), next + jobs);
      for (std::size_t i = next; i < end; ++i) batch.push_back(std::async(std::launch::async, run_cell, std::ref(res.cells[i])));
      for (auto& f : batch) f.get();
      if (on_cell) {
        for (std::size_t i = next; i < end; ++i) on_cell(res.cells[i]);
      }
      next = end;
    }
  }

  for (Strategy st : spec.strategies) {
    std::vector<double> row;
    double total = 0.0;
    for (const auto& t : spec.targets) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& c : res.cells) {
        if (c.strategy == st && c.target == t && c.ok) {
          sum += c.accuracy;
          ++n;
        }
      }
      const double mean = n ? sum / static_cast<double>(n) : 0.0;
      row.push_back(mean);
      total += mean;
    }
    row.push_back(total / static_cast<double>(spec.targets.size()));
    res.means.emplace_back(st, std::move(row));
  }
  return res;
}

inline void write_sweep_results_csv(const SweepResult& r, std::ostream& out) {
  out << "strategy,target,seed,final_target_accuracy,final_target_loss,conflict_round_fraction,status,error\n";
  for (const auto& c : r.cells) {
    std::string err = c.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << to_string(c.strategy) << ',' << c.target << ',' << c.seed << ',' << format_real(c.accuracy) << ','
        << format_real(c.loss) << ',' << format_real(c.conflicts.conflict_fraction()) << ','
        << (c.ok ? "ok" : "failed") << ',' << err << '\n';
  }
}

// Strategies as rows, targets as columns, plus the row Average.
inline void write_sweep_aggregate_csv(const SweepResult& r, std::ostream& out) {
  out << "strategy";
  for (const auto& t : r.targets) out << ',' << t;
  out << ",Average\n";
  for (const auto& [st, row] : r.means) {
    out << to_string(st);
    for (double v : row) out << ',' << format_real(v);
    out << '\n';
  }
}

inline int cmd_sweep(const std::string& spec_path, const std::string& out_dir, const CommandOptions& opts = {}) {
  namespace fs = std::filesystem;
  using namespace runner_detail;
  SweepSpec spec;
  try {
    spec = parse_sweep_spec(read_json_file(spec_path));
    if (opts.seed_override) spec.seeds = {*opts.seed_override};
    // Validate every cell's config before running anything.
    for (Strategy st : spec.strategies) sweep_cell_config(spec, st, spec.targets.front(), spec.seeds.front());
  } catch (const Error& e) {
    error_line(opts, e.what());
    return kExitConfig;
  }

  try {
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    Json cells = Json::array();
    for (Strategy st : spec.strategies) {
      for (const auto& t : spec.targets) {
        for (auto seed : spec.seeds) cells.push_back(to_json(sweep_cell_config(spec, st, t, seed)));
      }
    }
    Json manifest{{"manifest_version", 1},
                  {"tool", "fedalign"},
                  {"tool_version", kToolVersion},
                  {"timestamp", utc_timestamp()},
                  {"sweep", read_json_file(spec_path)},
                  {"seeds", spec.seeds},
                  {"cells", cells},
                  {"outputs",
                   {{"results_csv", (dir / "results.csv").string()}, {"aggregate_csv", (dir / "aggregate.csv").string()}}}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    std::size_t done = 0;
    const std::size_t total = spec.strategies.size() * spec.targets.size() * spec.seeds.size();
    const SweepResult r = execute_sweep(spec, std::max<std::size_t>(1, opts.jobs), [&](const SweepCell& c) {
      ++done;
      progress(opts, "sweep [" + std::to_string(done) + "/" + std::to_string(total) + "] " + to_string(c.strategy) +
                         " target=" + c.target + " seed=" + std::to_string(c.seed) + " " +
                         (c.ok ? "acc=" + format_real(c.accuracy) : "FAILED: " + c.error));
    });

    std::ostringstream results, aggregate;
    write_sweep_results_csv(r, results);
    write_sweep_aggregate_csv(r, aggregate);
    write_text(dir / "results.csv", results.str());
    write_text(dir / "aggregate.csv", aggregate.str());
    if (!opts.quiet && opts.log) *opts.log << aggregate.str();

    for (const auto& c : r.cells) {
      if (!c.ok) return kExitRuntime;
    }
    return kExitOk;
  } catch (const Error& e) {
    error_line(opts, e.what());
    return e.kind() == ErrorKind::ConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    error_line(opts, e.what());
    return kExitRuntime;
  }
}

// The input file holds a synthetic dataset description; absent fields take
// the default benchmark values.
inline int cmd_gen_data(const std::string& spec_path, const std::string& out_csv, const CommandOptions& opts = {}) {
  using namespace runner_detail;
  SyntheticSpec spec;
  try {
    Json doc = read_json_file(spec_path);
    if (doc.is_object() && doc.contains("synthetic")) doc = doc["synthetic"];
    spec = parse_synthetic(doc, "");
    if (opts.seed_override) spec.seed = *opts.seed_override;
  } catch (const Error& e) {
    error_line(opts, e.what());
    return kExitConfig;
  }
  try {
    const DomainSuite suite = generate(spec);
    write_csv(suite, out_csv);
    progress(opts, "gen-data: wrote " + std::to_string(spec.num_domains * spec.samples_per_domain) + " rows to " + out_csv);
    return kExitOk;
  } catch (const std::exception& e) {
    error_line(opts, e.what());
    return kExitRuntime;
  }
}

}  // namespace fedalign
