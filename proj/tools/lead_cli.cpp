// Experiment driver. Each subcommand writes
// <out>/<run-id>/{config.snapshot, records.csv, summary.csv}.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lead/acceptance.hpp"
#include "lead/hashing.hpp"
#include "lead/learned_hash.hpp"

namespace fs = std::filesystem;
using namespace lead;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed, nodes, vnodes, dataset, take, topology, ranges, systems;
  bool assert_criteria = false;
  std::string out = "results";
};

ExperimentConfig build_config(const Options& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config_path);
  auto apply = [&cfg](const char* key, const std::string& v) {
    if (!v.empty()) cfg.set(key, v);
  };
  apply("seed", o.seed);
  apply("nodes", o.nodes);
  apply("vnodes_per_node", o.vnodes);
  apply("dataset", o.dataset);
  apply("dataset.take", o.take);
  apply("topology", o.topology);
  apply("ranges", o.ranges);
  apply("systems", o.systems);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("invalid-config", "--set expects key=value, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::string run_id(const std::string& command, const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fmix64(fnv1a64(command + "\n" + cfg.snapshot()))));
  return command + "-" + buf;
}

fs::path results_dir(const Options& o) {
  if (const char* env = std::getenv("LEAD_RESULTS_DIR"); env && *env) return env;
  return o.out;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("io-error", p.string());
  f << text;
}

struct Outcome {
  std::string records;
  std::string summary;
  std::vector<CriterionResult> checks;
};

std::string csv(const Table& t) {
  std::ostringstream os;
  write_table_csv(os, t);
  return os.str();
}

Outcome finish(const BenchOutput& b, std::vector<CriterionResult> checks = {}) {
  std::ostringstream rec;
  write_records_csv(rec, b.records);
  return {rec.str(), csv(b.summary), std::move(checks)};
}

Outcome run_train(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto keys = make_keys(cfg);
  const TrainingSet eval(keys);
  Table records{{"family", "branching", "max_log2_error", "avg_log2_error", "size_bytes"}, {}};
  for (const char* family : {"linear", "cubic", "radix"}) {
    ExperimentConfig c = cfg;
    c.set("model.family", family);
    const auto model = make_model(c, keys);
    const auto st = error_stats(*model, eval);
    records.rows.push_back({family, std::to_string(model->branching()), fmt(st.max_log2_error),
                            fmt(st.avg_log2_error), std::to_string(st.size_bytes)});
  }
  const auto model = make_model(cfg, keys);
  const auto st = error_stats(*model, eval);
  const auto blob = serialize_full(*model);
  std::ofstream(dir / "model.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  Table summary{{"keys", "family", "branching", "max_log2_error", "avg_log2_error", "size_bytes"},
                {{std::to_string(keys.size()), to_string(model->family()), std::to_string(model->branching()),
                  fmt(st.max_log2_error), fmt(st.avg_log2_error), std::to_string(st.size_bytes)}}};
  return {csv(records), csv(summary), {}};
}

Outcome run_command(const std::string& command, const ExperimentConfig& cfg, const fs::path& dir) {
  if (command == "train") return run_train(cfg, dir);
  if (command == "bench-range") {
    std::map<std::pair<std::string, std::int64_t>, RangeStat> st;
    auto b = bench_range(cfg, &st);
    return finish(b, check_range(cfg, st));
  }
  if (command == "bench-lookup") {
    std::map<std::string, LookupStat> st;
    auto b = bench_lookup(cfg, &st);
    return finish(b, {check_lookup(cfg, st)});
  }
  if (command == "bench-churn") {
    std::map<std::string, ChurnStat> st;
    auto b = bench_churn(cfg, &st);
    return finish(b, {check_churn(st)});
  }
  if (command == "bench-balance") {
    std::map<int, BalanceStat> st;
    std::string heatmap;
    auto b = bench_balance(cfg, &st, &heatmap);
    write_file(dir / "heatmap.csv", heatmap);
    return finish(b, {check_balance(st)});
  }
  if (command == "bench-update") {
    UpdateStat st;
    auto b = bench_update(cfg, &st);
    return finish(b, {check_drift(st), check_convergence(cfg, st)});
  }
  // compare: the full acceptance suite.
  auto results = run_acceptance(cfg, [](const CriterionResult& r) { std::cerr << format_result(r) << "\n"; });
  Table t{{"criterion", "name", "pass", "detail"}, {}};
  std::size_t passed = 0;
  for (const auto& r : results) {
    t.rows.push_back({std::to_string(r.id), r.name, r.pass ? "1" : "0", "\"" + r.detail + "\""});
    passed += r.pass;
  }
  Table s{{"criteria", "passed"}, {{std::to_string(results.size()), std::to_string(passed)}}};
  return {csv(t), csv(s), std::move(results)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEAD experiment driver"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train the learned hash and report model size and error"},
      {"bench-range", "range-query messages and latency, LEAD vs batched Chord"},
      {"bench-lookup", "single-key lookups, LEAD vs Chord"},
      {"bench-churn", "range queries under node churn"},
      {"bench-balance", "per-node load vs virtual nodes per node"},
      {"bench-update", "load drift and FRM model updates"},
      {"compare", "run every acceptance criterion"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "config file of key = value lines");
    sub->add_option("--set", o.sets, "override a config key (key=value)");
    sub->add_option("--seed", o.seed, "RNG seed");
    sub->add_option("--nodes", o.nodes, "number of physical nodes");
    sub->add_option("--vnodes", o.vnodes, "virtual peers per node");
    sub->add_option("--dataset", o.dataset, "uniform, lognormal, clustered, pareto or a SOSD file path");
    sub->add_option("--take", o.take, "subsample the dataset to N keys");
    sub->add_option("--topology", o.topology, "uniform, euclidean, graph or a latency-matrix path");
    sub->add_option("--ranges", o.ranges, "range sizes, comma separated");
    sub->add_option("--systems", o.systems, "lead and/or chord<S>, comma separated");
    sub->add_flag("--assert", o.assert_criteria, "exit 2 if an acceptance threshold fails");
    sub->add_option("--out", o.out, "results directory (LEAD_RESULTS_DIR overrides)");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const auto cfg = build_config(o);
    const auto dir = results_dir(o) / run_id(command, cfg);
    fs::create_directories(dir);
    write_file(dir / "config.snapshot", cfg.snapshot());
    const auto outcome = run_command(command, cfg, dir);
    write_file(dir / "records.csv", outcome.records);
    write_file(dir / "summary.csv", outcome.summary);
    std::cout << outcome.summary;
    bool ok = true;
    for (const auto& r : outcome.checks) {
      if (o.assert_criteria) std::cout << format_result(r) << "\n";
      ok = ok && r.pass;
    }
    std::cout << "results: " << dir.string() << "\n";
    return o.assert_criteria && !ok ? 2 : 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
