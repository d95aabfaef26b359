#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "lead/config.hpp"
#include "lead/network.hpp"

namespace lead {

/// One simulated deployment: simulator, network, keys and model.
struct Rig {
  Simulator sim;
  std::unique_ptr<Network> net;
  std::shared_ptr<const RmiModel> model;  // null for uniform placement
};

Topology make_topology(const ExperimentConfig& cfg, std::size_t nodes, std::uint64_t seed);
std::vector<Key> make_keys(const ExperimentConfig& cfg);
std::shared_ptr<const RmiModel> make_model(const ExperimentConfig& cfg, const std::vector<Key>& keys);
NetworkConfig network_config(const ExperimentConfig& cfg, Placement placement, std::uint64_t seed, bool maintenance);

/// Stable ring of `nodes` × `k` peers with `keys` bulk-loaded. model may be
/// null for uniform placement.
std::unique_ptr<Rig> build_rig(const ExperimentConfig& cfg, const std::vector<Key>& keys,
                               std::shared_ptr<const RmiModel> model, std::uint64_t seed, bool maintenance,
                               std::size_t nodes, int k);

/// Seed of the i-th repetition (0-based) of a multi-seed bench.
std::uint64_t run_seed(const ExperimentConfig& cfg, std::size_t i);

struct LabeledRecord {
  std::string system;
  std::int64_t param = 0;
  std::uint64_t seed = 0;
  QueryRecord record;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct BenchOutput {
  std::vector<LabeledRecord> records;
  Table summary;
};

void write_records_csv(std::ostream& out, const std::vector<LabeledRecord>& records);
void write_table_csv(std::ostream& out, const Table& table);
std::string fmt(double v);

// ----- range queries ---------------------------------------------------------
struct RangeStat {
  std::size_t queries = 0;
  double mean_messages = 0;
  std::uint64_t max_messages = 0;
  double mean_latency = 0;
  double success_rate = 0;
  double exact_rate = 0;
  std::size_t bound_violations = 0;  // LEAD only: messages above the hop bound
};

/// Message bound for a LEAD range query of size n:
/// ceil(log2 P) + ceil(n·P/V) + 2.
std::uint64_t range_message_bound(std::size_t peers, std::size_t n, std::size_t total_keys);

/// Systems: "lead", "chord<S>" (batched Chord with batch size S).
BenchOutput bench_range(const ExperimentConfig& cfg, std::map<std::pair<std::string, std::int64_t>, RangeStat>* stats = nullptr);

/// Random (K, n) range queries on a quiescent LEAD network; returns the
/// number of results that differ from the sorted-array oracle.
std::size_t range_exactness(const ExperimentConfig& cfg, std::size_t queries, std::size_t* checked = nullptr);

// ----- single-key lookups ------------------------------------------------------
struct LookupStat {
  std::size_t lookups = 0;
  double mean_latency = 0;
  double mean_hops = 0;
  double mean_messages = 0;
  double success_rate = 0;
};
BenchOutput bench_lookup(const ExperimentConfig& cfg, std::map<std::string, LookupStat>* stats = nullptr);

// ----- churn -------------------------------------------------------------------
struct ChurnStat {
  std::size_t queries = 0;
  double success_rate = 0;
  double mean_latency = 0;
  double exact_rate = 0;
  std::size_t exits = 0;
  std::uint64_t keys_lost = 0;
};
/// Families from churn.family plus a churn-free "none" reference run.
BenchOutput bench_churn(const ExperimentConfig& cfg, std::map<std::string, ChurnStat>* stats = nullptr);

// ----- load balance ------------------------------------------------------------
struct BalanceStat {
  std::vector<double> stddev;  // one per seed
  double mean = 0;
};
BenchOutput bench_balance(const ExperimentConfig& cfg, std::map<int, BalanceStat>* stats = nullptr,
                          std::string* heatmap_csv = nullptr);

// ----- drift and FRM -------------------------------------------------------------
struct UpdateStat {
  double baseline_std = 0;                // model freshly trained on every key
  double drift_std = 0;                   // stale model, updates disabled
  std::vector<double> round_std;          // FRM enabled, after each round
  std::size_t publications = 0;
  double max_convergence_rounds = 0;      // heartbeat rounds until all peers hold a published version
  bool converged = true;
  bool versions_monotone = true;
};
BenchOutput bench_update(const ExperimentConfig& cfg, UpdateStat* stats = nullptr);

}  // namespace lead
