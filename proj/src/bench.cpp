#include "lead/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "lead/balancer.hpp"
#include "lead/baseline.hpp"
#include "lead/dataset.hpp"
#include "lead/hashing.hpp"

namespace lead {

// ============================================================================
// rig construction

Topology make_topology(const ExperimentConfig& cfg, std::size_t nodes, std::uint64_t seed) {
  SplitMix64 rng(fmix64(seed ^ 0x70b0));
  const auto kind = cfg.str("topology");
  const double lo = cfg.real("topology.lo");
  const double hi = cfg.real("topology.hi");
  if (kind == "uniform") return Topology::uniform_random(nodes, lo, hi, rng);
  if (kind == "euclidean") return Topology::random_euclidean(nodes, hi / std::sqrt(2.0), 1.0, rng);
  if (kind == "graph") return Topology::random_graph(nodes, 2 * nodes, lo / 3, hi / 3, rng);
  auto t = Topology::load_matrix(kind);
  if (t.size() < nodes) throw Error("incomplete-topology", "matrix has fewer nodes than requested");
  return t;
}

std::vector<Key> make_keys(const ExperimentConfig& cfg) {
  const auto name = cfg.str("dataset");
  const auto take = static_cast<std::size_t>(cfg.u64("dataset.take"));
  for (auto d : {Distribution::Uniform, Distribution::Lognormal, Distribution::Clustered, Distribution::Pareto}) {
    if (to_string(d) != name) continue;
    GenConfig g;
    g.distribution = d;
    g.count = static_cast<std::size_t>(cfg.u64("dataset.count"));
    g.seed = cfg.u64("seed");
    g.mu = cfg.real("dataset.mu");
    g.sigma = cfg.real("dataset.sigma");
    g.clusters = static_cast<int>(cfg.integer("dataset.clusters"));
    g.spread = cfg.real("dataset.spread");
    auto keys = gen_dataset(g).keys;
    return take ? subsample(keys, take, g.seed) : keys;
  }
  return load_dataset(name, take, cfg.u64("seed")).keys;
}

std::shared_ptr<const RmiModel> make_model(const ExperimentConfig& cfg, const std::vector<Key>& keys) {
  TrainingSet train(keys);
  TrainConfig tc;
  tc.branching = static_cast<std::uint32_t>(cfg.u64("model.branching"));
  const auto family = cfg.str("model.family");
  if (family == "linear") {
    tc.family = LeafFamily::Linear;
  } else if (family == "cubic") {
    tc.family = LeafFamily::Cubic;
  } else if (family == "radix") {
    tc.family = LeafFamily::RadixTable;
  } else if (family == "auto") {
    auto pick = model_scout(train.sketch());
    tc.family = pick.family;
    tc.branching = pick.branching;
  } else {
    throw Error("invalid-config", "model.family = " + family);
  }
  return std::make_shared<const RmiModel>(train_rmi(train, tc));
}

NetworkConfig network_config(const ExperimentConfig& cfg, Placement placement, std::uint64_t seed, bool maintenance) {
  NetworkConfig nc;
  nc.placement = placement;
  nc.seed = seed;
  nc.overlay.maintenance = maintenance;
  nc.overlay.stabilize_interval = cfg.real("timers.stabilize_ms");
  nc.overlay.heartbeat_interval = cfg.real("timers.heartbeat_ms");
  nc.overlay.failure_timeout = cfg.real("timers.failure_ms");
  nc.frm.enabled = cfg.flag("frm.enabled");
  nc.frm.threshold = cfg.real("frm.threshold");
  nc.frm.quorum = cfg.real("frm.quorum");
  nc.frm.learning_rate = cfg.real("frm.lr");
  return nc;
}

std::unique_ptr<Rig> build_rig(const ExperimentConfig& cfg, const std::vector<Key>& keys,
                               std::shared_ptr<const RmiModel> model, std::uint64_t seed, bool maintenance,
                               std::size_t nodes, int k) {
  auto rig = std::make_unique<Rig>();
  const auto placement = model ? Placement::Learned : Placement::Uniform;
  rig->net = std::make_unique<Network>(rig->sim, make_topology(cfg, nodes, seed),
                                       network_config(cfg, placement, seed, maintenance));
  std::vector<NodeId> ids;
  for (std::size_t i = 0; i < nodes; ++i) ids.push_back(rig->net->add_node(k));
  rig->net->build_stable(ids);
  if (model) rig->net->install_model(model);
  rig->model = std::move(model);
  rig->net->bulk_load(keys);
  return rig;
}

std::uint64_t run_seed(const ExperimentConfig& cfg, std::size_t i) { return cfg.u64("seed") + i; }

// ============================================================================
// output

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void write_records_csv(std::ostream& out, const std::vector<LabeledRecord>& records) {
  out << "system,param,seed,";
  write_csv_header(out);
  for (const auto& r : records) {
    out << r.system << ',' << r.param << ',' << r.seed << ',';
    write_csv_row(out, r.record);
  }
}

void write_table_csv(std::ostream& out, const Table& table) {
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
}

namespace {

std::vector<Key> oracle_range(const std::vector<Key>& sorted, Key start, std::size_t n) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), start);
  const auto end = it + static_cast<std::ptrdiff_t>(std::min<std::size_t>(n, sorted.end() - it));
  return std::vector<Key>(it, end);
}

unsigned ceil_log2(std::size_t x) {
  unsigned b = 0;
  while ((std::size_t{1} << b) < x) ++b;
  return b;
}

std::size_t chord_batch_size(const std::string& system) {
  if (system.rfind("chord", 0) != 0) return 0;
  const auto s = system.substr(5);
  if (s.empty()) throw Error("invalid-config", "chord system needs a batch size, e.g. chord100");
  return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace

// ============================================================================
// range

std::uint64_t range_message_bound(std::size_t peers, std::size_t n, std::size_t total_keys) {
  const auto chain = (static_cast<unsigned __int128>(n) * peers + total_keys - 1) / total_keys;
  return ceil_log2(peers) + static_cast<std::uint64_t>(chain) + 2;
}

BenchOutput bench_range(const ExperimentConfig& cfg, std::map<std::pair<std::string, std::int64_t>, RangeStat>* stats) {
  BenchOutput out;
  const auto keys = make_keys(cfg);
  const auto systems = cfg.list("systems");
  const auto ranges = cfg.int_list("ranges");
  const auto queries = static_cast<std::size_t>(cfg.u64("queries"));
  const auto seeds = static_cast<std::size_t>(cfg.u64("seeds"));
  const auto nodes = static_cast<std::size_t>(cfg.u64("nodes"));
  const int k = static_cast<int>(cfg.integer("vnodes_per_node"));
  const bool need_lead = std::find(systems.begin(), systems.end(), "lead") != systems.end();
  const auto model = need_lead ? make_model(cfg, keys) : nullptr;

  std::map<std::pair<std::string, std::int64_t>, RangeStat> acc;
  for (std::size_t si = 0; si < seeds; ++si) {
    const auto seed = run_seed(cfg, si);
    for (const auto& system : systems) {
      const auto batch = chord_batch_size(system);
      if (system != "lead" && batch == 0) throw Error("invalid-config", "unknown system " + system);
      auto rig = build_rig(cfg, keys, system == "lead" ? model : nullptr, seed, false, nodes, k);
      auto& net = *rig->net;
      const auto peers = net.live_peers();
      for (auto n64 : ranges) {
        const auto n = static_cast<std::size_t>(n64);
        // Same origins and start keys for every system at a given seed.
        SplitMix64 rng(fmix64(seed * 1000003u + n));
        const auto bound = range_message_bound(peers.size(), n, keys.size());
        auto& st = acc[{system, n64}];
        std::vector<QueryRecord> recs(queries);
        for (std::size_t q = 0; q < queries; ++q) {
          const auto origin = peers[rng.below(peers.size())];
          const Key start = keys[rng.below(keys.size())];
          rig->sim.schedule(static_cast<SimTime>(q) * 1000.0, [&, q, origin, start] {
            auto done = [&recs, q](const QueryRecord& r) { recs[q] = r; };
            if (batch)
              chord_batch_range(net, origin, BatchPlan(oracle_range(keys, start, n), batch), done);
            else
              net.range_query(origin, start, n, done);
          });
        }
        rig->sim.run_all();
        for (std::size_t q = 0; q < queries; ++q) {
          const auto& r = recs[q];
          const bool exact = r.results == oracle_range(keys, r.key, n);
          st.queries += 1;
          st.mean_messages += static_cast<double>(r.messages);
          st.max_messages = std::max(st.max_messages, r.messages);
          st.mean_latency += r.latency();
          st.success_rate += r.success;
          st.exact_rate += exact;
          if (!batch && r.messages > bound) ++st.bound_violations;
          out.records.push_back({system, n64, seed, r});
        }
      }
    }
  }
  out.summary.header = {"system", "n", "queries", "mean_messages", "max_messages", "mean_latency_ms",
                        "success_rate", "exact_rate", "bound_violations"};
  for (const auto& system : systems)
    for (auto n : ranges) {
      auto& st = acc[{system, n}];
      const double q = std::max<double>(1, static_cast<double>(st.queries));
      st.mean_messages /= q;
      st.mean_latency /= q;
      st.success_rate /= q;
      st.exact_rate /= q;
      out.summary.rows.push_back({system, std::to_string(n), std::to_string(st.queries), fmt(st.mean_messages),
                                  std::to_string(st.max_messages), fmt(st.mean_latency), fmt(st.success_rate),
                                  fmt(st.exact_rate), std::to_string(st.bound_violations)});
    }
  if (stats) *stats = std::move(acc);
  return out;
}

std::size_t range_exactness(const ExperimentConfig& cfg, std::size_t queries, std::size_t* checked) {
  const auto keys = make_keys(cfg);
  auto rig = build_rig(cfg, keys, make_model(cfg, keys), cfg.u64("seed"), false,
                       static_cast<std::size_t>(cfg.u64("nodes")), static_cast<int>(cfg.integer("vnodes_per_node")));
  auto& net = *rig->net;
  const auto peers = net.live_peers();
  SplitMix64 rng(fmix64(cfg.u64("seed") ^ 0xe8ac7));
  std::size_t bad = 0, seen = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    const auto origin = peers[rng.below(peers.size())];
    // Mix stored keys, arbitrary u64 starts and the extremes.
    Key start = rng.below(2) ? keys[rng.below(keys.size())] : rng.next();
    if (q == 0) start = 0;
    if (q == 1) start = keys.back();
    if (q == 2) start = keys.back() + 1;
    const std::size_t n = 1 + rng.below(rng.below(2) ? 100 : 10000);
    net.range_query(origin, start, n, [&, start, n](const QueryRecord& r) {
      ++seen;
      if (!r.success || r.results != oracle_range(keys, start, n)) ++bad;
    });
  }
  rig->sim.run_all();
  if (checked) *checked = seen;
  return bad + (queries - seen);
}

// ============================================================================
// lookup

BenchOutput bench_lookup(const ExperimentConfig& cfg, std::map<std::string, LookupStat>* stats) {
  BenchOutput out;
  const auto keys = make_keys(cfg);
  const auto model = make_model(cfg, keys);
  const auto count = static_cast<std::size_t>(cfg.u64("lookups"));
  const auto seed = cfg.u64("seed");
  std::map<std::string, LookupStat> acc;
  for (const std::string system : {"lead", "chord"}) {
    auto rig = build_rig(cfg, keys, system == "lead" ? model : nullptr, seed, false,
                         static_cast<std::size_t>(cfg.u64("nodes")), static_cast<int>(cfg.integer("vnodes_per_node")));
    auto& net = *rig->net;
    const auto peers = net.live_peers();
    SplitMix64 rng(fmix64(seed ^ 0x100c));
    std::vector<QueryRecord> recs(count);
    for (std::size_t q = 0; q < count; ++q) {
      const auto origin = peers[rng.below(peers.size())];
      const Key key = keys[rng.below(keys.size())];
      rig->sim.schedule(static_cast<SimTime>(q) * 10.0, [&, q, origin, key] {
        net.lookup(origin, key, [&recs, q](const QueryRecord& r) { recs[q] = r; });
      });
    }
    rig->sim.run_all();
    auto& st = acc[system];
    for (const auto& r : recs) {
      st.lookups += 1;
      st.mean_latency += r.latency();
      st.mean_hops += static_cast<double>(r.hops);
      st.mean_messages += static_cast<double>(r.messages);
      st.success_rate += r.success;
      out.records.push_back({system, 1, seed, r});
    }
    const double q = std::max<double>(1, static_cast<double>(st.lookups));
    st.mean_latency /= q;
    st.mean_hops /= q;
    st.mean_messages /= q;
    st.success_rate /= q;
    out.summary.rows.push_back({system, std::to_string(st.lookups), fmt(st.mean_latency), fmt(st.mean_hops),
                                fmt(st.mean_messages), fmt(st.success_rate)});
  }
  out.summary.header = {"system", "lookups", "mean_latency_ms", "mean_hops", "mean_messages", "success_rate"};
  if (stats) *stats = std::move(acc);
  return out;
}

// ============================================================================
// churn

BenchOutput bench_churn(const ExperimentConfig& cfg, std::map<std::string, ChurnStat>* stats) {
  BenchOutput out;
  const auto keys = make_keys(cfg);
  const auto model = make_model(cfg, keys);
  const auto seed = cfg.u64("seed");
  const auto nodes = static_cast<std::size_t>(cfg.u64("nodes"));
  const int k = static_cast<int>(cfg.integer("vnodes_per_node"));
  const SimTime horizon = cfg.real("churn.horizon_min") * kMinute;
  const auto n = static_cast<std::size_t>(cfg.u64("workload.n"));
  const bool crash = cfg.str("churn.exit") == "crash";
  if (!crash && cfg.str("churn.exit") != "depart") throw Error("invalid-config", "churn.exit = " + cfg.str("churn.exit"));
  WorkloadConfig wc;
  wc.interval = cfg.real("workload.interval_ms");
  const auto times = workload_times(wc, horizon);

  auto families = cfg.list("churn.family");
  families.insert(families.begin(), "none");
  std::map<std::string, ChurnStat> acc;
  for (const auto& family : families) {
    auto rig = build_rig(cfg, keys, model, seed, true, nodes, k);
    auto& net = *rig->net;
    auto& sim = rig->sim;
    auto& st = acc[family];
    if (family != "none") {
      ChurnConfig cc;
      cc.family = parse_lifetime_family(family);
      cc.lifetime_mean = cfg.real("churn.lifetime_min") * kMinute;
      cc.rejoin_mean = cfg.real("churn.rejoin_min") * kMinute;
      cc.pareto_alpha = cfg.real("churn.alpha");
      std::vector<NodeId> ids;
      for (NodeId i = 0; i < nodes; ++i) ids.push_back(i);
      SplitMix64 crng(fmix64(seed ^ 0xc4a2));
      for (const auto& a : churn_schedule(cc, ids, horizon, crng)) {
        if (!a.rejoin) ++st.exits;
        sim.schedule_at(a.time, [&net, a, crash] {
          if (a.rejoin)
            net.rejoin_node(a.node);
          else if (crash)
            net.crash_node(a.node);
          else
            net.depart_node(a.node);
        });
      }
    }
    SplitMix64 wrng(fmix64(seed ^ 0x3a7e));
    std::vector<QueryRecord> recs(times.size());
    std::vector<bool> issued(times.size(), false);
    for (std::size_t q = 0; q < times.size(); ++q) {
      const Key start = keys[wrng.below(keys.size())];
      const auto pick = wrng.next();
      sim.schedule_at(times[q], [&, q, start, pick] {
        const auto live = net.live_peers();
        if (live.empty()) return;
        issued[q] = true;
        net.range_query(live[pick % live.size()], start, n, [&recs, q](const QueryRecord& r) { recs[q] = r; });
      });
    }
    sim.run(horizon + net.config().overlay.query_timeout + 1000);
    for (std::size_t q = 0; q < times.size(); ++q) {
      if (!issued[q]) continue;
      const auto& r = recs[q];
      st.queries += 1;
      st.success_rate += r.success;
      st.mean_latency += r.latency();
      st.exact_rate += r.results == oracle_range(keys, r.key, n);
      out.records.push_back({family, static_cast<std::int64_t>(n), seed, r});
    }
    st.keys_lost = net.keys_lost();
    const double qn = std::max<double>(1, static_cast<double>(st.queries));
    st.success_rate /= qn;
    st.mean_latency /= qn;
    st.exact_rate /= qn;
    out.summary.rows.push_back({family, std::to_string(st.queries), fmt(st.success_rate), fmt(st.mean_latency),
                                fmt(st.exact_rate), std::to_string(st.exits), std::to_string(st.keys_lost)});
  }
  out.summary.header = {"family", "queries", "success_rate", "mean_latency_ms", "exact_rate", "exits", "keys_lost"};
  if (stats) *stats = std::move(acc);
  return out;
}

// ============================================================================
// balance

BenchOutput bench_balance(const ExperimentConfig& cfg, std::map<int, BalanceStat>* stats, std::string* heatmap_csv) {
  BenchOutput out;
  const auto keys = make_keys(cfg);
  const auto model = make_model(cfg, keys);
  const auto nodes = static_cast<std::size_t>(cfg.u64("balance.nodes"));
  const auto seeds = static_cast<std::size_t>(cfg.u64("balance.seeds"));
  std::map<int, BalanceStat> acc;
  std::vector<StddevSample> series;
  for (auto k64 : cfg.int_list("balance.ks")) {
    const int k = static_cast<int>(k64);
    auto& st = acc[k];
    for (std::size_t si = 0; si < seeds; ++si) {
      const auto seed = run_seed(cfg, si);
      // Placement is counted by the observer; no keys are stored.
      auto rig = build_rig(cfg, {}, model, seed, false, nodes, k);
      auto counts = rig->net->placement_counts(keys, model.get());
      const double sd = population_stddev(counts);
      st.stddev.push_back(sd);
      series.push_back({k, seed, sd});
      if (heatmap_csv && si == 0 && k64 == cfg.int_list("balance.ks").back()) {
        LoadStats ls;
        ls.node_keys = counts;
        const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(counts.size()))));
        for (std::size_t i = 0; i < counts.size(); i += cols)
          ls.heatmap.emplace_back(counts.begin() + i, counts.begin() + std::min(counts.size(), i + cols));
        std::ostringstream os;
        write_heatmap_csv(os, ls);
        *heatmap_csv = os.str();
      }
    }
    for (double v : st.stddev) st.mean += v;
    st.mean /= std::max<std::size_t>(1, st.stddev.size());
    out.summary.rows.push_back({std::to_string(k), std::to_string(st.stddev.size()), fmt(st.mean)});
  }
  out.summary.header = {"k", "seeds", "mean_stddev"};
  if (stats) *stats = std::move(acc);
  return out;
}

// ============================================================================
// drift and FRM

BenchOutput bench_update(const ExperimentConfig& cfg, UpdateStat* stats) {
  BenchOutput out;
  UpdateStat st;
  const auto seed = cfg.u64("seed");
  const double fraction = cfg.real("update.fraction");
  const auto total = static_cast<std::size_t>(cfg.u64("dataset.count"));
  const auto nodes = static_cast<std::size_t>(cfg.u64("nodes"));
  const int k = static_cast<int>(cfg.integer("vnodes_per_node"));

  // Base keys from the configured dataset, new keys from a drifted lognormal.
  ExperimentConfig base_cfg = cfg;
  base_cfg.set("dataset.count", std::to_string(static_cast<std::size_t>(std::llround(total * (1 - fraction)))));
  const auto base = make_keys(base_cfg);
  GenConfig g;
  g.distribution = Distribution::Lognormal;
  g.mu = cfg.real("update.drift_mu");
  g.sigma = cfg.real("update.drift_sigma");
  g.seed = fmix64(seed ^ 0xd21f7);
  g.count = static_cast<std::size_t>(std::llround(base.size() * fraction / (1 - fraction)));
  std::vector<Key> fresh;
  {
    auto drawn = gen_dataset(g).keys;
    std::set_difference(drawn.begin(), drawn.end(), base.begin(), base.end(), std::back_inserter(fresh));
    // Insertion order is arrival order, not sorted.
    SplitMix64 shuffle(g.seed);
    for (std::size_t i = fresh.size(); i > 1; --i) std::swap(fresh[i - 1], fresh[shuffle.below(i)]);
  }
  std::vector<Key> all = base;
  all.insert(all.end(), fresh.begin(), fresh.end());
  std::sort(all.begin(), all.end());

  const auto base_model = make_model(cfg, base);
  const auto full_model = make_model(cfg, all);

  // Baseline and stale-model placement on the same ring.
  {
    auto rig = build_rig(cfg, {}, base_model, seed, false, nodes, k);
    st.baseline_std = population_stddev(rig->net->placement_counts(all, full_model.get()));
    st.drift_std = population_stddev(rig->net->placement_counts(all, base_model.get()));
  }

  // FRM run: the new keys arrive at their owners, then the protocol runs.
  ExperimentConfig frm_cfg = cfg;
  frm_cfg.set("frm.enabled", "true");
  auto rig = build_rig(frm_cfg, base, base_model, seed, true, nodes, k);
  auto& net = *rig->net;
  rig->sim.run(2000);
  net.bulk_insert(fresh);
  const auto peers = net.live_peers().size();
  const SimTime heartbeat = cfg.real("timers.heartbeat_ms");
  const SimTime round = 5.0 * ceil_log2(peers) * heartbeat + 2 * cfg.real("timers.stabilize_ms");
  const auto rounds = static_cast<std::size_t>(cfg.u64("update.rounds"));
  out.summary.header = {"phase", "stddev", "ratio_to_baseline"};
  out.summary.rows.push_back({"baseline", fmt(st.baseline_std), fmt(1.0)});
  out.summary.rows.push_back({"drift_no_update", fmt(st.drift_std), fmt(st.drift_std / st.baseline_std)});
  for (std::size_t r = 0; r < rounds; ++r) {
    rig->sim.run(rig->sim.now() + round);
    const double sd = load_stats(net).stddev;
    st.round_std.push_back(sd);
    out.summary.rows.push_back({"frm_round_" + std::to_string(r + 1), fmt(sd), fmt(sd / st.baseline_std)});
  }
  if (net.stored_keys() != all.size())
    out.summary.rows.push_back({"keys_missing", std::to_string(all.size() - net.stored_keys()), ""});

  // Convergence: every live peer holds each published version within the bound.
  st.publications = net.publications().size();
  std::map<std::uint32_t, std::vector<Adoption>> per_peer;
  for (const auto& a : net.adoptions()) per_peer[a.peer].push_back(a);
  for (const auto& [peer, seq] : per_peer)
    for (std::size_t i = 1; i < seq.size(); ++i)
      if (seq[i].version <= seq[i - 1].version) st.versions_monotone = false;
  for (const auto& pub : net.publications()) {
    for (auto idx : net.live_peers()) {
      SimTime reached = -1;
      for (const auto& a : per_peer[idx])
        if (a.version >= pub.version) {
          reached = a.time;
          break;
        }
      if (reached < 0) {
        st.converged = false;
        continue;
      }
      st.max_convergence_rounds = std::max(st.max_convergence_rounds, std::max(0.0, reached - pub.time) / heartbeat);
    }
  }
  out.summary.rows.push_back({"publications", std::to_string(st.publications), ""});
  out.summary.rows.push_back({"max_convergence_rounds", fmt(st.max_convergence_rounds), ""});
  if (stats) *stats = std::move(st);
  return out;
}

}  // namespace lead
