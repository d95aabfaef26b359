#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fixture.hpp"
#include "lead/balancer.hpp"
#include "lead/baseline.hpp"
#include "lead/config.hpp"
#include "lead/dataset.hpp"
#include "lead/frm.hpp"
#include "lead/hashing.hpp"
#include "lead/query.hpp"
#include "lead/simnet.hpp"
#include "lead/store.hpp"

using namespace lead;

// ---------------------------------------------------------------------------
// store

TEST(Store, GetInsertOverwrite) {
  OrderedStore s;
  EXPECT_TRUE(s.insert(5, {1, 2}));
  EXPECT_EQ(s.get(5), (Value{1, 2}));
  EXPECT_FALSE(s.get(6).has_value());
  EXPECT_FALSE(s.insert(5, {3}));
  EXPECT_EQ(s.get(5), Value{3});
  EXPECT_EQ(s.size(), 1u);
}

TEST(Store, RangeAndRankMatchSortedArray) {
  SplitMix64 rng(3);
  OrderedStore s;
  std::set<Key> oracle;
  for (int i = 0; i < 2000; ++i) {
    const Key k = rng.below(10'000);
    s.insert(k, {});
    oracle.insert(k);
  }
  const std::vector<Key> sorted(oracle.begin(), oracle.end());
  EXPECT_EQ(s.keys(), sorted);
  for (int i = 0; i < 200; ++i) {
    const Key start = rng.below(11'000);
    const std::size_t n = rng.below(50);
    const auto first = std::lower_bound(sorted.begin(), sorted.end(), start);
    std::vector<Key> want(first, first + std::min<std::ptrdiff_t>(n, sorted.end() - first));
    const auto slice = s.local_range(start, n);
    std::vector<Key> got;
    for (const auto& kv : slice.pairs) got.push_back(kv.first);
    EXPECT_EQ(got, want);
    EXPECT_EQ(slice.remaining, n - want.size());
    EXPECT_EQ(s.rank_of(start), static_cast<std::size_t>(first - sorted.begin()));
  }
}

TEST(Store, ExtractIntervalPartitions) {
  auto keys = lead::testing::uniform_keys(1000, 9);
  const RingSpace ring;
  auto fill = [&] {
    OrderedStore s;
    for (auto k : keys) s.insert(k, {});
    return s;
  };
  auto id = [](Key k) { return HashValue{k}; };

  auto s = fill();
  EXPECT_TRUE(s.extract_interval(77, 77, id, ring).empty());
  EXPECT_EQ(s.size(), keys.size());
  EXPECT_EQ(s.take_all().size(), keys.size());

  // (a, b] and (b, a] split the ring, including the wrap.
  s = fill();
  const std::uint64_t a = keys[700], b = keys[200];
  auto left = s.extract_interval(a, b, id, ring);
  auto right = s.extract_interval(b, a, id, ring);
  EXPECT_TRUE(s.empty());
  EXPECT_EQ(left.size() + right.size(), keys.size());
  for (const auto& kv : left) EXPECT_TRUE(kv.first > a || kv.first <= b);
  for (const auto& kv : right) EXPECT_TRUE(kv.first > b && kv.first <= a);
}

// ---------------------------------------------------------------------------
// simnet

TEST(Simulator, EqualTimesRunInScheduleOrder) {
  Simulator sim;
  std::vector<int> order;
  for (int i = 0; i < 5; ++i) sim.schedule_at(10, [&order, i] { order.push_back(i); });
  sim.schedule_at(5, [&order] { order.push_back(-1); });
  sim.run_all();
  EXPECT_EQ(order, (std::vector<int>{-1, 0, 1, 2, 3, 4}));
  Simulator empty;
  empty.run(100);
  EXPECT_EQ(empty.processed(), 0u);
}

TEST(Simulator, TraceIsDeterministic) {
  auto run = [] {
    Simulator sim;
    SplitMix64 rng(11);
    for (int i = 0; i < 100; ++i) sim.schedule_at(rng.uniform(0, 50), [] {}, 1, static_cast<std::uint64_t>(i));
    sim.run(100);
    return sim.trace_hash();
  };
  EXPECT_EQ(run(), run());
}

TEST(Topology, Latencies) {
  auto e = Topology::euclidean({{0, 0}, {3, 4}}, 1.0);
  EXPECT_DOUBLE_EQ(e.latency(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(e.latency(1, 1), 0.0);
  auto m = Topology::matrix({{0, 10}, {10, 0}});
  EXPECT_DOUBLE_EQ(m.latency(0, 1), 5.0);
  EXPECT_THROW(Topology::matrix({{0, -1}, {10, 0}}), Error);
  SplitMix64 rng(1);
  auto u = Topology::uniform_random(20, 10, 100, rng);
  for (NodeId a = 0; a < 20; ++a)
    for (NodeId b = 0; b < 20; ++b) {
      if (a == b) continue;
      EXPECT_GE(u.latency(a, b), 10);
      EXPECT_LE(u.latency(a, b), 100);
      EXPECT_EQ(u.latency(a, b), u.latency(b, a));
    }
}

TEST(Churn, LifetimeDistributions) {
  const SimTime mean = 80 * kMinute;
  for (auto family : {LifetimeFamily::Uniform, LifetimeFamily::Exponential, LifetimeFamily::Pareto}) {
    SplitMix64 rng(21);
    double sum = 0, lo = 1e300, hi = 0;
    const int n = 10'000;
    for (int i = 0; i < n; ++i) {
      const double x = sample_duration(family, mean, 2.0, rng);
      sum += x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    EXPECT_NEAR(sum / n, mean, 0.05 * mean) << to_string(family);
    EXPECT_GT(lo, 0);
    if (family == LifetimeFamily::Uniform) EXPECT_LE(hi, 2 * mean);
    if (family == LifetimeFamily::Pareto) EXPECT_GE(lo, 40 * kMinute);
  }
}

TEST(Churn, ScheduleAlternatesExitAndRejoin) {
  ChurnConfig cc;
  cc.lifetime_mean = 8 * kMinute;
  cc.rejoin_mean = kMinute;
  SplitMix64 rng(4);
  const auto actions = churn_schedule(cc, {0, 1, 2}, 60 * kMinute, rng);
  ASSERT_FALSE(actions.empty());
  EXPECT_TRUE(std::is_sorted(actions.begin(), actions.end(),
                             [](const ChurnAction& a, const ChurnAction& b) { return a.time < b.time; }));
  std::map<NodeId, bool> up{{0, true}, {1, true}, {2, true}};
  for (const auto& a : actions) {
    EXPECT_EQ(a.rejoin, !up[a.node]);
    up[a.node] = a.rejoin;
    EXPECT_LT(a.time, 60 * kMinute);
  }
}

TEST(Workload, Cadence) {
  WorkloadConfig wc;
  EXPECT_EQ(workload_times(wc, 120 * kMinute).size(), 24u);
  wc.interval = 10'000;
  EXPECT_EQ(workload_times(wc, 30 * kMinute).size(), 180u);
}

// ---------------------------------------------------------------------------
// frm

TEST(Frm, ReadinessBoundary) {
  EXPECT_FALSE(check_ready({0, 100}, 0.4));
  EXPECT_TRUE(check_ready({40, 60}, 0.4));
  EXPECT_FALSE(check_ready({66, 100}, 0.4));
  EXPECT_FALSE(check_ready({0, 0}, 0.4));
}

TEST(Frm, Quorum) {
  EXPECT_FALSE(quorum_reached(0, 8, 0.9));
  EXPECT_FALSE(quorum_reached(7, 8, 0.9));
  EXPECT_TRUE(quorum_reached(8, 8, 0.9));
  EXPECT_FALSE(quorum_reached(0, 0, 0.9));
}

TEST(Frm, InsertTargetRank) {
  EXPECT_DOUBLE_EQ(insert_target_rank(250.0, 0), 250.0);
  // Stored neighbours at local ranks 10 and 12: the new key sits at 11.
  EXPECT_DOUBLE_EQ(insert_target_rank(0.0, 11), 11.0);
  EXPECT_DOUBLE_EQ(insert_target_rank(100.7, 11), 111.0);
}

TEST(Frm, UpdateCopyLearnsNewKeys) {
  // One peer holding every key: base rank 0 and local index = true rank.
  const auto base = lead::testing::lognormal_keys(20'000, 5);
  TrainConfig tc;
  tc.branching = 64;
  const RmiModel active = train_rmi(TrainingSet(base), tc);
  RmiModel update = active;

  SplitMix64 rng(8);
  OrderedStore store;
  for (auto k : base) store.insert(k, {});
  std::vector<Key> fresh;
  while (fresh.size() < 10'000) {
    const Key k = static_cast<Key>(std::exp(rng.normal(1.0, 1.0)) * 1e9);
    if (!store.insert(k, {})) continue;
    fresh.push_back(k);
    const double target = insert_target_rank(std::floor(active.predict_rank(*store.min_key())), store.rank_of(k));
    leaf_update(update, k, target, 0.05);
  }
  auto err = [&](const RmiModel& m) {
    double e = 0;
    for (auto k : fresh) e += std::fabs(m.predict_rank(k) - static_cast<double>(store.rank_of(k)));
    return e / static_cast<double>(fresh.size());
  };
  EXPECT_LT(err(update), err(active));
  EXPECT_EQ(active.version(), update.version());
}

// ---------------------------------------------------------------------------
// balancer

TEST(Balancer, PopulationStddev) {
  const std::vector<std::uint64_t> even{7, 7, 7, 7};
  EXPECT_DOUBLE_EQ(population_stddev(even), 0.0);
  const std::vector<std::uint64_t> two{0, 200};
  EXPECT_DOUBLE_EQ(population_stddev(two), 100.0);
}

TEST(Balancer, VirtualizeCountsPeers) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  lead::testing::Harness h(10, 10, cfg);
  h.stable();
  EXPECT_EQ(h.net->live_peers().size(), 100u);
  EXPECT_EQ(vnodes_for_capacity(2.0, 10), 20);
  EXPECT_EQ(vnodes_for_capacity(0.01, 10), 1);
}

TEST(Balancer, HeterogeneousShareFollowsK) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  const auto keys = lead::testing::uniform_keys(100'000, 3);
  double share = 0;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    cfg.seed = 100 + seed;
    SplitMix64 rng(cfg.seed);
    Simulator sim;
    Network net(sim, Topology::random_euclidean(20, 100, 1, rng), cfg);
    std::vector<NodeId> ids;
    for (int i = 0; i < 20; ++i) ids.push_back(net.add_node(i < 10 ? 4 : 16));
    net.build_stable(ids);
    net.bulk_load(keys);
    const auto st = load_stats(net);
    double small = 0, big = 0;
    for (std::size_t i = 0; i < st.nodes.size(); ++i) (st.nodes[i] < 10 ? small : big) += st.node_keys[i];
    share += big / (small + big);
  }
  // Expected share of the k=16 half is 16/20.
  EXPECT_NEAR(share / seeds, 0.8, 0.04);
}

TEST(Balancer, ShedLoad) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  lead::testing::Harness h(5, 2, cfg);
  h.stable();
  // k = 1 is a no-op.
  lead::testing::Harness single(5, 1, cfg);
  single.stable();
  EXPECT_FALSE(shed_load(*single.net, 0).has_value());

  // Tie: lowest Vid leaves.
  const auto vn = h.net->node(0).vnodes;
  ASSERT_EQ(vn.size(), 2u);
  const auto low = h.net->peer(vn[0]).self.vid < h.net->peer(vn[1]).self.vid ? vn[0] : vn[1];
  const auto high = low == vn[0] ? vn[1] : vn[0];
  EXPECT_EQ(shed_load(*h.net, 0), low);

  // Argmin: load the low-Vid vnode of node 1 with requests; the other leaves.
  const auto vn1 = h.net->node(1).vnodes;
  const auto busy = h.net->peer(vn1[0]).self.vid < h.net->peer(vn1[1]).self.vid ? vn1[0] : vn1[1];
  const auto idle = busy == vn1[0] ? vn1[1] : vn1[0];
  h.net->bulk_load(lead::testing::uniform_keys(2000, 4));
  const auto stored = h.net->peer(busy).store.keys();
  ASSERT_FALSE(stored.empty());
  for (int i = 0; i < 5; ++i) h.net->lookup(h.net->live_peers().front(), stored.front());
  h.sim.run(h.sim.now() + 5000);
  EXPECT_GT(h.net->peer(busy).requests_served, 0u);
  EXPECT_EQ(shed_load(*h.net, 1), idle);
  EXPECT_TRUE(h.net->peer(high).alive);
}

TEST(Balancer, HeatmapCsv) {
  LoadStats st;
  st.heatmap = {{1, 2}, {3}};
  std::ostringstream os;
  write_heatmap_csv(os, st);
  EXPECT_EQ(os.str(), "1,2\n3\n");
}

// ---------------------------------------------------------------------------
// baseline

TEST(Baseline, BatchPlan) {
  std::vector<Key> keys(250);
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
  BatchPlan plan(keys, 100);
  ASSERT_EQ(plan.batches(), 3u);
  EXPECT_EQ(plan.batch(0).size(), 100u);
  EXPECT_EQ(plan.batch(2).size(), 50u);
  EXPECT_EQ(plan.batch(2).front(), 200u);
}

TEST(Baseline, UniformPlacementMatchesOracle) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  lead::testing::Harness h(20, 2, cfg);
  h.stable();
  const auto keys = lead::testing::uniform_keys(2000, 12);
  h.net->bulk_load(keys);
  for (auto k : keys) {
    const auto owner = h.net->owner_of(uniform_key_hash(k));
    ASSERT_TRUE(owner.has_value());
    EXPECT_TRUE(h.net->peer(owner->idx).store.contains(k));
  }
}

TEST(Baseline, AdjacentKeysScatter) {
  SplitMix64 rng(6);
  int far = 0;
  const int pairs = 10'000;
  for (int i = 0; i < pairs; ++i) {
    const Key k = rng.next() - 1;
    const auto a = uniform_key_hash(k), b = uniform_key_hash(k + 1);
    const auto d = a > b ? a - b : b - a;
    far += d >= (std::uint64_t{1} << 62);
  }
  EXPECT_GE(far, pairs / 2);
}

TEST(Baseline, BatchedRangeReturnsAllKeys) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  lead::testing::Harness h(10, 2, cfg);
  h.stable();
  const auto keys = lead::testing::uniform_keys(5000, 2);
  h.net->bulk_load(keys);
  const std::vector<Key> range(keys.begin() + 100, keys.begin() + 350);
  QueryRecord got;
  chord_batch_range(*h.net, 0, BatchPlan(range, 100), [&](const QueryRecord& r) { got = r; });
  h.sim.run(60'000);
  EXPECT_TRUE(got.success);
  EXPECT_EQ(got.results, range);
  EXPECT_GE(got.messages, range.size());
}

// ---------------------------------------------------------------------------
// dataset

TEST(Dataset, SosdRoundTripAndTake) {
  const auto path = (std::filesystem::temp_directory_path() / "lead_ds_test.bin").string();
  save_dataset(path, {3, 1, 2, 2});
  std::ostringstream warn;
  const auto d = load_dataset(path, 0, 1, &warn);
  EXPECT_EQ(d.keys, (std::vector<Key>{1, 2, 3}));
  EXPECT_FALSE(warn.str().empty());

  std::vector<Key> many(10'000);
  for (std::size_t i = 0; i < many.size(); ++i) many[i] = i * 7;
  save_dataset(path, many);
  const auto t = load_dataset(path, 1000);
  EXPECT_EQ(t.keys.size(), 1000u);
  EXPECT_TRUE(std::is_sorted(t.keys.begin(), t.keys.end()));

  // Count field says 5 keys, payload has 3.
  {
    std::ofstream f(path, std::ios::binary);
    const std::uint64_t header = 5;
    f.write(reinterpret_cast<const char*>(&header), 8);
    for (std::uint64_t k : {1ull, 2ull, 3ull}) f.write(reinterpret_cast<const char*>(&k), 8);
  }
  try {
    load_dataset(path);
    FAIL() << "expected corrupt-dataset";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "corrupt-dataset");
  }
  std::filesystem::remove(path);
}

TEST(Dataset, GeneratorsAreDeterministicAndShaped) {
  GenConfig g;
  g.distribution = Distribution::Uniform;
  g.count = 10;
  g.seed = 7;
  EXPECT_EQ(gen_dataset(g).keys, gen_dataset(g).keys);
  EXPECT_EQ(gen_dataset(g).keys.size(), 10u);

  // Lognormal: keys crowd the low end, so the lowest tenth of the key span
  // holds far more keys than the highest tenth.
  g.distribution = Distribution::Lognormal;
  g.count = 100'000;
  const auto ln = gen_dataset(g).keys;
  const double lo = static_cast<double>(ln.front()), span = static_cast<double>(ln.back()) - lo;
  std::size_t first = 0, last = 0;
  for (auto k : ln) {
    const double x = (static_cast<double>(k) - lo) / span;
    first += x < 0.1;
    last += x >= 0.9;
  }
  EXPECT_GE(first, 2 * std::max<std::size_t>(last, 1));

  // Clustered: a 100-bin histogram has exactly c local maxima.
  g.distribution = Distribution::Clustered;
  g.clusters = 5;
  const auto cl = gen_dataset(g).keys;
  std::vector<std::size_t> bins(100, 0);
  const double clo = static_cast<double>(cl.front()), cspan = static_cast<double>(cl.back()) - clo;
  for (auto k : cl) bins[std::min<std::size_t>(99, static_cast<std::size_t>((static_cast<double>(k) - clo) / cspan * 100))]++;
  int peaks = 0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const auto l = i ? bins[i - 1] : 0, r = i + 1 < bins.size() ? bins[i + 1] : 0;
    peaks += bins[i] > l && bins[i] >= r && bins[i] > cl.size() / 200;
  }
  EXPECT_EQ(peaks, 5);
}

// ---------------------------------------------------------------------------
// config and query CSV

TEST(Config, UnknownKeyIsNamed) {
  ExperimentConfig c;
  try {
    c.set("no.such.key", "1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unknown-config-key");
    EXPECT_NE(std::string(e.what()).find("no.such.key"), std::string::npos);
  }
}

TEST(Config, SnapshotRoundTrip) {
  ExperimentConfig c;
  c.set("seed", "42");
  c.set("ranges", "500,1000");
  const auto back = ExperimentConfig::parse(c.snapshot());
  EXPECT_EQ(back.snapshot(), c.snapshot());
  EXPECT_EQ(back.run_id(), c.run_id());
  EXPECT_EQ(back.int_list("ranges"), (std::vector<std::int64_t>{500, 1000}));
  ExperimentConfig d;
  EXPECT_NE(d.run_id(), c.run_id());
}

TEST(QueryCsv, RowFormat) {
  QueryRecord r;
  r.kind = QueryKind::Range;
  r.start = 1000;
  r.complete = 1085.5;
  r.messages = 5;
  r.hops = 4;
  r.success = true;
  std::ostringstream os;
  write_csv_header(os);
  write_csv_row(os, r);
  EXPECT_EQ(os.str(),
            "kind,start_ms,complete_ms,latency_ms,messages,hops,success\n"
            "range,1000.000,1085.500,85.500,5,4,1\n");
}
