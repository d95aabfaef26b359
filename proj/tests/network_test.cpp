#include <gtest/gtest.h>

#include "fixture.hpp"

namespace lead {
namespace {

using testing::Harness;

NetworkConfig quiet(Placement placement = Placement::Learned, std::uint64_t seed = 7) {
  NetworkConfig cfg;
  cfg.placement = placement;
  cfg.seed = seed;
  cfg.overlay.maintenance = false;
  return cfg;
}

std::vector<Key> oracle_range(const std::vector<Key>& sorted, Key start, std::size_t n) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), start);
  std::vector<Key> out;
  for (; it != sorted.end() && out.size() < n; ++it) out.push_back(*it);
  return out;
}

TEST(Overlay, FingerTargets) {
  RingSpace ring(64);
  EXPECT_EQ(decimal_finger_target(5, 1, ring), 6u);
  EXPECT_EQ(decimal_finger_target(5, 3, ring), 105u);
  EXPECT_EQ(decimal_finger_target(~0ull, 1, ring), 0u);
  EXPECT_EQ(express_finger_target(0, 63, ring), 1ull << 63);
  EXPECT_EQ(successor_of({10, 20, 30}, 25), 30u);
  EXPECT_EQ(successor_of({10, 20, 30}, 31), 10u);
  EXPECT_EQ(successor_of({10, 20, 30}, 20), 20u);
  EXPECT_THROW(successor_of({}, 1), Error);
  EXPECT_EQ(to_string(MsgType::RangeQueryForward), "RangeQueryForward");
}

TEST(Network, StableRingMatchesOracle) {
  Harness h(30, 1, quiet());
  h.stable();
  auto ring = h.net->live_ring();
  ASSERT_EQ(ring.size(), 30u);
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const auto& p = h.net->peer(ring[i].idx);
    EXPECT_EQ(p.successor()->idx, ring[(i + 1) % ring.size()].idx);
    EXPECT_EQ(p.predecessor()->idx, ring[(i + ring.size() - 1) % ring.size()].idx);
    EXPECT_EQ(p.fingers.size(), 19u);
  }
}

TEST(Network, LookupsReachTheOwner) {
  auto keys = testing::uniform_keys(20000, 3);
  Harness h(100, 1, quiet(Placement::Uniform));
  h.stable();
  h.net->bulk_load(keys);
  EXPECT_EQ(h.net->stored_keys(), keys.size());
  SplitMix64 rng(11);
  std::vector<QueryRecord> out;
  auto peers = h.net->live_peers();
  for (int i = 0; i < 500; ++i) {
    const Key k = keys[rng.below(keys.size())];
    h.net->lookup(peers[rng.below(peers.size())], k, [&](const QueryRecord& r) { out.push_back(r); });
  }
  h.sim.run_all();
  ASSERT_EQ(out.size(), 500u);
  std::uint64_t max_hops = 0;
  for (const auto& r : out) {
    EXPECT_TRUE(r.success);
    ASSERT_TRUE(r.value);
    EXPECT_EQ(*r.value, Network::value_for(r.key));
    EXPECT_EQ(r.owner, h.net->owner_of(h.net->reference_hash(r.key))->vid);
    max_hops = std::max(max_hops, r.hops);
    EXPECT_LE(r.messages, r.hops + 1);
  }
  EXPECT_LE(max_hops, 8u);
}

TEST(Network, MissingKeyLookupFails) {
  Harness h(10, 1, quiet(Placement::Uniform));
  h.stable();
  bool done = false;
  h.net->lookup(h.net->live_peers()[0], 12345, [&](const QueryRecord& r) {
    done = true;
    EXPECT_FALSE(r.success);
  });
  h.sim.run_all();
  EXPECT_TRUE(done);
}

TEST(Network, RangeQueriesAreExact) {
  auto keys = testing::lognormal_keys(50000, 5);
  Harness h(40, 2, quiet());
  h.stable();
  h.learned(keys);
  h.net->bulk_load(keys);
  SplitMix64 rng(9);
  auto peers = h.net->live_peers();
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng.below(2000);
    Key start = rng.below(4) == 0 ? rng.next() : keys[rng.below(keys.size())];
    if (i == 0) start = 0;
    if (i == 1) start = keys.back();
    h.net->range_query(peers[rng.below(peers.size())], start, n, [&, start, n](const QueryRecord& r) {
      ++checked;
      EXPECT_TRUE(r.success);
      EXPECT_EQ(r.results, oracle_range(keys, start, n)) << "start " << start << " n " << n;
      EXPECT_EQ(r.short_count, oracle_range(keys, start, n).size() < n);
    });
  }
  h.sim.run_all();
  EXPECT_EQ(checked, 200);
}

TEST(Network, LearnedPlacementPreservesOrder) {
  auto keys = testing::lognormal_keys(20000, 8);
  Harness h(20, 1, quiet());
  h.stable();
  h.learned(keys);
  h.net->bulk_load(keys);
  // Walking the ring from the smallest hash owner visits keys in order.
  // The lowest-Vid peer also holds the hashes past the largest Vid.
  auto ring = h.net->live_ring();
  std::vector<Key> walked, tail;
  for (Key k : h.net->peer(ring[0].idx).store.keys())
    (h.net->reference_hash(k) <= ring[0].vid ? walked : tail).push_back(k);
  for (std::size_t i = 1; i < ring.size(); ++i) {
    auto ks = h.net->peer(ring[i].idx).store.keys();
    walked.insert(walked.end(), ks.begin(), ks.end());
  }
  walked.insert(walked.end(), tail.begin(), tail.end());
  EXPECT_EQ(walked, keys);
}

TEST(Network, ProtocolJoinsBuildCorrectRing) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  cfg.seed = 21;
  Harness h(0, 1, cfg, 50);
  auto keys = testing::uniform_keys(5000, 2);
  h.net->join_node(0);
  h.net->bulk_load(keys);
  for (NodeId n = 1; n < 50; ++n) {
    h.sim.run(h.sim.now() + 2000);
    h.net->join_node(n);
  }
  h.sim.run(h.sim.now() + 60'000);
  auto ring = h.net->live_ring();
  ASSERT_EQ(ring.size(), 50u);
  std::vector<std::uint64_t> vids;
  for (const auto& r : ring) vids.push_back(r.vid);
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const auto& p = h.net->peer(ring[i].idx);
    ASSERT_TRUE(p.successor());
    EXPECT_EQ(p.successor()->idx, ring[(i + 1) % ring.size()].idx);
    EXPECT_EQ(p.predecessor()->idx, ring[(i + ring.size() - 1) % ring.size()].idx);
    for (unsigned f = 0; f < p.fingers.size(); ++f) {
      ASSERT_TRUE(p.fingers[f]) << "peer " << i << " finger " << f;
      EXPECT_EQ(p.fingers[f]->vid, successor_of(vids, decimal_finger_target(p.self.vid, f + 1, h.net->ring())));
    }
  }
  EXPECT_EQ(h.net->stored_keys(), keys.size());
  for (const auto& r : ring)
    h.net->peer(r.idx).store.for_each([&](Key k, const Value&) {
      EXPECT_EQ(h.net->owner_of(h.net->reference_hash(k))->idx, r.idx);
    });
}

TEST(Network, GracefulDepartureKeepsKeys) {
  NetworkConfig cfg;
  cfg.seed = 4;
  auto keys = testing::lognormal_keys(20000, 4);
  Harness h(30, 2, cfg);
  h.stable();
  h.learned(keys);
  h.net->bulk_load(keys);
  h.sim.run(5000);
  for (NodeId n : {3u, 9u, 17u}) {
    h.net->depart_node(n);
    h.sim.run(h.sim.now() + 3000);
  }
  h.sim.run(h.sim.now() + 20'000);
  EXPECT_EQ(h.net->stored_keys(), keys.size());
  EXPECT_EQ(h.net->keys_lost(), 0u);
  auto ring = h.net->live_ring();
  EXPECT_EQ(ring.size(), 54u);
  for (std::size_t i = 0; i < ring.size(); ++i)
    EXPECT_EQ(h.net->peer(ring[i].idx).successor()->idx, ring[(i + 1) % ring.size()].idx);
  std::size_t misplaced = 0;
  for (const auto& r : ring)
    h.net->peer(r.idx).store.for_each([&](Key k, const Value&) {
      misplaced += h.net->owner_of(h.net->reference_hash(k))->idx != r.idx;
    });
  EXPECT_EQ(misplaced, 0u);
  auto peers = h.net->live_peers();
  int answered = 0;
  for (int i = 0; i < 50; ++i)
    h.net->range_query(peers[i % peers.size()], keys[i * 300], 100, [&, i](const QueryRecord& r) {
      ++answered;
      EXPECT_EQ(r.results, oracle_range(keys, keys[i * 300], 100));
    });
  h.sim.run(h.sim.now() + 10'000);
  EXPECT_EQ(answered, 50);
}

TEST(Network, CrashedSuccessorIsReplacedQuickly) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  cfg.seed = 12;
  Harness h(20, 1, cfg);
  h.stable();
  h.sim.run(3000);
  auto ring = h.net->live_ring();
  const auto victim = ring[5];
  const auto watcher = ring[4].idx;
  const auto crash_time = h.sim.now();
  h.net->crash_node(victim.node);
  SimTime repaired = -1;
  while (h.sim.now() < crash_time + 10'000) {
    h.sim.run(h.sim.now() + 50);
    if (repaired < 0 && h.net->peer(watcher).successor()->idx == ring[6].idx) repaired = h.sim.now();
  }
  ASSERT_GE(repaired, 0);
  EXPECT_LE(repaired - crash_time, 3500);
}

TEST(Network, LookupsSurviveCrashesWithRetry) {
  NetworkConfig cfg;
  cfg.placement = Placement::Uniform;
  cfg.seed = 13;
  auto keys = testing::uniform_keys(5000, 6);
  Harness h(60, 1, cfg);
  h.stable();
  h.net->bulk_load(keys);
  h.sim.run(2000);
  for (NodeId n = 0; n < 60; n += 10) h.net->crash_node(n);
  int ok = 0, total = 0;
  auto peers = h.net->live_peers();
  for (int i = 0; i < 200; ++i)
    h.net->locate(peers[i % peers.size()], keys[i * 20], [&](const QueryRecord& r) {
      ++total;
      ok += r.success;
    });
  h.sim.run(h.sim.now() + 30'000);
  EXPECT_EQ(total, 200);
  // Queries start before anyone noticed the crashes. With 10% of peers dead a
  // hop fails only when both the first choice and its retry are dead, about
  // 1% per hop over ~4 hops.
  EXPECT_GE(ok, 190);
}

TEST(Network, Deterministic) {
  auto run = [] {
    NetworkConfig cfg;
    cfg.seed = 99;
    auto keys = testing::lognormal_keys(5000, 1);
    Harness h(20, 2, cfg);
    h.stable();
    h.learned(keys, 64);
    h.net->bulk_load(keys);
    h.sim.run(5000);
    h.net->crash_node(3);
    h.net->depart_node(5);
    h.sim.run(20'000);
    return std::make_pair(h.sim.trace_hash(), h.net->total_messages());
  };
  EXPECT_EQ(run(), run());
}

TEST(Network, PutStoresAtOwner) {
  Harness h(10, 1, quiet(Placement::Uniform));
  h.stable();
  bool done = false;
  h.net->put(h.net->live_peers()[3], 777, "v", [&](const QueryRecord& r) {
    done = r.success;
  });
  h.sim.run_all();
  ASSERT_TRUE(done);
  const auto owner = h.net->owner_of(h.net->reference_hash(777))->idx;
  EXPECT_EQ(*h.net->peer(owner).store.get(777), "v");
}

}  // namespace
}  // namespace lead
