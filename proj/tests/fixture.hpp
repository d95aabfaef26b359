#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "lead/learned_hash.hpp"
#include "lead/network.hpp"
#include "lead/rng.hpp"

namespace lead::testing {

inline std::vector<Key> uniform_keys(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Key> keys(n);
  for (auto& k : keys) k = rng.next();
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

inline std::vector<Key> lognormal_keys(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Key> keys(n);
  for (auto& k : keys) k = static_cast<Key>(std::exp(rng.normal(0.0, 2.0)) * 1e9);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

/// A simulator plus network with `nodes` physical nodes on a random
/// Euclidean topology.
struct Harness {
  Simulator sim;
  std::unique_ptr<Network> net;
  std::vector<NodeId> ids;

  Harness(std::size_t nodes, int k, NetworkConfig cfg, std::size_t capacity_nodes = 0) {
    SplitMix64 rng(cfg.seed ^ 0x5eed);
    auto topo = Topology::random_euclidean(std::max(nodes, capacity_nodes), 100.0, 1.0, rng);
    net = std::make_unique<Network>(sim, std::move(topo), cfg);
    for (std::size_t i = 0; i < std::max(nodes, capacity_nodes); ++i) net->add_node(k);
    for (std::size_t i = 0; i < nodes; ++i) ids.push_back(static_cast<NodeId>(i));
  }

  void stable() { net->build_stable(ids); }

  void learned(const std::vector<Key>& keys, std::uint32_t branching = 256) {
    TrainConfig tc;
    tc.branching = branching;
    net->install_model(std::make_shared<const RmiModel>(train_rmi(TrainingSet(keys), tc)));
  }
};

}  // namespace lead::testing
