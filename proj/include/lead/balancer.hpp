#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "lead/network.hpp"

namespace lead {

/// Virtual-peer count for a node: k proportional to its capacity score.
int vnodes_for_capacity(double capacity, int base_k);

/// Registers a node with k virtual peers (ports base..base+k-1) and joins
/// each through the protocol.
NodeId virtualize(Network& net, int k, double capacity = 1.0);

/// Gracefully departs the node's least-requested vnode (lowest Vid on ties).
/// No-op when the node is down to one vnode.
std::optional<std::uint32_t> shed_load(Network& net, NodeId node);

struct LoadStats {
  std::vector<std::uint32_t> peers;         // live peer slots, ascending Vid
  std::vector<std::uint64_t> peer_keys;     // keys stored per peer
  std::vector<NodeId> nodes;                // live nodes, ascending id
  std::vector<std::uint64_t> node_keys;     // keys stored per node
  double stddev = 0.0;                      // population std dev of node_keys
  std::vector<std::vector<std::uint64_t>> heatmap;  // node_keys row-major
};

double population_stddev(std::span<const std::uint64_t> values);

/// Observer snapshot of key placement. heatmap_cols = 0 picks ceil(sqrt(n)).
LoadStats load_stats(const Network& net, std::size_t heatmap_cols = 0);

void write_heatmap_csv(std::ostream& out, const LoadStats& stats);

struct StddevSample {
  int k = 1;
  std::uint64_t seed = 0;
  double stddev = 0.0;
};
void write_stddev_series_csv(std::ostream& out, std::span<const StddevSample> rows);

}  // namespace lead
