#include "lead/balancer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lead {

int vnodes_for_capacity(double capacity, int base_k) {
  return std::max(1, static_cast<int>(std::lround(capacity * base_k)));
}

NodeId virtualize(Network& net, int k, double capacity) {
  const auto id = net.add_node(k, capacity);
  net.join_node(id);
  return id;
}

std::optional<std::uint32_t> shed_load(Network& net, NodeId node) {
  const auto& info = net.node(node);
  std::vector<std::uint32_t> live;
  for (auto v : info.vnodes)
    if (net.peer(v).alive) live.push_back(v);
  if (live.size() <= 1) return std::nullopt;
  const auto victim = *std::min_element(live.begin(), live.end(), [&](std::uint32_t a, std::uint32_t b) {
    const auto& pa = net.peer(a);
    const auto& pb = net.peer(b);
    if (pa.requests_served != pb.requests_served) return pa.requests_served < pb.requests_served;
    return pa.self.vid < pb.self.vid;
  });
  net.depart_peer(victim);
  return victim;
}

double population_stddev(std::span<const std::uint64_t> values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (auto v : values) mean += static_cast<double>(v);
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (auto v : values) ss += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

LoadStats load_stats(const Network& net, std::size_t heatmap_cols) {
  LoadStats s;
  std::vector<std::uint64_t> per_node(net.node_count(), 0);
  std::vector<bool> seen(net.node_count(), false);
  for (const auto& r : net.live_ring()) {
    const auto n = net.peer(r.idx).store.size();
    s.peers.push_back(r.idx);
    s.peer_keys.push_back(n);
    per_node[r.node] += n;
    seen[r.node] = true;
  }
  for (NodeId id = 0; id < net.node_count(); ++id)
    if (seen[id]) {
      s.nodes.push_back(id);
      s.node_keys.push_back(per_node[id]);
    }
  s.stddev = population_stddev(s.node_keys);
  const std::size_t n = s.node_keys.size();
  const std::size_t cols =
      heatmap_cols ? heatmap_cols : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(n))));
  for (std::size_t i = 0; i < n; i += cols)
    s.heatmap.emplace_back(s.node_keys.begin() + i, s.node_keys.begin() + std::min(n, i + cols));
  return s;
}

void write_heatmap_csv(std::ostream& out, const LoadStats& stats) {
  for (const auto& row : stats.heatmap) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << '\n';
  }
}

void write_stddev_series_csv(std::ostream& out, std::span<const StddevSample> rows) {
  out << "k,seed,stddev\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.3f", r.stddev);
    out << r.k << ',' << r.seed << ',' << buf << '\n';
  }
}

}  // namespace lead
