#include "lead/simnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>

#include "lead/hashing.hpp"

namespace lead {

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::Matrix:
      return "matrix";
    case TopologyKind::Euclidean:
      return "euclidean";
    case TopologyKind::RandomGraph:
      return "random-graph";
    case TopologyKind::UniformRandom:
      return "uniform";
  }
  return "?";
}

Topology Topology::matrix(const std::vector<std::vector<double>>& rtt) {
  Topology t;
  t.kind_ = TopologyKind::Matrix;
  t.n_ = rtt.size();
  t.one_way_.assign(t.n_ * t.n_, 0.0);
  for (std::size_t a = 0; a < t.n_; ++a) {
    if (rtt[a].size() != t.n_) throw Error("incomplete-topology", "row " + std::to_string(a) + " has wrong length");
    for (std::size_t b = 0; b < t.n_; ++b) {
      if (a == b) continue;
      const double v = rtt[a][b];
      if (!(v > 0) || !std::isfinite(v))
        throw Error("incomplete-topology", "missing entry " + std::to_string(a) + "," + std::to_string(b));
      t.one_way_[a * t.n_ + b] = v / 2;
    }
  }
  return t;
}

Topology Topology::load_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("incomplete-topology", "cannot open " + path);
  std::size_t n = 0;
  if (!(in >> n) || n == 0) throw Error("incomplete-topology", "bad node count");
  std::vector<std::vector<double>> rtt(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (!(in >> rtt[a][b])) throw Error("incomplete-topology", "matrix ends early");
  return matrix(rtt);
}

Topology Topology::euclidean(const std::vector<std::pair<double, double>>& coords, double factor) {
  Topology t;
  t.kind_ = TopologyKind::Euclidean;
  t.n_ = coords.size();
  t.one_way_.assign(t.n_ * t.n_, 0.0);
  for (std::size_t a = 0; a < t.n_; ++a)
    for (std::size_t b = 0; b < t.n_; ++b)
      if (a != b)
        t.one_way_[a * t.n_ + b] =
            std::hypot(coords[a].first - coords[b].first, coords[a].second - coords[b].second) * factor;
  return t;
}

Topology Topology::random_euclidean(std::size_t n, double side, double factor, SplitMix64& rng) {
  std::vector<std::pair<double, double>> coords(n);
  for (auto& c : coords) c = {rng.uniform(0.0, side), rng.uniform(0.0, side)};
  auto t = euclidean(coords, factor);
  // Coincident points would give zero latency between distinct nodes.
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b) t.one_way_[a * n + b] = std::max(t.one_way_[a * n + b], 1e-3);
  return t;
}

Topology Topology::random_graph(std::size_t n, std::size_t extra_edges, double lo, double hi, SplitMix64& rng) {
  Topology t;
  t.kind_ = TopologyKind::RandomGraph;
  t.n_ = n;
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  auto add = [&](std::size_t a, std::size_t b) {
    const double w = rng.uniform(lo, hi);
    adj[a].emplace_back(b, w);
    adj[b].emplace_back(a, w);
  };
  for (std::size_t a = 0; n > 1 && a < n; ++a) add(a, (a + 1) % n);
  for (std::size_t e = 0; n > 2 && e < extra_edges; ++e) {
    const auto a = rng.below(n), b = rng.below(n);
    if (a != b) add(a, b);
  }
  t.one_way_.assign(n * n, 0.0);
  using Item = std::pair<double, std::size_t>;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      for (auto [v, w] : adj[u])
        if (d + w < dist[v]) {
          dist[v] = d + w;
          pq.emplace(dist[v], v);
        }
    }
    for (std::size_t b = 0; b < n; ++b) t.one_way_[s * n + b] = dist[b];
  }
  return t;
}

Topology Topology::uniform_random(std::size_t n, double lo, double hi, SplitMix64& rng) {
  Topology t;
  t.kind_ = TopologyKind::UniformRandom;
  t.n_ = n;
  t.one_way_.assign(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double v = rng.uniform(lo, hi);
      t.one_way_[a * n + b] = v;
      t.one_way_[b * n + a] = v;
    }
  return t;
}

double Topology::latency(NodeId a, NodeId b) const {
  if (a >= n_ || b >= n_) throw Error("incomplete-topology", "node outside topology");
  return one_way_[static_cast<std::size_t>(a) * n_ + b];
}

double Topology::p99_one_way() const {
  std::vector<double> v;
  v.reserve(n_ * n_);
  for (std::size_t a = 0; a < n_; ++a)
    for (std::size_t b = 0; b < n_; ++b)
      if (a != b) v.push_back(one_way_[a * n_ + b]);
  if (v.empty()) return 0.0;
  const auto idx = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(v.size()))) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

// ----- Simulator --------------------------------------------------------------

void Simulator::schedule_at(SimTime t, Action action, std::uint32_t kind, std::uint64_t detail) {
  heap_.push_back(Event{std::max(t, now_), seq_++, kind, detail, std::move(action)});
  std::push_heap(heap_.begin(), heap_.end(), Later{});
}

bool Simulator::step() {
  if (heap_.empty()) return false;
  std::pop_heap(heap_.begin(), heap_.end(), Later{});
  Event ev = std::move(heap_.back());
  heap_.pop_back();
  now_ = ev.time;
  ++processed_;
  trace_ = fmix64(trace_ ^ std::bit_cast<std::uint64_t>(ev.time)) ^ (static_cast<std::uint64_t>(ev.kind) << 48) ^
           ev.detail;
  ev.action();
  return true;
}

void Simulator::run(SimTime until) {
  while (!heap_.empty() && heap_.front().time <= until) step();
  now_ = std::max(now_, until);
}

void Simulator::run_all() {
  while (step()) {
  }
}

// ----- churn and workload -------------------------------------------------------

std::string to_string(LifetimeFamily family) {
  switch (family) {
    case LifetimeFamily::Uniform:
      return "uniform";
    case LifetimeFamily::Exponential:
      return "exponential";
    case LifetimeFamily::Pareto:
      return "pareto";
  }
  return "?";
}

LifetimeFamily parse_lifetime_family(const std::string& text) {
  if (text == "uniform") return LifetimeFamily::Uniform;
  if (text == "exponential") return LifetimeFamily::Exponential;
  if (text == "pareto") return LifetimeFamily::Pareto;
  throw Error("invalid-config", "unknown lifetime family '" + text + "'");
}

SimTime sample_duration(LifetimeFamily family, SimTime mean, double pareto_alpha, SplitMix64& rng) {
  for (;;) {
    double v = 0;
    switch (family) {
      case LifetimeFamily::Uniform:
        v = rng.uniform(0.0, 2 * mean);
        break;
      case LifetimeFamily::Exponential:
        v = rng.exponential(mean);
        break;
      case LifetimeFamily::Pareto:
        v = rng.pareto(pareto_alpha, mean * (pareto_alpha - 1) / pareto_alpha);
        break;
    }
    if (v > 0) return v;
  }
}

std::vector<ChurnAction> churn_schedule(const ChurnConfig& config, const std::vector<NodeId>& nodes,
                                        SimTime horizon, SplitMix64& rng) {
  std::vector<ChurnAction> out;
  for (NodeId node : nodes) {
    SimTime t = sample_duration(config.family, config.lifetime_mean, config.pareto_alpha, rng);
    while (t < horizon) {
      out.push_back({t, node, false});
      t += sample_duration(config.family, config.rejoin_mean, config.pareto_alpha, rng);
      if (t >= horizon) break;
      out.push_back({t, node, true});
      t += sample_duration(config.family, config.lifetime_mean, config.pareto_alpha, rng);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ChurnAction& a, const ChurnAction& b) { return a.time < b.time; });
  return out;
}

std::vector<SimTime> workload_times(const WorkloadConfig& config, SimTime horizon) {
  std::vector<SimTime> out;
  if (config.interval <= 0) return out;
  for (std::size_t i = 1;; ++i) {
    const SimTime t = config.start + static_cast<double>(i) * config.interval;
    if (t > horizon + 1e-9) break;
    out.push_back(t);
  }
  return out;
}

}  // namespace lead
