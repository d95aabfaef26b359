#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lead/common.hpp"
#include "lead/rng.hpp"

namespace lead {

enum class TopologyKind { Matrix, Euclidean, RandomGraph, UniformRandom };

std::string to_string(TopologyKind kind);

/// Pairwise one-way latency oracle over nodes 0..size-1, precomputed.
class Topology {
 public:
  Topology() = default;

  /// rtt[a][b] in ms; one-way is rtt/2. Negative or missing entries throw
  /// "incomplete-topology".
  static Topology matrix(const std::vector<std::vector<double>>& rtt);
  /// Text file: node count P, then P rows of P RTT values.
  static Topology load_matrix(const std::string& path);
  static Topology euclidean(const std::vector<std::pair<double, double>>& coords, double factor);
  /// Random points in a square of the given side.
  static Topology random_euclidean(std::size_t n, double side, double factor, SplitMix64& rng);
  /// Connected random graph (ring plus extra_edges random chords) with edge
  /// latencies in [lo, hi]; one-way latency is the shortest path.
  static Topology random_graph(std::size_t n, std::size_t extra_edges, double lo, double hi, SplitMix64& rng);
  /// Per-pair latency sampled once from [lo, hi], symmetric.
  static Topology uniform_random(std::size_t n, double lo, double hi, SplitMix64& rng);

  TopologyKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return n_; }
  double latency(NodeId a, NodeId b) const;
  /// 99th percentile one-way latency over ordered pairs a != b.
  double p99_one_way() const;

 private:
  TopologyKind kind_ = TopologyKind::UniformRandom;
  std::size_t n_ = 0;
  std::vector<double> one_way_;
};

/// Discrete-event loop: events fire in (time, seq) order.
class Simulator {
 public:
  using Action = std::function<void()>;

  SimTime now() const noexcept { return now_; }

  /// kind/detail feed the trace hash.
  void schedule_at(SimTime t, Action action, std::uint32_t kind = 0, std::uint64_t detail = 0);
  void schedule(SimTime delay, Action action, std::uint32_t kind = 0, std::uint64_t detail = 0) {
    schedule_at(now_ + delay, std::move(action), kind, detail);
  }

  /// Processes every event with fire time <= until; the clock ends at until.
  void run(SimTime until);
  /// Runs until the queue is empty.
  void run_all();
  bool step();
  bool idle() const noexcept { return heap_.empty(); }
  std::size_t pending() const noexcept { return heap_.size(); }

  std::uint64_t processed() const noexcept { return processed_; }
  std::uint64_t trace_hash() const noexcept { return trace_; }

 private:
  struct Event {
    SimTime time;
    std::uint64_t seq;
    std::uint32_t kind;
    std::uint64_t detail;
    Action action;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  SimTime now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::uint64_t processed_ = 0;
  std::uint64_t trace_ = 0xcbf29ce484222325ull;
  std::vector<Event> heap_;
};

enum class LifetimeFamily { Uniform, Exponential, Pareto };

std::string to_string(LifetimeFamily family);
LifetimeFamily parse_lifetime_family(const std::string& text);

struct ChurnConfig {
  LifetimeFamily family = LifetimeFamily::Exponential;
  SimTime lifetime_mean = 80 * kMinute;
  SimTime rejoin_mean = 10 * kMinute;
  double pareto_alpha = 2.0;
  bool reset_on_rejoin = true;
};

/// One positive duration with the given mean: Uniform on [0, 2·mean],
/// Exponential, or Pareto with x_m = mean·(α−1)/α.
SimTime sample_duration(LifetimeFamily family, SimTime mean, double pareto_alpha, SplitMix64& rng);

struct ChurnAction {
  SimTime time = 0;
  NodeId node = 0;
  bool rejoin = false;
};

/// Exit/rejoin schedule for each node over [0, horizon), sorted by time.
std::vector<ChurnAction> churn_schedule(const ChurnConfig& config, const std::vector<NodeId>& nodes,
                                        SimTime horizon, SplitMix64& rng);

struct WorkloadConfig {
  SimTime interval = 5 * kMinute;
  SimTime start = 0;  // first query at start + interval
};

/// Issue times start + i·interval for i ≥ 1 up to the horizon (inclusive).
std::vector<SimTime> workload_times(const WorkloadConfig& config, SimTime horizon);

}  // namespace lead
