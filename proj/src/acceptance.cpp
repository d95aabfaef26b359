#include "lead/acceptance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "lead/dataset.hpp"
#include "lead/hashing.hpp"

namespace lead {

namespace {

unsigned ceil_log2(std::size_t x) {
  unsigned b = 0;
  while ((std::size_t{1} << b) < x) ++b;
  return b;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

const RangeStat* find(const std::map<std::pair<std::string, std::int64_t>, RangeStat>& m, const std::string& s,
                      std::int64_t n) {
  auto it = m.find({s, n});
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace

std::string format_result(const CriterionResult& r) {
  return std::string(r.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(r.id) + " " + r.name + ": " +
         r.detail;
}

// ----- 1-3 ---------------------------------------------------------------------

std::vector<CriterionResult> check_range(const ExperimentConfig& cfg,
                                         const std::map<std::pair<std::string, std::int64_t>, RangeStat>& stats) {
  std::vector<CriterionResult> out;
  {
    CriterionResult r{1, "range-message-reduction", false, "needs lead and chord100 at n=2000"};
    const auto* lead = find(stats, "lead", 2000);
    const auto* chord = find(stats, "chord100", 2000);
    if (lead && chord) {
      const double ratio = lead->mean_messages / chord->mean_messages;
      r.pass = ratio <= 0.2;
      r.detail = "lead " + fmt(lead->mean_messages) + " vs chord100 " + fmt(chord->mean_messages) +
                 " messages, ratio " + sci(ratio) + " (<= 0.2)";
    }
    out.push_back(r);
  }
  {
    CriterionResult r{2, "range-message-bound", true, ""};
    const auto peers = static_cast<std::size_t>(cfg.u64("nodes") * cfg.u64("vnodes_per_node"));
    std::vector<std::string> parts;
    for (std::int64_t n : {500, 2000, 5000}) {
      const auto* lead = find(stats, "lead", n);
      if (!lead) {
        r.pass = false;
        parts.push_back("n=" + std::to_string(n) + " missing");
        continue;
      }
      // The bound uses the dataset size of the run.
      const auto total = static_cast<std::size_t>(cfg.u64("dataset.count"));
      const auto bound = range_message_bound(peers, static_cast<std::size_t>(n),
                                             cfg.u64("dataset.take") ? cfg.u64("dataset.take") : total);
      r.pass = r.pass && lead->bound_violations == 0 && lead->max_messages <= bound;
      parts.push_back("n=" + std::to_string(n) + " max " + std::to_string(lead->max_messages) + " <= " +
                      std::to_string(bound) + ", violations " + std::to_string(lead->bound_violations));
    }
    r.detail = join(parts);
    out.push_back(r);
  }
  {
    CriterionResult r{3, "latency-flatness", false, "needs lead and chord100 at n=500 and n=5000"};
    const auto* l5 = find(stats, "lead", 500);
    const auto* l50 = find(stats, "lead", 5000);
    const auto* c5 = find(stats, "chord100", 500);
    const auto* c50 = find(stats, "chord100", 5000);
    if (l5 && l50 && c5 && c50) {
      const double lr = l50->mean_latency / l5->mean_latency;
      const double cr = c50->mean_latency / c5->mean_latency;
      r.pass = lr <= 2.0 && cr >= 5.0;
      r.detail = "lead ratio " + fmt(lr) + " (<= 2), chord100 ratio " + fmt(cr) + " (>= 5)";
    }
    out.push_back(r);
  }
  return out;
}

// ----- 4 -------------------------------------------------------------------------

CriterionResult check_lookup(const ExperimentConfig& cfg, const std::map<std::string, LookupStat>& stats) {
  CriterionResult r{4, "single-key-parity", false, "missing systems"};
  auto lead = stats.find("lead");
  auto chord = stats.find("chord");
  if (lead == stats.end() || chord == stats.end()) return r;
  const double ratio = lead->second.mean_latency / chord->second.mean_latency;
  const auto peers = cfg.u64("nodes") * cfg.u64("vnodes_per_node");
  const auto hop_bound = ceil_log2(peers);
  r.pass = ratio >= 0.9 && ratio <= 1.1 && lead->second.mean_hops <= hop_bound && lead->second.success_rate == 1.0;
  r.detail = "latency ratio " + fmt(ratio) + " in [0.9, 1.1], lead mean hops " + fmt(lead->second.mean_hops) +
             " <= " + std::to_string(hop_bound) + ", success " + fmt(lead->second.success_rate);
  return r;
}

// ----- 7 -------------------------------------------------------------------------

CriterionResult check_balance(const std::map<int, BalanceStat>& stats) {
  CriterionResult r{7, "load-balance-vs-vnodes", true, ""};
  std::vector<std::string> parts;
  double prev = -1;
  for (const auto& [k, st] : stats) {
    if (prev >= 0 && st.mean > prev) r.pass = false;
    prev = st.mean;
    parts.push_back("k=" + std::to_string(k) + " " + fmt(st.mean));
  }
  auto one = stats.find(1);
  auto ten = stats.find(10);
  if (one == stats.end() || ten == stats.end()) {
    r.pass = false;
    parts.push_back("k=1 and k=10 required");
  } else {
    const double ratio = ten->second.mean / one->second.mean;
    r.pass = r.pass && ratio <= 0.5;
    parts.push_back("std(10)/std(1) " + fmt(ratio) + " (<= 0.5)");
  }
  r.detail = join(parts);
  return r;
}

// ----- 8, 10 ---------------------------------------------------------------------

CriterionResult check_drift(const UpdateStat& s) {
  CriterionResult r{8, "drift-tolerance-and-recovery", false, ""};
  const double drift = s.drift_std / s.baseline_std;
  double best = 1e300;
  std::string rounds;
  for (std::size_t i = 0; i < s.round_std.size() && i < 3; ++i) {
    best = std::min(best, s.round_std[i] / s.baseline_std);
    rounds += (rounds.empty() ? "" : ", ") + fmt(s.round_std[i] / s.baseline_std);
  }
  r.pass = drift <= 2.0 && best <= 1.25;
  r.detail = "no-update ratio " + fmt(drift) + " (<= 2), FRM round ratios [" + rounds + "] (<= 1.25), baseline std " +
             fmt(s.baseline_std);
  return r;
}

CriterionResult check_convergence(const ExperimentConfig& cfg, const UpdateStat& s) {
  CriterionResult r{10, "frm-convergence", false, ""};
  const auto peers = cfg.u64("nodes") * cfg.u64("vnodes_per_node");
  const double bound = 5.0 * ceil_log2(peers);
  r.pass = s.publications > 0 && s.converged && s.versions_monotone && s.max_convergence_rounds <= bound;
  r.detail = std::to_string(s.publications) + " publications, slowest peer " + fmt(s.max_convergence_rounds) +
             " heartbeat rounds (<= " + fmt(bound) + "), all converged " + (s.converged ? "yes" : "no") +
             ", versions monotone " + (s.versions_monotone ? "yes" : "no");
  return r;
}

// ----- 9 ---------------------------------------------------------------------------

CriterionResult check_churn(const std::map<std::string, ChurnStat>& stats) {
  CriterionResult r{9, "churn-resilience", true, ""};
  auto none = stats.find("none");
  if (none == stats.end()) return {9, "churn-resilience", false, "missing churn-free reference"};
  std::vector<std::string> parts{"churn-free latency " + fmt(none->second.mean_latency)};
  for (const auto& [family, st] : stats) {
    if (family == "none") continue;
    const double ratio = st.mean_latency / none->second.mean_latency;
    const bool ok = st.success_rate >= 0.99 && ratio <= 1.5;
    r.pass = r.pass && ok;
    parts.push_back(family + " success " + fmt(st.success_rate) + " latency ratio " + fmt(ratio) + " (" +
                    std::to_string(st.exits) + " exits)");
  }
  r.detail = join(parts);
  return r;
}

// ----- 5 ---------------------------------------------------------------------------

CriterionResult check_order_preservation(std::uint64_t seed) {
  CriterionResult r{5, "order-preservation", true, ""};
  std::size_t violations = 0, pairs = 0;
  for (auto dist : {Distribution::Uniform, Distribution::Lognormal, Distribution::Clustered, Distribution::Pareto}) {
    GenConfig g;
    g.distribution = dist;
    g.count = 100'000;
    g.seed = seed;
    const TrainingSet train(gen_dataset(g).keys);
    for (auto family : {LeafFamily::Linear, LeafFamily::Cubic, LeafFamily::RadixTable}) {
      TrainConfig tc;
      tc.family = family;
      tc.branching = 256;
      const auto m = train_rmi(train, tc);
      SplitMix64 rng(fmix64(seed ^ (static_cast<std::uint64_t>(dist) << 8) ^ static_cast<std::uint64_t>(family)));
      auto draw = [&]() -> Key {
        switch (rng.below(3)) {
          case 0: return train.keys()[rng.below(train.size())];
          case 1: return train.keys()[rng.below(train.size())] + rng.below(1000) - 500;
          default: return rng.next() >> rng.below(64);
        }
      };
      for (int i = 0; i < 100'000; ++i) {
        Key a = draw(), b = draw();
        if (a > b) std::swap(a, b);
        ++pairs;
        if (m.hash(a) > m.hash(b)) ++violations;
      }
    }
  }
  r.pass = violations == 0;
  r.detail = std::to_string(violations) + " violations over " + std::to_string(pairs) +
             " sorted pairs (3 families x 4 distributions)";
  return r;
}

// ----- 6 ---------------------------------------------------------------------------

CriterionResult check_range_exactness(const ExperimentConfig& cfg) {
  std::size_t checked = 0;
  const auto bad = range_exactness(cfg, 1000, &checked);
  return {6, "range-exactness", bad == 0 && checked == 1000,
          std::to_string(bad) + " mismatches over " + std::to_string(checked) + " queries"};
}

// ----- 11 --------------------------------------------------------------------------

CriterionResult check_fingers(std::uint64_t seed) {
  Simulator sim;
  NetworkConfig nc;
  nc.placement = Placement::Uniform;
  nc.seed = seed;
  SplitMix64 rng(fmix64(seed ^ 0xf1));
  Network net(sim, Topology::uniform_random(50, 10, 100, rng), nc);
  for (int i = 0; i < 50; ++i) net.add_node(1);
  net.join_node(0);
  for (NodeId n = 1; n < 50; ++n) {
    sim.run(sim.now() + 2000);
    net.join_node(n);
  }
  sim.run(sim.now() + 60'000);
  auto ring = net.live_ring();
  std::vector<std::uint64_t> vids;
  for (const auto& p : ring) vids.push_back(p.vid);
  std::size_t entries = 0, wrong = 0;
  for (const auto& ref : ring) {
    const auto& p = net.peer(ref.idx);
    for (unsigned f = 0; f < p.fingers.size(); ++f) {
      ++entries;
      const auto want = successor_of(vids, decimal_finger_target(p.self.vid, f + 1, net.ring()));
      if (!p.fingers[f] || p.fingers[f]->vid != want) ++wrong;
    }
  }
  return {11, "finger-table-oracle", ring.size() == 50 && wrong == 0 && entries == 50 * 19,
          std::to_string(wrong) + " wrong of " + std::to_string(entries) + " entries on " +
              std::to_string(ring.size()) + " protocol-joined peers"};
}

// ----- 12 --------------------------------------------------------------------------

CriterionResult check_gradients(std::uint64_t seed) {
  GenConfig g;
  g.count = 20'000;
  g.seed = seed;
  const TrainingSet train(gen_dataset(g).keys);
  double worst = 0;
  std::size_t cases = 0;
  for (auto family : {LeafFamily::Linear, LeafFamily::Cubic, LeafFamily::RadixTable}) {
    TrainConfig tc;
    tc.family = family;
    tc.branching = 64;
    const auto m = train_rmi(train, tc);
    SplitMix64 rng(fmix64(seed + static_cast<std::uint64_t>(family)));
    auto loss = [](const RmiModel& model, std::uint32_t leaf, double u, double target) {
      const double e = model.raw_prediction(leaf, u) - target;
      return e * e;
    };
    for (int c = 0; c < 100; ++c, ++cases) {
      const Key key = train.keys()[rng.below(train.size())];
      const auto [leaf, u] = m.route(key);
      const double target = m.raw_prediction(leaf, u) + rng.uniform(-500.0, 500.0);
      const auto grad = leaf_gradient(m, leaf, u, target);
      for (std::size_t p = 0; p < grad.size(); ++p) {
        LeafModel lm = m.leaf(leaf);
        const double step = 1e-3 * std::max(1.0, std::fabs(lm.params[p])) / std::pow(std::max(1.0, u), p);
        auto plus = m, minus = m;
        lm.params[p] += step;
        plus.set_leaf(leaf, lm);
        lm.params[p] -= 2 * step;
        minus.set_leaf(leaf, lm);
        const double fd = (loss(plus, leaf, u, target) - loss(minus, leaf, u, target)) / (2 * step);
        worst = std::max(worst, std::fabs(grad[p] - fd) / std::max(1.0, std::fabs(fd)));
      }
    }
  }
  return {12, "gradient-correctness", worst <= 1e-5,
          "worst relative error " + sci(worst) + " over " + std::to_string(cases) + " cases"};
}

// ----- 13 --------------------------------------------------------------------------

CriterionResult check_model_trend(std::uint64_t seed, std::uint32_t branching) {
  GenConfig g;
  g.count = 1'000'000;
  g.seed = seed;
  const TrainingSet train(gen_dataset(g).keys);
  auto stats = [&](LeafFamily f) {
    TrainConfig tc;
    tc.family = f;
    tc.branching = branching;
    return error_stats(train_rmi(train, tc), train);
  };
  const auto lin = stats(LeafFamily::Linear);
  const auto radix = stats(LeafFamily::RadixTable);
  const auto cubic = stats(LeafFamily::Cubic);
  const bool pass = cubic.avg_log2_error <= radix.avg_log2_error && radix.avg_log2_error <= lin.avg_log2_error &&
                    lin.size_bytes < radix.size_bytes && radix.size_bytes < cubic.size_bytes;
  std::ostringstream d;
  d << "avg log2 error linear " << fmt(lin.avg_log2_error) << " radix " << fmt(radix.avg_log2_error) << " cubic "
    << fmt(cubic.avg_log2_error) << "; bytes " << lin.size_bytes << " < " << radix.size_bytes << " < "
    << cubic.size_bytes << " (B=" << branching << ")";
  return {13, "model-size-error-trend", pass, d.str()};
}

// ----- 14 --------------------------------------------------------------------------

CriterionResult check_determinism(const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  cfg.set("dataset.count", "100000");
  cfg.set("ranges", "500");
  cfg.set("queries", "10");
  cfg.set("seeds", "1");
  cfg.set("churn.family", "pareto");
  cfg.set("churn.horizon_min", "4");
  cfg.set("workload.interval_ms", "20000");
  auto render = [&] {
    std::ostringstream os;
    write_records_csv(os, bench_range(cfg).records);
    write_records_csv(os, bench_churn(cfg).records);
    return os.str();
  };
  const auto a = render();
  const auto b = render();
  return {14, "determinism", a == b && !a.empty(),
          std::string(a == b ? "identical" : "different") + " records.csv across reruns (" +
              std::to_string(a.size()) + " bytes)"};
}

// ---------------------------------------------------------------------------------

std::vector<CriterionResult> run_acceptance(const ExperimentConfig& cfg, const CriterionSink& sink) {
  std::vector<CriterionResult> all;
  auto emit = [&](CriterionResult r) {
    if (sink) sink(r);
    all.push_back(std::move(r));
  };
  const auto seed = cfg.u64("seed");

  {
    ExperimentConfig rc = cfg;
    rc.set("ranges", "500,2000,5000");
    rc.set("systems", "lead,chord100");
    std::map<std::pair<std::string, std::int64_t>, RangeStat> stats;
    bench_range(rc, &stats);
    for (auto& r : check_range(rc, stats)) emit(r);
  }
  {
    std::map<std::string, LookupStat> stats;
    bench_lookup(cfg, &stats);
    emit(check_lookup(cfg, stats));
  }
  emit(check_order_preservation(seed));
  emit(check_range_exactness(cfg));
  {
    std::map<int, BalanceStat> stats;
    bench_balance(cfg, &stats);
    emit(check_balance(stats));
  }
  UpdateStat update;
  bench_update(cfg, &update);
  emit(check_drift(update));
  {
    std::map<std::string, ChurnStat> stats;
    bench_churn(cfg, &stats);
    emit(check_churn(stats));
  }
  emit(check_convergence(cfg, update));
  emit(check_fingers(seed));
  emit(check_gradients(seed));
  emit(check_model_trend(seed, static_cast<std::uint32_t>(cfg.u64("model.branching"))));
  emit(check_determinism(cfg));
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return all;
}

}  // namespace lead
