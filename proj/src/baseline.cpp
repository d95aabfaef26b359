#include "lead/baseline.hpp"

#include <algorithm>
#include <memory>

namespace lead {

BatchPlan::BatchPlan(std::vector<Key> keys, std::size_t batch_size) : keys_(std::move(keys)), size_(batch_size) {
  if (size_ == 0) throw Error("invalid-query", "batch size must be >= 1");
}

std::span<const Key> BatchPlan::batch(std::size_t i) const {
  const std::size_t lo = i * size_;
  const std::size_t hi = std::min(keys_.size(), lo + size_);
  return std::span<const Key>(keys_).subspan(lo, hi - lo);
}

namespace {

struct BatchRun {
  Network* net = nullptr;
  std::uint32_t origin = 0;
  BatchPlan plan;
  QueryCallback done;
  QueryRecord record;
  std::size_t current = 0;
  std::size_t outstanding = 0;
  std::size_t misses = 0;

  BatchRun(BatchPlan p) : plan(std::move(p)) {}
};

void launch_batch(const std::shared_ptr<BatchRun>& run);

void issue(const std::shared_ptr<BatchRun>& run, Key key, bool retry) {
  run->net->lookup(run->origin, key, [run, key, retry](const QueryRecord& r) {
    run->record.messages += r.messages;
    run->record.hops = std::max(run->record.hops, r.hops);
    if (r.success) {
      run->record.results.push_back(key);
    } else if (!retry) {
      issue(run, key, true);
      return;
    } else {
      ++run->misses;
    }
    if (--run->outstanding == 0) {
      ++run->current;
      launch_batch(run);
    }
  });
}

void launch_batch(const std::shared_ptr<BatchRun>& run) {
  if (run->current >= run->plan.batches()) {
    auto& r = run->record;
    std::sort(r.results.begin(), r.results.end());
    r.complete = run->net->sim().now();
    r.success = run->misses == 0;
    r.partial = run->misses > 0;
    if (run->done) run->done(r);
    return;
  }
  const auto keys = run->plan.batch(run->current);
  run->outstanding = keys.size();
  for (Key k : keys) issue(run, k, false);
}

}  // namespace

void chord_batch_range(Network& net, std::uint32_t origin, BatchPlan plan, QueryCallback done) {
  auto run = std::make_shared<BatchRun>(std::move(plan));
  run->net = &net;
  run->origin = origin;
  run->done = std::move(done);
  run->record.kind = QueryKind::Range;
  run->record.start = net.sim().now();
  run->record.requested = run->plan.keys().size();
  if (!run->plan.keys().empty()) run->record.key = run->plan.keys().front();
  if (run->plan.batches() == 0) {
    net.sim().schedule(0.0, [run] { launch_batch(run); });
    return;
  }
  launch_batch(run);
}

}  // namespace lead
