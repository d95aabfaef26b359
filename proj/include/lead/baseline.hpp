#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lead/network.hpp"

namespace lead {

/// The n keys of a range split into ceil(n/S) lookup batches.
class BatchPlan {
 public:
  BatchPlan(std::vector<Key> keys, std::size_t batch_size);

  std::size_t batch_size() const noexcept { return size_; }
  std::size_t batches() const noexcept { return (keys_.size() + size_ - 1) / size_; }
  std::span<const Key> batch(std::size_t i) const;
  std::span<const Key> keys() const noexcept { return keys_; }

 private:
  std::vector<Key> keys_;
  std::size_t size_;
};

/// Chord range emulation: the harness knows the keys in the range (oracle)
/// and issues them as single-key lookups, one batch at a time. Every lookup
/// of a batch starts together; the next batch starts when all are done.
/// Failed lookups are retried once, then counted as misses. The record sums
/// messages over all lookups and reports the largest hop count.
void chord_batch_range(Network& net, std::uint32_t origin, BatchPlan plan, QueryCallback done);

}  // namespace lead
