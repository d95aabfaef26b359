#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <boost/multi_index/member.hpp>
#include <boost/multi_index/ranked_index.hpp>
#include <boost/multi_index_container.hpp>

#include "lead/common.hpp"

namespace lead {

using KeyValue = std::pair<Key, Value>;

struct RangeSlice {
  std::vector<KeyValue> pairs;
  std::size_t remaining = 0;
};

/// Per-peer ordered key-value store with order statistics.
class OrderedStore {
 public:
  /// Inserts or overwrites. Returns true if the key was new.
  bool insert(Key key, Value value);
  std::optional<Value> get(Key key) const;
  bool erase(Key key);
  bool contains(Key key) const { return entries_.find(key) != entries_.end(); }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  /// Number of stored keys strictly smaller than key.
  std::size_t rank_of(Key key) const;
  std::optional<Key> min_key() const;
  std::optional<Key> max_key() const;

  /// Up to n pairs with key >= start, ascending.
  RangeSlice local_range(Key start, std::size_t n) const;
  /// As local_range, but stops at the first key for which keep() is false.
  RangeSlice local_range_while(Key start, std::size_t n, const std::function<bool(Key)>& keep) const;

  /// Removes and returns every pair whose hash lies in the ring interval (a, b].
  /// (a, a] is empty here; use take_all for the whole ring.
  std::vector<KeyValue> extract_interval(std::uint64_t a, std::uint64_t b, const std::function<HashValue(Key)>& hash,
                                         const RingSpace& ring = RingSpace{});
  /// Removes and returns every pair for which pred holds.
  std::vector<KeyValue> extract_if(const std::function<bool(Key)>& pred);
  std::vector<KeyValue> take_all();

  void for_each(const std::function<void(Key, const Value&)>& fn) const;
  std::vector<Key> keys() const;

 private:
  struct Entry {
    Key key;
    Value value;
  };
  using Container = boost::multi_index_container<
      Entry, boost::multi_index::indexed_by<
                 boost::multi_index::ranked_unique<boost::multi_index::member<Entry, Key, &Entry::key>>>>;
  Container entries_;
};

}  // namespace lead
