#include "lead/store.hpp"

namespace lead {

bool OrderedStore::insert(Key key, Value value) {
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    entries_.modify(it, [&](Entry& e) { e.value = std::move(value); });
    return false;
  }
  entries_.insert(Entry{key, std::move(value)});
  return true;
}

std::optional<Value> OrderedStore::get(Key key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->value;
}

bool OrderedStore::erase(Key key) { return entries_.erase(key) > 0; }

std::size_t OrderedStore::rank_of(Key key) const { return entries_.rank(entries_.lower_bound(key)); }

std::optional<Key> OrderedStore::min_key() const {
  if (entries_.empty()) return std::nullopt;
  return entries_.begin()->key;
}

std::optional<Key> OrderedStore::max_key() const {
  if (entries_.empty()) return std::nullopt;
  return std::prev(entries_.end())->key;
}

RangeSlice OrderedStore::local_range(Key start, std::size_t n) const {
  return local_range_while(start, n, [](Key) { return true; });
}

RangeSlice OrderedStore::local_range_while(Key start, std::size_t n, const std::function<bool(Key)>& keep) const {
  RangeSlice out;
  for (auto it = entries_.lower_bound(start); it != entries_.end() && out.pairs.size() < n; ++it) {
    if (!keep(it->key)) break;
    out.pairs.emplace_back(it->key, it->value);
  }
  out.remaining = n - out.pairs.size();
  return out;
}

std::vector<KeyValue> OrderedStore::extract_interval(std::uint64_t a, std::uint64_t b,
                                                     const std::function<HashValue(Key)>& hash,
                                                     const RingSpace& ring) {
  if (a == b) return {};
  return extract_if([&](Key k) { return ring.in_half_open(hash(k), a, b); });
}

std::vector<KeyValue> OrderedStore::extract_if(const std::function<bool(Key)>& pred) {
  std::vector<KeyValue> out;
  for (auto it = entries_.begin(); it != entries_.end();) {
    if (pred(it->key)) {
      out.emplace_back(it->key, it->value);
      it = entries_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

std::vector<KeyValue> OrderedStore::take_all() {
  std::vector<KeyValue> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.key, e.value);
  entries_.clear();
  return out;
}

void OrderedStore::for_each(const std::function<void(Key, const Value&)>& fn) const {
  for (const auto& e : entries_) fn(e.key, e.value);
}

std::vector<Key> OrderedStore::keys() const {
  std::vector<Key> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.key);
  return out;
}

}  // namespace lead
