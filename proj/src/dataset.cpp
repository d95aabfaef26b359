#include "lead/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "lead/rng.hpp"

namespace lead {

namespace {

std::uint64_t read_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void write_le(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

Key to_key(double x) {
  if (!(x > 0)) return 0;
  if (x >= 18446744073709549568.0) return std::numeric_limits<Key>::max();
  return static_cast<Key>(x);
}

}  // namespace

Dataset load_dataset(const std::string& path, std::size_t take, std::uint64_t seed, std::ostream* warn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("dataset-not-found", path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw Error("corrupt-dataset", "missing count");
  const auto count = read_le(bytes.data());
  if ((bytes.size() - 8) % 8 != 0 || (bytes.size() - 8) / 8 != count)
    throw Error("corrupt-dataset", "count " + std::to_string(count) + " disagrees with file size");
  Dataset d;
  d.name = path;
  d.keys.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.keys[i] = read_le(bytes.data() + 8 + 8 * i);
  if (!std::is_sorted(d.keys.begin(), d.keys.end())) {
    if (warn) *warn << "warning: " << path << " is not sorted; sorting\n";
    std::sort(d.keys.begin(), d.keys.end());
  }
  d.keys.erase(std::unique(d.keys.begin(), d.keys.end()), d.keys.end());
  if (take > 0 && take < d.keys.size()) d.keys = subsample(d.keys, take, seed);
  return d;
}

void save_dataset(const std::string& path, const std::vector<Key>& keys) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", path);
  write_le(out, keys.size());
  for (Key k : keys) write_le(out, k);
}

std::string to_string(Distribution d) {
  switch (d) {
    case Distribution::Uniform: return "uniform";
    case Distribution::Lognormal: return "lognormal";
    case Distribution::Clustered: return "clustered";
    case Distribution::Pareto: return "pareto";
  }
  return "?";
}

Distribution parse_distribution(const std::string& text) {
  for (auto d : {Distribution::Uniform, Distribution::Lognormal, Distribution::Clustered, Distribution::Pareto})
    if (to_string(d) == text) return d;
  throw Error("invalid-config", "unknown distribution " + text);
}

Dataset gen_dataset(const GenConfig& c) {
  if (c.count == 0) throw Error("invalid-config", "dataset count must be >= 1");
  SplitMix64 rng(c.seed);
  const double slot = 18446744073709551616.0 / std::max(1, c.clusters);
  auto draw = [&]() -> Key {
    switch (c.distribution) {
      case Distribution::Uniform:
        return rng.next();
      case Distribution::Lognormal:
        return to_key(std::exp(rng.normal(c.mu, c.sigma)) * 1e12);
      case Distribution::Clustered: {
        const auto i = rng.below(static_cast<std::uint64_t>(c.clusters));
        return to_key((static_cast<double>(i) + 0.5) * slot + rng.normal(0.0, c.spread * slot));
      }
      case Distribution::Pareto:
        return to_key(rng.pareto(c.alpha, 1.0) * 1e9);
    }
    return 0;
  };
  std::vector<Key> keys;
  keys.reserve(c.count);
  while (keys.size() < c.count) {
    while (keys.size() < c.count) keys.push_back(draw());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  }
  return Dataset{to_string(c.distribution), std::move(keys)};
}

std::vector<Key> subsample(const std::vector<Key>& keys, std::size_t take, std::uint64_t seed) {
  if (take >= keys.size()) return keys;
  // Selection sampling keeps order and picks each subset with equal chance.
  SplitMix64 rng(seed);
  std::vector<Key> out;
  out.reserve(take);
  std::size_t need = take;
  for (std::size_t i = 0; i < keys.size() && need > 0; ++i) {
    if (rng.below(keys.size() - i) < need) {
      out.push_back(keys[i]);
      --need;
    }
  }
  return out;
}

}  // namespace lead
