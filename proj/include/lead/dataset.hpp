#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lead/common.hpp"

namespace lead {

struct Dataset {
  std::string name;
  std::vector<Key> keys;  // sorted, distinct
};

/// SOSD layout: u64 little-endian count, then count u64 little-endian keys.
/// Throws "corrupt-dataset" when the count disagrees with the file size.
/// Unsorted content is sorted (a warning goes to `warn` if given). take > 0
/// keeps a uniform subsample of that many keys.
Dataset load_dataset(const std::string& path, std::size_t take = 0, std::uint64_t seed = 1,
                     std::ostream* warn = nullptr);
void save_dataset(const std::string& path, const std::vector<Key>& keys);

enum class Distribution { Uniform, Lognormal, Clustered, Pareto };

std::string to_string(Distribution d);
Distribution parse_distribution(const std::string& text);

struct GenConfig {
  Distribution distribution = Distribution::Lognormal;
  std::size_t count = 1'000'000;
  std::uint64_t seed = 1;
  double mu = 0.0;
  double sigma = 2.0;
  int clusters = 5;
  double spread = 0.02;  // cluster std dev as a fraction of the cluster slot
  double alpha = 1.5;    // Pareto tail
};

/// count distinct keys, deterministic for a fixed seed.
Dataset gen_dataset(const GenConfig& config);

/// Uniform subsample of `take` keys, returned sorted.
std::vector<Key> subsample(const std::vector<Key>& keys, std::size_t take, std::uint64_t seed);

}  // namespace lead
