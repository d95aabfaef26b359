#pragma once

#include <cstdint>
#include <vector>

#include "lead/common.hpp"

namespace lead {

struct FrmConfig {
  bool enabled = true;
  double threshold = 0.40;
  double quorum = 0.90;
  double learning_rate = 0.05;
};

/// Drift counters of one peer since its last model adoption.
struct UpdateState {
  std::uint64_t new_since_update = 0;  // m
  std::uint64_t base_count = 0;        // k
};

/// m / (k + m) >= t, with 0/0 = 0.
bool check_ready(const UpdateState& state, double threshold);

/// At least `quorum` of the neighbours flagged ready. Empty neighbourhoods
/// never reach quorum.
bool quorum_reached(std::size_t ready, std::size_t neighbours, double quorum);

/// Target rank of a freshly stored key: the peer's base rank plus the
/// midpoint of the key's flanking neighbours' local ranks. With the key
/// already stored at local index i its neighbours sit at i-1 and i+1, so the
/// midpoint is i.
double insert_target_rank(double predicted_rank_of_min_key, std::size_t local_index);

struct CoordinatorSession {
  std::uint64_t id = 0;
  std::uint32_t coordinator = 0;
  std::vector<std::uint32_t> invited;
  std::vector<std::uint32_t> participants;
  std::vector<std::uint32_t> busy;
  std::vector<std::vector<std::uint8_t>> collected;
  std::uint32_t max_version = 0;
  bool closed = false;

  std::uint32_t new_version() const { return max_version + 1; }
};

}  // namespace lead
