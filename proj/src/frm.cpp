#include "lead/frm.hpp"

#include <cmath>

namespace lead {

bool check_ready(const UpdateState& state, double threshold) {
  const auto total = state.base_count + state.new_since_update;
  if (total == 0) return false;
  return static_cast<double>(state.new_since_update) >= threshold * static_cast<double>(total) - 1e-9;
}

bool quorum_reached(std::size_t ready, std::size_t neighbours, double quorum) {
  if (neighbours == 0) return false;
  return static_cast<double>(ready) >= quorum * static_cast<double>(neighbours) - 1e-9;
}

double insert_target_rank(double predicted_rank_of_min_key, std::size_t local_index) {
  return std::floor(predicted_rank_of_min_key) + static_cast<double>(local_index);
}

}  // namespace lead
