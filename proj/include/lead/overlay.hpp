#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lead/common.hpp"
#include "lead/frm.hpp"
#include "lead/learned_hash.hpp"
#include "lead/store.hpp"

namespace lead {

inline constexpr std::uint8_t kProtocolVersion = 1;

/// Overlay message vocabulary. Observers see (type, src, dst, time).
enum class MsgType : std::uint8_t {
  FindSuccessor,
  FindSuccessorReply,
  Notify,
  GetNeighbors,
  NeighborsReply,
  TransferKeys,
  Depart,
  Heartbeat,
  RangeQuery,
  RangeQueryForward,
  RangeQueryReply,
  ModelPush,
  ModelConfirm,
  ModelPull,
};
inline constexpr std::size_t kMsgTypeCount = 14;

std::string to_string(MsgType type);

inline constexpr std::uint32_t kNoPeer = std::numeric_limits<std::uint32_t>::max();

/// Address of one virtual peer incarnation: ring id, slot in the network's
/// peer table and the hosting node.
struct PeerRef {
  std::uint64_t vid = 0;
  std::uint32_t idx = kNoPeer;
  NodeId node = 0;

  bool valid() const noexcept { return idx != kNoPeer; }
  bool operator==(const PeerRef& o) const noexcept { return idx == o.idx; }
};

/// Smallest Vid >= x, wrapping to the smallest overall. Throws "no-peers".
std::uint64_t successor_of(const std::vector<std::uint64_t>& sorted_vids, std::uint64_t x);

/// Target of decimal finger i (1-based): vid + 10^(i-1) mod h.
std::uint64_t decimal_finger_target(std::uint64_t vid, unsigned i, const RingSpace& ring);
/// Express finger j (0-based): vid + 2^j mod h.
std::uint64_t express_finger_target(std::uint64_t vid, unsigned j, const RingSpace& ring);

struct OverlayConfig {
  unsigned ring_bits = 64;
  std::size_t list_length = 4;
  SimTime stabilize_interval = 1000;
  SimTime heartbeat_interval = 500;
  unsigned miss_threshold = 3;
  SimTime failure_timeout = 2000;
  /// 0 means 10 × stabilize_interval.
  SimTime rejoin_timeout = 0;
  double hop_timeout_factor = 4.0;
  SimTime query_timeout = 30'000;
  /// Retries via the next-closest entry per hop before giving up.
  unsigned hop_retries = 1;
  unsigned ttl = 96;
  /// How long a peer declared failed is avoided before it may be tried again.
  SimTime failed_memory = 30'000;
  bool express_fingers = true;
  /// Periodic stabilization, finger repair and heartbeats.
  bool maintenance = true;
};

struct NeighborStatus {
  SimTime last_heard = 0;
  std::uint32_t version = 0;
  std::uint64_t digest = 0;
  bool ready = false;
  bool suspected = false;
};

struct VirtualPeer {
  PeerRef self;
  int port = 0;
  bool alive = true;
  bool joined = false;

  std::vector<PeerRef> successors;    // successors[0] is the successor
  std::vector<PeerRef> predecessors;  // predecessors[0] is the predecessor
  std::vector<std::optional<PeerRef>> fingers;  // decimal table, b entries
  std::vector<std::optional<PeerRef>> express;  // power-of-two entries

  OrderedStore store;
  std::shared_ptr<const RmiModel> active;
  std::uint64_t active_digest = 0;
  std::optional<RmiModel> update;
  UpdateState update_state;

  std::unordered_map<std::uint32_t, NeighborStatus> neighbors;
  std::unordered_map<std::uint32_t, SimTime> failed;  // peer -> when declared failed

  bool busy = false;          // in an FRM session
  std::uint64_t session = 0;  // coordinator session id while busy
  bool pulling = false;
  bool reshelve_pending = false;
  SimTime detached_since = -1;  // no live successor since
  std::uint64_t requests_served = 0;

  std::optional<PeerRef> successor() const {
    return successors.empty() ? std::nullopt : std::optional<PeerRef>(successors.front());
  }
  std::optional<PeerRef> predecessor() const {
    return predecessors.empty() ? std::nullopt : std::optional<PeerRef>(predecessors.front());
  }
};

}  // namespace lead
