#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lead/frm.hpp"
#include "lead/overlay.hpp"
#include "lead/query.hpp"
#include "lead/rng.hpp"
#include "lead/simnet.hpp"

namespace lead {

enum class Placement { Learned, Uniform };

struct NetworkConfig {
  OverlayConfig overlay;
  FrmConfig frm;
  Placement placement = Placement::Learned;
  std::uint64_t seed = 1;
  int base_port = 7000;
};

struct NodeInfo {
  NodeId id = 0;
  std::string address;
  int k = 1;
  double capacity = 1.0;
  bool alive = false;
  std::vector<std::uint32_t> vnodes;  // peer slots of the current incarnation
};

struct Adoption {
  SimTime time = 0;
  std::uint32_t peer = 0;
  std::uint32_t version = 0;
};

/// The simulated LEAD (or Chord, with uniform placement) network: every
/// virtual peer is an actor driven by simulator events. Observer-level
/// helpers (bulk loading, oracle ring views) bypass the protocol.
class Network {
 public:
  Network(Simulator& sim, Topology topology, NetworkConfig config);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  ~Network();

  // ----- membership -------------------------------------------------------
  /// Registers a physical node hosting k virtual peers; it is not yet joined.
  NodeId add_node(int k, double capacity = 1.0);
  /// Builds a correct, fully stabilized ring from the given nodes without
  /// messages. Intended for initial deployment.
  void build_stable(const std::vector<NodeId>& nodes);
  /// Protocol join of every vnode of the node through a live bootstrap peer
  /// on another node. An empty network is formed locally.
  void join_node(NodeId node);
  /// Graceful departure: neighbours are notified, keys go to predecessors.
  void depart_node(NodeId node);
  void crash_node(NodeId node);
  /// Rejoins a departed node with fresh routing state.
  void rejoin_node(NodeId node) { join_node(node); }
  void depart_peer(std::uint32_t idx);
  void crash_peer(std::uint32_t idx);

  // ----- model and data ---------------------------------------------------
  /// Every live peer adopts the model (initial deployment).
  void install_model(std::shared_ptr<const RmiModel> model);
  /// Places keys directly at their owners (no messages, no drift counting).
  void bulk_load(std::span<const Key> keys);
  /// Places keys at their owners and runs the FRM insert hook there.
  void bulk_insert(std::span<const Key> keys);
  static Value value_for(Key key);

  // ----- queries ------------------------------------------------------------
  std::uint64_t lookup(std::uint32_t origin, Key key, QueryCallback done = {});
  std::uint64_t put(std::uint32_t origin, Key key, Value value, QueryCallback done = {});
  std::uint64_t range_query(std::uint32_t origin, Key start, std::size_t n, QueryCallback done = {});
  /// Routes to the owner of a raw ring id; the record carries the owner Vid.
  std::uint64_t locate(std::uint32_t origin, std::uint64_t id, QueryCallback done = {});

  // ----- observer views -----------------------------------------------------
  Simulator& sim() noexcept { return sim_; }
  const Topology& topology() const noexcept { return topo_; }
  const NetworkConfig& config() const noexcept { return cfg_; }
  const RingSpace& ring() const noexcept { return ring_; }
  SimTime hop_timeout() const noexcept { return hop_timeout_; }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const NodeInfo& node(NodeId id) const { return nodes_.at(id); }
  std::size_t peer_count() const noexcept { return peers_.size(); }
  const VirtualPeer& peer(std::uint32_t idx) const { return *peers_.at(idx); }
  /// Alive and joined peers, ascending by Vid.
  std::vector<PeerRef> live_ring() const;
  std::vector<std::uint32_t> live_peers() const;
  /// Brute-force owner of a ring id over live peers.
  std::optional<PeerRef> owner_of(std::uint64_t id) const;
  HashValue placement_hash(const VirtualPeer& p, Key key) const;
  /// Placement hash under the reference model (the one most recently
  /// installed, or the newest adopted).
  HashValue reference_hash(Key key) const;
  std::shared_ptr<const RmiModel> reference_model() const { return reference_; }
  /// Per-node key counts if `keys` were placed under `model` (or the
  /// uniform hash) on the current live ring; nothing is stored.
  std::vector<std::uint64_t> placement_counts(std::span<const Key> keys, const RmiModel* model) const;

  std::uint64_t messages(MsgType type) const { return msg_count_[static_cast<std::size_t>(type)]; }
  std::uint64_t total_messages() const;
  const std::vector<Adoption>& adoptions() const noexcept { return adoptions_; }
  /// One entry per FRM publish: coordinator peer, time and new version.
  const std::vector<Adoption>& publications() const noexcept { return publications_; }
  std::uint64_t keys_lost() const noexcept { return keys_lost_; }
  std::uint64_t stored_keys() const;
  void set_message_observer(std::function<void(MsgType, std::uint32_t, std::uint32_t, SimTime)> fn) {
    observer_ = std::move(fn);
  }

 private:
  enum class Purpose : std::uint8_t { Lookup, Put, Range, Locate, Finger, Join, Reshelve };
  struct Route;
  struct RangeState;
  struct Session;
  struct Pending {
    QueryRecord record;
    QueryCallback done;
  };
  using RoutePtr = std::shared_ptr<Route>;
  using Deliver = std::function<void(VirtualPeer&)>;
  using Fail = std::function<void()>;

  VirtualPeer& at(std::uint32_t idx) { return *peers_[idx]; }
  std::uint32_t new_peer(NodeId node, int port);
  void start_timers(VirtualPeer& p);

  void send(std::uint32_t from, const PeerRef& to, MsgType type, std::uint64_t qid, Deliver deliver, Fail fail = {});

  // routing
  bool is_failed(const VirtualPeer& p, const PeerRef& r) const;
  std::optional<PeerRef> live_successor(const VirtualPeer& p) const;
  std::optional<PeerRef> live_predecessor(const VirtualPeer& p) const;
  bool owns(const VirtualPeer& p, std::uint64_t id) const;
  std::optional<PeerRef> next_hop(const VirtualPeer& p, std::uint64_t id) const;
  void route_step(VirtualPeer& p, RoutePtr r, unsigned retries);
  void forward(VirtualPeer& p, const PeerRef& to, RoutePtr r, unsigned retries);
  void route_failed(VirtualPeer& p, RoutePtr r);
  void arrive(VirtualPeer& p, RoutePtr r);
  void reply_to_origin(VirtualPeer& p, const PeerRef& origin, std::uint64_t qid, MsgType type,
                       std::function<void()> at_origin);

  // queries
  std::uint64_t open_query(QueryKind kind, std::uint32_t origin, Key key, QueryCallback done);
  void finish_query(std::uint64_t qid, bool success);
  Pending* pending(std::uint64_t qid);
  void range_serve(VirtualPeer& p, std::shared_ptr<RangeState> st, bool first);
  void range_forward(VirtualPeer& p, std::shared_ptr<RangeState> st);
  void range_finish(VirtualPeer& p, std::shared_ptr<RangeState> st, bool partial);

  // maintenance
  void join_peer(std::uint32_t idx, const PeerRef& bootstrap);
  void form_local_ring(const std::vector<std::uint32_t>& idxs);
  void stabilize(std::uint32_t idx);
  void fix_fingers(VirtualPeer& p);
  void heartbeat(std::uint32_t idx);
  void on_heartbeat(VirtualPeer& q, const PeerRef& from, std::uint32_t version, std::uint64_t digest, bool ready);
  void mark_failed(VirtualPeer& p, std::uint32_t dead);
  void notify_predecessor(VirtualPeer& p, const PeerRef& candidate);
  void notify_successor(VirtualPeer& p, const PeerRef& candidate);
  void set_successors(VirtualPeer& p, std::vector<PeerRef> list);
  void set_predecessors(VirtualPeer& p, std::vector<PeerRef> list);
  void reshelve(VirtualPeer& p);
  void reshelve_keys(VirtualPeer& p, std::vector<KeyValue> batch);
  void absorb(VirtualPeer& p, std::vector<KeyValue> batch);
  void handoff(std::uint32_t from, std::vector<PeerRef> targets, std::size_t next, std::vector<KeyValue> keys);
  std::optional<PeerRef> pick_bootstrap(NodeId exclude);
  void rejoin_detached(std::uint32_t idx);

  // FRM
  void record_insert(VirtualPeer& p, Key key);
  void adopt(VirtualPeer& p, std::shared_ptr<const RmiModel> model, bool participant);
  void maybe_coordinate(VirtualPeer& p);
  void close_session(std::uint64_t sid);

  Simulator& sim_;
  Topology topo_;
  NetworkConfig cfg_;
  RingSpace ring_;
  SplitMix64 rng_;
  SimTime hop_timeout_ = 1.0;
  SimTime rejoin_timeout_ = 10'000;

  std::vector<NodeInfo> nodes_;
  std::vector<std::unique_ptr<VirtualPeer>> peers_;
  std::shared_ptr<const RmiModel> reference_;

  std::unordered_map<std::uint64_t, Pending> queries_;
  std::uint64_t next_query_ = 1;
  std::unordered_map<std::uint64_t, std::unique_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 1;

  std::array<std::uint64_t, kMsgTypeCount> msg_count_{};
  std::vector<Adoption> adoptions_;
  std::vector<Adoption> publications_;
  std::uint64_t keys_lost_ = 0;
  std::function<void(MsgType, std::uint32_t, std::uint32_t, SimTime)> observer_;
};

}  // namespace lead
