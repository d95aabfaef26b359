#include "lead/network.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "lead/hashing.hpp"

namespace lead {

struct Network::Route {
  Purpose purpose = Purpose::Lookup;
  std::uint64_t id = 0;
  PeerRef origin;
  std::uint64_t qid = 0;
  std::uint32_t hops = 0;
  Key key = 0;
  Value value;
  std::size_t n = 0;
  std::vector<KeyValue> batch;
  unsigned slot = 0;
  bool express = false;
};

struct Network::RangeState {
  std::uint64_t qid = 0;
  PeerRef origin;
  Key start = 0;
  std::size_t n = 0;
  std::vector<Key> results;
  std::uint32_t chain = 0;
  bool done = false;
};

struct Network::Session {
  std::uint64_t id = 0;
  std::uint32_t coordinator = 0;
  std::size_t invited = 0;
  std::size_t answered = 0;
  std::vector<std::uint32_t> participants;
  std::vector<std::vector<std::uint8_t>> blobs;
  std::uint32_t max_version = 0;
  bool closed = false;
};

namespace {

constexpr std::uint32_t kTraceMessage = 1;
constexpr std::uint32_t kTraceTimer = 2;
constexpr std::uint32_t kTraceFailure = 3;

void push_unique(std::vector<PeerRef>& list, const PeerRef& r) {
  if (!r.valid()) return;
  for (const auto& x : list)
    if (x.idx == r.idx) return;
  list.push_back(r);
}

}  // namespace

std::string to_string(MsgType type) {
  static const char* names[] = {"FindSuccessor",  "FindSuccessorReply", "Notify",       "GetNeighbors",
                                "NeighborsReply", "TransferKeys",       "Depart",       "Heartbeat",
                                "RangeQuery",     "RangeQueryForward",  "RangeQueryReply", "ModelPush",
                                "ModelConfirm",   "ModelPull"};
  return names[static_cast<std::size_t>(type)];
}

std::uint64_t successor_of(const std::vector<std::uint64_t>& sorted_vids, std::uint64_t x) {
  if (sorted_vids.empty()) throw Error("no-peers");
  auto it = std::lower_bound(sorted_vids.begin(), sorted_vids.end(), x);
  return it == sorted_vids.end() ? sorted_vids.front() : *it;
}

std::uint64_t decimal_finger_target(std::uint64_t vid, unsigned i, const RingSpace& ring) {
  unsigned __int128 step = 1;
  for (unsigned e = 1; e < i; ++e) step *= 10;
  return ring.wrap(static_cast<unsigned __int128>(vid) + step);
}

std::uint64_t express_finger_target(std::uint64_t vid, unsigned j, const RingSpace& ring) {
  return ring.wrap(static_cast<unsigned __int128>(vid) + (static_cast<unsigned __int128>(1) << j));
}

// ============================================================================
// construction and membership

Network::Network(Simulator& sim, Topology topology, NetworkConfig config)
    : sim_(sim), topo_(std::move(topology)), cfg_(config), ring_(config.overlay.ring_bits), rng_(config.seed) {
  hop_timeout_ = std::max(1.0, cfg_.overlay.hop_timeout_factor * topo_.p99_one_way());
  rejoin_timeout_ =
      cfg_.overlay.rejoin_timeout > 0 ? cfg_.overlay.rejoin_timeout : 10 * cfg_.overlay.stabilize_interval;
}

Network::~Network() = default;

NodeId Network::add_node(int k, double capacity) {
  if (k < 1) throw Error("invalid-config", "a node needs at least one virtual peer");
  const auto id = static_cast<NodeId>(nodes_.size());
  if (id >= topo_.size()) throw Error("incomplete-topology", "more nodes than the topology describes");
  NodeInfo info;
  info.id = id;
  // Addresses differ per seed so Vid layouts vary across runs.
  const auto host = fmix64(cfg_.seed * 0x9e3779b97f4a7c15ull + id);
  info.address = "10." + std::to_string((host >> 16) & 0xff) + "." + std::to_string((host >> 8) & 0xff) + "." +
                 std::to_string(host & 0xff);
  info.k = k;
  info.capacity = capacity;
  nodes_.push_back(std::move(info));
  return id;
}

std::uint32_t Network::new_peer(NodeId node, int port) {
  auto p = std::make_unique<VirtualPeer>();
  const auto idx = static_cast<std::uint32_t>(peers_.size());
  // Deterministic retry on a Vid collision with any live peer.
  for (;;) {
    const auto vid = peer_hash(nodes_[node].address, port, ring_).value;
    bool clash = false;
    for (const auto& q : peers_)
      if (q->alive && q->self.vid == vid) clash = true;
    if (!clash) {
      p->self = PeerRef{vid, idx, node};
      break;
    }
    port += nodes_[node].k;
  }
  p->port = port;
  p->fingers.assign(ring_.decimal_fingers(), std::nullopt);
  p->express.assign(cfg_.overlay.express_fingers ? ring_.bits() : 0, std::nullopt);
  p->active = reference_;
  if (reference_) p->active_digest = reference_->digest();
  peers_.push_back(std::move(p));
  return idx;
}

void Network::start_timers(VirtualPeer& p) {
  if (!cfg_.overlay.maintenance) return;
  const auto idx = p.self.idx;
  sim_.schedule(rng_.uniform(0.0, cfg_.overlay.stabilize_interval), [this, idx] { stabilize(idx); }, kTraceTimer, idx);
  sim_.schedule(rng_.uniform(0.0, cfg_.overlay.heartbeat_interval), [this, idx] { heartbeat(idx); }, kTraceTimer,
                idx);
}

void Network::build_stable(const std::vector<NodeId>& nodes) {
  for (NodeId n : nodes) {
    auto& info = nodes_.at(n);
    info.alive = true;
    info.vnodes.clear();
    for (int i = 0; i < info.k; ++i) info.vnodes.push_back(new_peer(n, cfg_.base_port + i));
  }
  auto ring = live_ring();
  for (const auto& idx : nodes)
    for (auto v : nodes_[idx].vnodes) at(v).joined = true;
  ring = live_ring();
  const std::size_t m = ring.size();
  std::vector<std::uint64_t> vids;
  for (const auto& r : ring) vids.push_back(r.vid);
  auto ref_of = [&](std::uint64_t vid) {
    return ring[static_cast<std::size_t>(std::lower_bound(vids.begin(), vids.end(), vid) - vids.begin())];
  };
  const std::size_t r = std::min(cfg_.overlay.list_length, m > 1 ? m - 1 : 1);
  for (std::size_t i = 0; i < m; ++i) {
    auto& p = at(ring[i].idx);
    p.successors.clear();
    p.predecessors.clear();
    for (std::size_t j = 1; j <= r; ++j) {
      p.successors.push_back(ring[(i + j) % m]);
      p.predecessors.push_back(ring[(i + m - j) % m]);
    }
    for (unsigned f = 0; f < p.fingers.size(); ++f)
      p.fingers[f] = ref_of(successor_of(vids, decimal_finger_target(p.self.vid, f + 1, ring_)));
    for (unsigned e = 0; e < p.express.size(); ++e)
      p.express[e] = ref_of(successor_of(vids, express_finger_target(p.self.vid, e, ring_)));
    p.update_state.base_count = p.store.size();
  }
  for (const auto& ref : ring)
    if (std::find(nodes.begin(), nodes.end(), ref.node) != nodes.end()) start_timers(at(ref.idx));
}

void Network::form_local_ring(const std::vector<std::uint32_t>& idxs) {
  std::vector<PeerRef> refs;
  for (auto i : idxs) refs.push_back(at(i).self);
  std::sort(refs.begin(), refs.end(), [](const PeerRef& a, const PeerRef& b) { return a.vid < b.vid; });
  const std::size_t m = refs.size();
  const std::size_t r = std::min(cfg_.overlay.list_length, m > 1 ? m - 1 : 1);
  for (std::size_t i = 0; i < m; ++i) {
    auto& p = at(refs[i].idx);
    p.successors.clear();
    p.predecessors.clear();
    for (std::size_t j = 1; j <= r; ++j) {
      p.successors.push_back(refs[(i + j) % m]);
      p.predecessors.push_back(refs[(i + m - j) % m]);
    }
    p.joined = true;
    start_timers(p);
  }
}

std::optional<PeerRef> Network::pick_bootstrap(NodeId exclude) {
  std::vector<std::uint32_t> candidates;
  for (const auto& p : peers_)
    if (p->alive && p->joined && p->self.node != exclude) candidates.push_back(p->self.idx);
  if (candidates.empty()) return std::nullopt;
  return at(candidates[rng_.below(candidates.size())]).self;
}

void Network::join_node(NodeId node) {
  auto& info = nodes_.at(node);
  if (info.alive) return;
  info.alive = true;
  info.vnodes.clear();
  for (int i = 0; i < info.k; ++i) info.vnodes.push_back(new_peer(node, cfg_.base_port + i));
  auto boot = pick_bootstrap(node);
  if (!boot) {
    form_local_ring(info.vnodes);
    return;
  }
  for (auto v : info.vnodes) join_peer(v, *boot);
}

void Network::join_peer(std::uint32_t idx, const PeerRef& bootstrap) {
  auto r = std::make_shared<Route>();
  r->purpose = Purpose::Join;
  r->id = at(idx).self.vid;
  r->origin = at(idx).self;
  send(
      idx, bootstrap, MsgType::FindSuccessor, 0, [this, r](VirtualPeer& b) { route_step(b, r, cfg_.overlay.hop_retries); },
      [this, idx] {
        auto boot = pick_bootstrap(at(idx).self.node);
        if (!boot) throw Error("bootstrap-unreachable");
        join_peer(idx, *boot);
      });
}

void Network::depart_node(NodeId node) {
  auto& info = nodes_.at(node);
  if (!info.alive) return;
  // Neighbours on the same node leave together, so skip them as handoff targets.
  for (auto v : info.vnodes) {
    auto& p = at(v);
    if (!p.alive) continue;
    std::optional<PeerRef> pred, succ;
    for (const auto& c : p.predecessors)
      if (c.node != node && !is_failed(p, c)) {
        pred = c;
        break;
      }
    for (const auto& c : p.successors)
      if (c.node != node && !is_failed(p, c)) {
        succ = c;
        break;
      }
    std::vector<PeerRef> succ_list, pred_list, targets;
    for (const auto& c : p.successors)
      if (c.node != node) succ_list.push_back(c);
    for (const auto& c : p.predecessors)
      if (c.node != node) pred_list.push_back(c);
    for (const auto& c : pred_list)
      if (!is_failed(p, c)) push_unique(targets, c);
    for (const auto& c : succ_list)
      if (!is_failed(p, c)) push_unique(targets, c);
    if (pred)
      send(v, *pred, MsgType::Depart, 0, [this, v, succ_list](VirtualPeer& q) {
        std::vector<PeerRef> list;
        for (const auto& c : q.successors)
          if (c.idx != v) list.push_back(c);
        for (const auto& c : succ_list) push_unique(list, c);
        set_successors(q, std::move(list));
      });
    handoff(v, std::move(targets), 0, p.store.take_all());
    if (succ)
      send(v, *succ, MsgType::Depart, 0, [this, v, pred_list](VirtualPeer& q) {
        std::vector<PeerRef> list;
        for (const auto& c : q.predecessors)
          if (c.idx != v) list.push_back(c);
        for (const auto& c : pred_list) push_unique(list, c);
        set_predecessors(q, std::move(list));
      });
  }
  for (auto v : info.vnodes) at(v).alive = false;
  info.alive = false;
}

void Network::depart_peer(std::uint32_t idx) {
  auto& p = at(idx);
  if (!p.alive) return;
  auto pred = live_predecessor(p);
  auto succ = live_successor(p);
  const auto succ_list = p.successors;
  const auto pred_list = p.predecessors;
  std::vector<PeerRef> targets;
  for (const auto& c : pred_list)
    if (c.idx != idx && !is_failed(p, c)) push_unique(targets, c);
  for (const auto& c : succ_list)
    if (c.idx != idx && !is_failed(p, c)) push_unique(targets, c);
  if (pred && pred->idx != idx)
    send(idx, *pred, MsgType::Depart, 0, [this, idx, succ_list](VirtualPeer& q) {
      std::vector<PeerRef> list;
      for (const auto& c : q.successors)
        if (c.idx != idx) list.push_back(c);
      for (const auto& c : succ_list)
        if (c.idx != idx) push_unique(list, c);
      set_successors(q, std::move(list));
    });
  handoff(idx, std::move(targets), 0, p.store.take_all());
  if (succ && succ->idx != idx)
    send(idx, *succ, MsgType::Depart, 0, [this, idx, pred_list](VirtualPeer& q) {
      std::vector<PeerRef> list;
      for (const auto& c : q.predecessors)
        if (c.idx != idx) list.push_back(c);
      for (const auto& c : pred_list)
        if (c.idx != idx) push_unique(list, c);
      set_predecessors(q, std::move(list));
    });
  p.alive = false;
  auto& info = nodes_[p.self.node];
  info.vnodes.erase(std::remove(info.vnodes.begin(), info.vnodes.end(), idx), info.vnodes.end());
  info.k = std::max<int>(1, static_cast<int>(info.vnodes.size()));
  if (info.vnodes.empty()) info.alive = false;
}

void Network::handoff(std::uint32_t from, std::vector<PeerRef> targets, std::size_t next,
                      std::vector<KeyValue> keys) {
  if (keys.empty()) return;
  if (next >= targets.size()) {
    keys_lost_ += keys.size();
    return;
  }
  // The leaving peer stays reachable until its keys are acknowledged, so a
  // handoff to a peer that left meanwhile falls through to the next neighbour.
  const auto to = targets[next];
  ++msg_count_[static_cast<std::size_t>(MsgType::TransferKeys)];
  if (observer_) observer_(MsgType::TransferKeys, from, to.idx, sim_.now());
  const SimTime sent = sim_.now();
  sim_.schedule(topo_.latency(at(from).self.node, to.node),
                [this, from, targets = std::move(targets), next, sent, keys = std::move(keys)]() mutable {
                  auto& q = at(targets[next].idx);
                  if (q.alive) {
                    absorb(q, std::move(keys));
                    return;
                  }
                  sim_.schedule_at(sent + hop_timeout_,
                                   [this, from, targets = std::move(targets), next, keys = std::move(keys)]() mutable {
                                     handoff(from, std::move(targets), next + 1, std::move(keys));
                                   },
                                   kTraceFailure, from);
                },
                kTraceMessage + static_cast<std::uint32_t>(MsgType::TransferKeys),
                (static_cast<std::uint64_t>(from) << 32) | to.idx);
}

void Network::crash_peer(std::uint32_t idx) {
  auto& p = at(idx);
  if (!p.alive) return;
  keys_lost_ += p.store.size();
  p.store.take_all();
  p.alive = false;
}

void Network::crash_node(NodeId node) {
  auto& info = nodes_.at(node);
  for (auto v : info.vnodes) crash_peer(v);
  info.alive = false;
}

// ============================================================================
// model and data

Value Network::value_for(Key key) {
  Value v(8, '\0');
  for (int i = 0; i < 8; ++i) v[i] = static_cast<char>((key >> (8 * i)) & 0xff);
  return v;
}

void Network::install_model(std::shared_ptr<const RmiModel> model) {
  reference_ = model;
  const auto digest = model->digest();
  for (auto& p : peers_) {
    if (!p->alive) continue;
    p->active = model;
    p->active_digest = digest;
    p->update.reset();
    p->update_state = UpdateState{0, p->store.size()};
    adoptions_.push_back({sim_.now(), p->self.idx, model->version()});
  }
}

HashValue Network::placement_hash(const VirtualPeer& p, Key key) const {
  if (cfg_.placement == Placement::Uniform || !p.active) return uniform_key_hash(key, ring_);
  return p.active->hash(key);
}

HashValue Network::reference_hash(Key key) const {
  if (cfg_.placement == Placement::Uniform || !reference_) return uniform_key_hash(key, ring_);
  return reference_->hash(key);
}

void Network::bulk_load(std::span<const Key> keys) {
  auto ring = live_ring();
  std::vector<std::uint64_t> vids;
  for (const auto& r : ring) vids.push_back(r.vid);
  for (Key k : keys) {
    const auto owner = successor_of(vids, reference_hash(k));
    const auto& ref = ring[static_cast<std::size_t>(std::lower_bound(vids.begin(), vids.end(), owner) - vids.begin())];
    at(ref.idx).store.insert(k, value_for(k));
  }
  for (const auto& r : ring) at(r.idx).update_state.base_count = at(r.idx).store.size();
}

void Network::bulk_insert(std::span<const Key> keys) {
  auto ring = live_ring();
  std::vector<std::uint64_t> vids;
  for (const auto& r : ring) vids.push_back(r.vid);
  for (Key k : keys) {
    // Placement follows the model each owner-candidate currently serves.
    std::uint64_t h = reference_hash(k);
    auto pos = [&](std::uint64_t id) {
      return static_cast<std::size_t>(std::lower_bound(vids.begin(), vids.end(), successor_of(vids, id)) -
                                      vids.begin());
    };
    auto& owner = at(ring[pos(h)].idx);
    h = placement_hash(owner, k);
    auto& target = at(ring[pos(h)].idx);
    if (target.store.insert(k, value_for(k))) record_insert(target, k);
  }
}

std::vector<std::uint64_t> Network::placement_counts(std::span<const Key> keys, const RmiModel* model) const {
  std::vector<std::uint64_t> counts(nodes_.size(), 0);
  auto ring = live_ring();
  if (ring.empty()) return counts;
  std::vector<std::uint64_t> vids;
  for (const auto& r : ring) vids.push_back(r.vid);
  for (Key k : keys) {
    const auto h = model ? model->hash(k) : uniform_key_hash(k, ring_);
    auto it = std::lower_bound(vids.begin(), vids.end(), h);
    const auto pos = it == vids.end() ? 0 : static_cast<std::size_t>(it - vids.begin());
    ++counts[ring[pos].node];
  }
  return counts;
}

std::uint64_t Network::stored_keys() const {
  std::uint64_t total = 0;
  for (const auto& p : peers_)
    if (p->alive) total += p->store.size();
  return total;
}

std::uint64_t Network::total_messages() const {
  std::uint64_t t = 0;
  for (auto c : msg_count_) t += c;
  return t;
}

std::vector<PeerRef> Network::live_ring() const {
  std::vector<PeerRef> out;
  for (const auto& p : peers_)
    if (p->alive && p->joined) out.push_back(p->self);
  std::sort(out.begin(), out.end(), [](const PeerRef& a, const PeerRef& b) { return a.vid < b.vid; });
  return out;
}

std::vector<std::uint32_t> Network::live_peers() const {
  std::vector<std::uint32_t> out;
  for (const auto& r : live_ring()) out.push_back(r.idx);
  return out;
}

std::optional<PeerRef> Network::owner_of(std::uint64_t id) const {
  auto ring = live_ring();
  if (ring.empty()) return std::nullopt;
  for (const auto& r : ring)
    if (r.vid >= id) return r;
  return ring.front();
}

// ============================================================================
// messaging

void Network::send(std::uint32_t from, const PeerRef& to, MsgType type, std::uint64_t qid, Deliver deliver,
                   Fail fail) {
  const std::uint64_t detail = (static_cast<std::uint64_t>(from) << 32) | to.idx;
  if (from == to.idx) {
    sim_.schedule(0.0, [this, to, deliver = std::move(deliver)] {
      auto& p = at(to.idx);
      if (p.alive) deliver(p);
    }, kTraceMessage, detail);
    return;
  }
  ++msg_count_[static_cast<std::size_t>(type)];
  if (qid != 0)
    if (auto* q = pending(qid)) ++q->record.messages;
  if (observer_) observer_(type, from, to.idx, sim_.now());
  const SimTime sent = sim_.now();
  const SimTime lat = topo_.latency(at(from).self.node, to.node);
  sim_.schedule(lat, [this, from, to, sent, deliver = std::move(deliver), fail = std::move(fail)] {
    auto& p = at(to.idx);
    if (p.alive) {
      deliver(p);
      return;
    }
    if (fail)
      sim_.schedule_at(sent + hop_timeout_, [this, from, fail] {
        if (at(from).alive) fail();
      }, kTraceFailure, from);
  }, kTraceMessage + static_cast<std::uint32_t>(type), detail);
}

// ============================================================================
// routing

bool Network::is_failed(const VirtualPeer& p, const PeerRef& r) const {
  if (!r.valid()) return true;
  auto it = p.failed.find(r.idx);
  return it != p.failed.end() && sim_.now() - it->second < cfg_.overlay.failed_memory;
}

std::optional<PeerRef> Network::live_successor(const VirtualPeer& p) const {
  for (const auto& s : p.successors)
    if (!is_failed(p, s)) return s;
  return std::nullopt;
}

std::optional<PeerRef> Network::live_predecessor(const VirtualPeer& p) const {
  for (const auto& s : p.predecessors)
    if (!is_failed(p, s)) return s;
  return std::nullopt;
}

bool Network::owns(const VirtualPeer& p, std::uint64_t id) const {
  if (id == p.self.vid) return true;
  auto pred = live_predecessor(p);
  if (!pred) return !live_successor(p).has_value();
  if (pred->idx == p.self.idx) return true;
  return ring_.in_half_open(id, pred->vid, p.self.vid);
}

std::optional<PeerRef> Network::next_hop(const VirtualPeer& p, std::uint64_t id) const {
  const auto me = p.self.vid;
  auto succ = live_successor(p);
  if (succ && succ->idx != p.self.idx && ring_.in_half_open(id, me, succ->vid)) return succ;

  std::vector<PeerRef> preds;
  for (const auto& c : p.predecessors)
    if (!is_failed(p, c) && c.idx != p.self.idx) preds.push_back(c);
  for (std::size_t i = 0; i + 1 < preds.size(); ++i)
    if (ring_.in_half_open(id, preds[i + 1].vid, preds[i].vid)) return preds[i];

  std::optional<PeerRef> best;
  std::uint64_t best_d = 0;
  auto consider = [&](const PeerRef& c) {
    if (!c.valid() || c.idx == p.self.idx || is_failed(p, c)) return;
    if (!ring_.in_open(c.vid, me, id)) return;
    const auto d = ring_.distance(me, c.vid);
    if (d > best_d) {
      best_d = d;
      best = c;
    }
  };
  for (const auto& f : p.fingers)
    if (f) consider(*f);
  for (const auto& f : p.express)
    if (f) consider(*f);
  for (const auto& c : p.successors) consider(c);
  for (const auto& c : p.predecessors) consider(c);
  if (best) return best;
  if (succ && succ->idx != p.self.idx) return succ;
  return std::nullopt;
}

void Network::route_step(VirtualPeer& p, RoutePtr r, unsigned retries) {
  if (owns(p, r->id)) {
    arrive(p, std::move(r));
    return;
  }
  auto next = next_hop(p, r->id);
  if (!next || r->hops >= cfg_.overlay.ttl) {
    route_failed(p, std::move(r));
    return;
  }
  forward(p, *next, std::move(r), retries);
}

void Network::forward(VirtualPeer& p, const PeerRef& to, RoutePtr r, unsigned retries) {
  const auto type = r->purpose == Purpose::Range ? MsgType::RangeQuery : MsgType::FindSuccessor;
  const auto from = p.self.idx;
  send(
      from, to, type, r->qid,
      [this, r](VirtualPeer& q) {
        ++r->hops;
        if (r->qid)
          if (auto* pq = pending(r->qid)) pq->record.trace.push_back(q.self.vid);
        route_step(q, r, cfg_.overlay.hop_retries);
      },
      [this, from, to, r, retries] {
        auto& p = at(from);
        mark_failed(p, to.idx);
        if (retries == 0) {
          route_failed(p, r);
          return;
        }
        if (owns(p, r->id)) {
          arrive(p, r);
          return;
        }
        auto next = next_hop(p, r->id);
        if (!next) {
          route_failed(p, r);
          return;
        }
        forward(p, *next, r, retries - 1);
      });
}

void Network::route_failed(VirtualPeer& p, RoutePtr r) {
  switch (r->purpose) {
    case Purpose::Reshelve:
      // Keep the keys here and try again on a later tick.
      for (auto& kv : r->batch) p.store.insert(kv.first, std::move(kv.second));
      p.reshelve_pending = true;
      return;
    case Purpose::Finger:
    case Purpose::Join:
      return;
    default:
      break;
  }
  const auto qid = r->qid;
  if (!qid) return;
  reply_to_origin(p, r->origin, qid, MsgType::FindSuccessorReply, [this, qid] { finish_query(qid, false); });
}

void Network::reply_to_origin(VirtualPeer& p, const PeerRef& origin, std::uint64_t qid, MsgType type,
                              std::function<void()> at_origin) {
  send(p.self.idx, origin, type, qid, [at_origin = std::move(at_origin)](VirtualPeer&) { at_origin(); });
}

void Network::arrive(VirtualPeer& p, RoutePtr r) {
  switch (r->purpose) {
    case Purpose::Lookup: {
      ++p.requests_served;
      auto value = p.store.get(r->key);
      const auto qid = r->qid;
      const auto owner = p.self.vid;
      const auto hops = r->hops;
      reply_to_origin(p, r->origin, qid, MsgType::FindSuccessorReply, [this, qid, value, owner, hops] {
        if (auto* q = pending(qid)) {
          q->record.value = value;
          q->record.owner = owner;
          q->record.hops = hops;
          finish_query(qid, value.has_value());
        }
      });
      return;
    }
    case Purpose::Locate: {
      const auto qid = r->qid;
      const auto owner = p.self.vid;
      const auto hops = r->hops;
      reply_to_origin(p, r->origin, qid, MsgType::FindSuccessorReply, [this, qid, owner, hops] {
        if (auto* q = pending(qid)) {
          q->record.owner = owner;
          q->record.hops = hops;
          finish_query(qid, true);
        }
      });
      return;
    }
    case Purpose::Put: {
      ++p.requests_served;
      if (p.store.insert(r->key, std::move(r->value))) record_insert(p, r->key);
      const auto qid = r->qid;
      const auto owner = p.self.vid;
      const auto hops = r->hops;
      reply_to_origin(p, r->origin, qid, MsgType::FindSuccessorReply, [this, qid, owner, hops] {
        if (auto* q = pending(qid)) {
          q->record.owner = owner;
          q->record.hops = hops;
          finish_query(qid, true);
        }
      });
      return;
    }
    case Purpose::Range: {
      auto st = std::make_shared<RangeState>();
      st->qid = r->qid;
      st->origin = r->origin;
      st->start = r->key;
      st->n = r->n;
      if (auto* q = pending(r->qid)) {
        q->record.hops = r->hops;
        q->record.owner = p.self.vid;
      }
      range_serve(p, st, true);
      return;
    }
    case Purpose::Finger: {
      const auto owner = p.self;
      const auto slot = r->slot;
      const bool express = r->express;
      const auto origin = r->origin.idx;
      reply_to_origin(p, r->origin, 0, MsgType::FindSuccessorReply, [this, origin, owner, slot, express] {
        auto& o = at(origin);
        if (is_failed(o, owner)) return;
        if (express) {
          if (slot < o.express.size()) o.express[slot] = owner;
        } else if (slot < o.fingers.size()) {
          o.fingers[slot] = owner;
        }
      });
      return;
    }
    case Purpose::Join: {
      // p is the successor of the joining Vid. It answers directly with its
      // neighbour lists, fingers, model and the keys the newcomer now owns.
      const auto newcomer = r->origin;
      auto old_pred = live_predecessor(p);
      std::vector<KeyValue> keys;
      auto hash = [this, &p](Key k) { return placement_hash(p, k); };
      if (old_pred && old_pred->idx != p.self.idx) {
        if (ring_.in_open(newcomer.vid, old_pred->vid, p.self.vid))
          keys = p.store.extract_interval(old_pred->vid, newcomer.vid, hash, ring_);
      } else {
        keys = p.store.extract_interval(p.self.vid, newcomer.vid, hash, ring_);
      }
      std::vector<PeerRef> preds = p.predecessors;
      std::vector<PeerRef> succs = p.successors;
      if (preds.empty() || preds.front().idx == p.self.idx) preds = {p.self};
      auto fingers = p.fingers;
      auto express = p.express;
      auto model = p.active;
      const auto owner = p.self;
      if (!old_pred || old_pred->idx == p.self.idx || ring_.in_open(newcomer.vid, old_pred->vid, p.self.vid)) {
        std::vector<PeerRef> list{newcomer};
        for (const auto& c : p.predecessors)
          if (c.idx != p.self.idx) push_unique(list, c);
        set_predecessors(p, std::move(list));
      }
      if (p.successors.empty() || p.successors.front().idx == p.self.idx) set_successors(p, {newcomer});
      send(p.self.idx, newcomer, MsgType::NeighborsReply, 0,
           [this, owner, preds, succs, fingers, express, model, keys = std::move(keys)](VirtualPeer& n) mutable {
             if (n.joined) return;
             std::vector<PeerRef> s{owner};
             for (const auto& c : succs)
               if (c.idx != n.self.idx) push_unique(s, c);
             set_successors(n, std::move(s));
             std::vector<PeerRef> pr;
             for (const auto& c : preds)
               if (c.idx != n.self.idx) push_unique(pr, c);
             set_predecessors(n, std::move(pr));
             for (std::size_t i = 1; i < n.fingers.size() && i < fingers.size(); ++i) n.fingers[i] = fingers[i];
             if (!n.fingers.empty()) n.fingers[0] = owner;
             for (std::size_t i = 0; i < n.express.size() && i < express.size(); ++i) n.express[i] = express[i];
             if (model) {
               n.active = model;
               n.active_digest = model->digest();
               adoptions_.push_back({sim_.now(), n.self.idx, model->version()});
             }
             for (auto& kv : keys) n.store.insert(kv.first, std::move(kv.second));
             n.update_state = UpdateState{0, n.store.size()};
             n.joined = true;
             if (auto pred = live_predecessor(n); pred && pred->idx != owner.idx) {
               const auto self = n.self;
               send(n.self.idx, *pred, MsgType::Notify, 0, [this, self](VirtualPeer& q) { notify_successor(q, self); });
             } else if (pred) {
               const auto self = n.self;
               send(n.self.idx, *pred, MsgType::Notify, 0, [this, self](VirtualPeer& q) { notify_successor(q, self); });
             }
             start_timers(n);
           });
      return;
    }
    case Purpose::Reshelve:
      absorb(p, std::move(r->batch));
      return;
  }
}

// ============================================================================
// queries

Network::Pending* Network::pending(std::uint64_t qid) {
  auto it = queries_.find(qid);
  return it == queries_.end() ? nullptr : &it->second;
}

std::uint64_t Network::open_query(QueryKind kind, std::uint32_t origin, Key key, QueryCallback done) {
  const auto qid = next_query_++;
  Pending pq;
  pq.record.id = qid;
  pq.record.kind = kind;
  pq.record.start = sim_.now();
  pq.record.key = key;
  pq.done = std::move(done);
  queries_.emplace(qid, std::move(pq));
  sim_.schedule(cfg_.overlay.query_timeout, [this, qid] {
    if (auto* q = pending(qid)) {
      q->record.partial = q->record.kind == QueryKind::Range;
      finish_query(qid, false);
    }
  }, kTraceTimer, qid);
  (void)origin;
  return qid;
}

void Network::finish_query(std::uint64_t qid, bool success) {
  auto it = queries_.find(qid);
  if (it == queries_.end()) return;
  auto pq = std::move(it->second);
  queries_.erase(it);
  pq.record.complete = sim_.now();
  pq.record.success = success;
  if (pq.done) pq.done(pq.record);
}

std::uint64_t Network::lookup(std::uint32_t origin, Key key, QueryCallback done) {
  const auto qid = open_query(QueryKind::Lookup, origin, key, std::move(done));
  auto r = std::make_shared<Route>();
  r->purpose = Purpose::Lookup;
  r->origin = at(origin).self;
  r->qid = qid;
  r->key = key;
  r->id = placement_hash(at(origin), key);
  sim_.schedule(0.0, [this, origin, r] {
    auto& p = at(origin);
    if (p.alive) route_step(p, r, cfg_.overlay.hop_retries);
  }, kTraceTimer, qid);
  return qid;
}

std::uint64_t Network::locate(std::uint32_t origin, std::uint64_t id, QueryCallback done) {
  const auto qid = open_query(QueryKind::Lookup, origin, 0, std::move(done));
  auto r = std::make_shared<Route>();
  r->purpose = Purpose::Locate;
  r->origin = at(origin).self;
  r->qid = qid;
  r->id = id;
  sim_.schedule(0.0, [this, origin, r] {
    auto& p = at(origin);
    if (p.alive) route_step(p, r, cfg_.overlay.hop_retries);
  }, kTraceTimer, qid);
  return qid;
}

std::uint64_t Network::put(std::uint32_t origin, Key key, Value value, QueryCallback done) {
  const auto qid = open_query(QueryKind::Put, origin, key, std::move(done));
  auto r = std::make_shared<Route>();
  r->purpose = Purpose::Put;
  r->origin = at(origin).self;
  r->qid = qid;
  r->key = key;
  r->value = std::move(value);
  r->id = placement_hash(at(origin), key);
  sim_.schedule(0.0, [this, origin, r] {
    auto& p = at(origin);
    if (p.alive) route_step(p, r, cfg_.overlay.hop_retries);
  }, kTraceTimer, qid);
  return qid;
}

std::uint64_t Network::range_query(std::uint32_t origin, Key start, std::size_t n, QueryCallback done) {
  if (n == 0) throw Error("invalid-query", "range size must be >= 1");
  const auto qid = open_query(QueryKind::Range, origin, start, std::move(done));
  pending(qid)->record.requested = n;
  auto r = std::make_shared<Route>();
  r->purpose = Purpose::Range;
  r->origin = at(origin).self;
  r->qid = qid;
  r->key = start;
  r->n = n;
  r->id = placement_hash(at(origin), start);
  sim_.schedule(0.0, [this, origin, r] {
    auto& p = at(origin);
    if (p.alive) route_step(p, r, cfg_.overlay.hop_retries);
  }, kTraceTimer, qid);
  return qid;
}

void Network::range_serve(VirtualPeer& p, std::shared_ptr<RangeState> st, bool first) {
  ++p.requests_served;
  const std::size_t remaining = st->n - st->results.size();
  auto pred = live_predecessor(p);
  const bool wrap = pred && pred->vid >= p.self.vid;
  bool end_here = false;
  RangeSlice slice;
  if (wrap && first && placement_hash(p, st->start) <= p.self.vid) {
    // Low segment of the wrapping arc: only keys hashed at or below our Vid.
    slice = p.store.local_range_while(st->start, remaining,
                                      [this, &p](Key k) { return placement_hash(p, k) <= p.self.vid; });
  } else {
    slice = p.store.local_range(st->start, remaining);
    // Past the wrap point there are no larger keys anywhere.
    end_here = wrap;
  }
  for (const auto& kv : slice.pairs) st->results.push_back(kv.first);
  if (!slice.pairs.empty()) {
    const Key last = slice.pairs.back().first;
    if (last == std::numeric_limits<Key>::max()) end_here = true;
    else st->start = last + 1;
  }
  if (st->results.size() >= st->n || end_here || st->chain > 4 * peers_.size()) {
    range_finish(p, st, false);
    return;
  }
  range_forward(p, st);
}

void Network::range_forward(VirtualPeer& p, std::shared_ptr<RangeState> st) {
  auto succ = live_successor(p);
  if (!succ || succ->idx == p.self.idx) {
    range_finish(p, st, false);
    return;
  }
  ++st->chain;
  const auto from = p.self.idx;
  const auto to = *succ;
  send(
      from, to, MsgType::RangeQueryForward, st->qid, [this, st](VirtualPeer& q) { range_serve(q, st, false); },
      [this, from, to, st] {
        // Successor is gone: promote the next live entry and continue.
        auto& p = at(from);
        mark_failed(p, to.idx);
        range_forward(p, st);
      });
}

void Network::range_finish(VirtualPeer& p, std::shared_ptr<RangeState> st, bool partial) {
  if (st->done) return;
  st->done = true;
  const auto qid = st->qid;
  reply_to_origin(p, st->origin, qid, MsgType::RangeQueryReply, [this, qid, st, partial] {
    if (auto* q = pending(qid)) {
      q->record.results = std::move(st->results);
      q->record.short_count = q->record.results.size() < q->record.requested;
      q->record.partial = partial;
      finish_query(qid, !partial);
    }
  });
}

// ============================================================================
// maintenance

void Network::set_successors(VirtualPeer& p, std::vector<PeerRef> list) {
  std::vector<PeerRef> out;
  for (const auto& c : list)
    if (c.valid() && c.idx != p.self.idx && !is_failed(p, c)) push_unique(out, c);
  std::stable_sort(out.begin(), out.end(), [&](const PeerRef& a, const PeerRef& b) {
    return ring_.distance(p.self.vid, a.vid) < ring_.distance(p.self.vid, b.vid);
  });
  if (out.size() > cfg_.overlay.list_length) out.resize(cfg_.overlay.list_length);
  p.successors = std::move(out);
}

void Network::set_predecessors(VirtualPeer& p, std::vector<PeerRef> list) {
  std::vector<PeerRef> out;
  for (const auto& c : list)
    if (c.valid() && c.idx != p.self.idx && !is_failed(p, c)) push_unique(out, c);
  std::stable_sort(out.begin(), out.end(), [&](const PeerRef& a, const PeerRef& b) {
    return ring_.distance(a.vid, p.self.vid) < ring_.distance(b.vid, p.self.vid);
  });
  if (out.size() > cfg_.overlay.list_length) out.resize(cfg_.overlay.list_length);
  p.predecessors = std::move(out);
}

void Network::mark_failed(VirtualPeer& p, std::uint32_t dead) {
  if (dead == p.self.idx) return;
  p.failed[dead] = sim_.now();
  p.neighbors.erase(dead);
  auto drop = [dead](std::vector<PeerRef>& list) {
    list.erase(std::remove_if(list.begin(), list.end(), [dead](const PeerRef& r) { return r.idx == dead; }),
               list.end());
  };
  drop(p.successors);
  drop(p.predecessors);
  for (auto& f : p.fingers)
    if (f && f->idx == dead) f.reset();
  for (auto& f : p.express)
    if (f && f->idx == dead) f.reset();
  if (p.successors.empty()) {
    // Fall back to the closest live peer we still know, clockwise.
    std::optional<PeerRef> best;
    auto consider = [&](const PeerRef& c) {
      if (c.idx == p.self.idx || is_failed(p, c)) return;
      if (!best || ring_.distance(p.self.vid, c.vid) < ring_.distance(p.self.vid, best->vid)) best = c;
    };
    for (const auto& f : p.fingers)
      if (f) consider(*f);
    for (const auto& f : p.express)
      if (f) consider(*f);
    for (const auto& c : p.predecessors) consider(c);
    if (best) p.successors.push_back(*best);
  }
}

void Network::notify_predecessor(VirtualPeer& p, const PeerRef& candidate) {
  if (candidate.idx == p.self.idx || is_failed(p, candidate)) return;
  auto pred = live_predecessor(p);
  if (pred && pred->idx == candidate.idx) return;
  if (pred && pred->idx != p.self.idx && !ring_.in_open(candidate.vid, pred->vid, p.self.vid)) return;
  // Keys in (old predecessor, candidate] now belong to the candidate.
  std::vector<KeyValue> keys;
  auto hash = [this, &p](Key k) { return placement_hash(p, k); };
  if (pred && pred->idx != p.self.idx)
    keys = p.store.extract_interval(pred->vid, candidate.vid, hash, ring_);
  else
    keys = p.store.extract_interval(p.self.vid, candidate.vid, hash, ring_);
  std::vector<PeerRef> list{candidate};
  for (const auto& c : p.predecessors) push_unique(list, c);
  set_predecessors(p, std::move(list));
  if (p.successors.empty()) set_successors(p, {candidate});
  if (!keys.empty())
    send(p.self.idx, candidate, MsgType::TransferKeys, 0,
         [this, keys = std::move(keys)](VirtualPeer& q) mutable { absorb(q, std::move(keys)); },
         [this, idx = p.self.idx, keys] {
           auto& p = at(idx);
           for (const auto& kv : keys) p.store.insert(kv.first, kv.second);
           p.reshelve_pending = true;
         });
}

void Network::notify_successor(VirtualPeer& p, const PeerRef& candidate) {
  if (candidate.idx == p.self.idx || is_failed(p, candidate)) return;
  auto succ = live_successor(p);
  if (succ && succ->idx != p.self.idx && succ->idx != candidate.idx &&
      !ring_.in_open(candidate.vid, p.self.vid, succ->vid))
    return;
  std::vector<PeerRef> list{candidate};
  for (const auto& c : p.successors) push_unique(list, c);
  set_successors(p, std::move(list));
}

void Network::stabilize(std::uint32_t idx) {
  auto& p = at(idx);
  if (!p.alive) return;
  sim_.schedule(cfg_.overlay.stabilize_interval, [this, idx] { stabilize(idx); }, kTraceTimer, idx);
  if (!p.joined) return;

  auto succ = live_successor(p);
  if (!succ) {
    if (p.detached_since < 0) p.detached_since = sim_.now();
    if (sim_.now() - p.detached_since >= rejoin_timeout_) rejoin_detached(idx);
    return;
  }
  p.detached_since = -1;

  const auto self = p.self;
  const auto s = *succ;
  send(
      idx, s, MsgType::GetNeighbors, 0,
      [this, self, s](VirtualPeer& q) {
        const auto pred = live_predecessor(q);
        const auto list = q.successors;
        send(q.self.idx, self, MsgType::NeighborsReply, 0, [this, s, pred, list](VirtualPeer& p) {
          std::vector<PeerRef> next;
          if (pred && pred->idx != p.self.idx && !is_failed(p, *pred) &&
              ring_.in_open(pred->vid, p.self.vid, s.vid))
            next.push_back(*pred);
          next.push_back(s);
          for (const auto& c : list) next.push_back(c);
          set_successors(p, std::move(next));
          if (auto head = live_successor(p)) {
            const auto me = p.self;
            send(p.self.idx, *head, MsgType::Notify, 0, [this, me](VirtualPeer& q) { notify_predecessor(q, me); },
                 [this, idx = p.self.idx, head] { mark_failed(at(idx), head->idx); });
          }
        });
      },
      [this, idx, s] { mark_failed(at(idx), s.idx); });

  if (auto pred = live_predecessor(p); pred && pred->idx != idx) {
    const auto pr = *pred;
    send(
        idx, pr, MsgType::GetNeighbors, 0,
        [this, self, pr](VirtualPeer& q) {
          const auto list = q.predecessors;
          send(q.self.idx, self, MsgType::NeighborsReply, 0, [this, pr, list](VirtualPeer& p) {
            if (auto cur = live_predecessor(p); !cur || cur->idx != pr.idx) return;
            std::vector<PeerRef> next{pr};
            for (const auto& c : list) next.push_back(c);
            set_predecessors(p, std::move(next));
          });
        },
        [this, idx, pr] { mark_failed(at(idx), pr.idx); });
  }

  fix_fingers(p);
  if (p.reshelve_pending) reshelve(p);
}

void Network::fix_fingers(VirtualPeer& p) {
  auto succ = live_successor(p);
  auto issue = [&](std::uint64_t target, unsigned slot, bool express) -> std::optional<PeerRef> {
    if (owns(p, target)) return p.self;
    if (succ && ring_.in_half_open(target, p.self.vid, succ->vid)) return succ;
    auto r = std::make_shared<Route>();
    r->purpose = Purpose::Finger;
    r->id = target;
    r->origin = p.self;
    r->slot = slot;
    r->express = express;
    route_step(p, r, cfg_.overlay.hop_retries);
    return std::nullopt;
  };
  for (unsigned i = 0; i < p.fingers.size(); ++i)
    if (auto local = issue(decimal_finger_target(p.self.vid, i + 1, ring_), i, false)) p.fingers[i] = *local;
  // Consecutive express targets usually share an owner; skip duplicates that
  // a fresher entry already covers.
  std::optional<PeerRef> covered;
  for (unsigned j = 0; j < p.express.size(); ++j) {
    const auto target = express_finger_target(p.self.vid, j, ring_);
    if (covered && ring_.distance(p.self.vid, target) <= ring_.distance(p.self.vid, covered->vid) &&
        ring_.distance(p.self.vid, target) != 0) {
      p.express[j] = covered;
      continue;
    }
    if (auto local = issue(target, j, true)) {
      p.express[j] = *local;
      covered = local;
    } else if (p.express[j] && !is_failed(p, *p.express[j])) {
      covered = p.express[j];
    }
  }
}

void Network::heartbeat(std::uint32_t idx) {
  auto& p = at(idx);
  if (!p.alive) return;
  sim_.schedule(cfg_.overlay.heartbeat_interval, [this, idx] { heartbeat(idx); }, kTraceTimer, idx);
  if (!p.joined) return;

  std::vector<PeerRef> members;
  for (const auto& c : p.successors) push_unique(members, c);
  for (const auto& c : p.predecessors) push_unique(members, c);
  members.erase(std::remove_if(members.begin(), members.end(), [&](const PeerRef& c) { return c.idx == idx; }),
                members.end());

  const auto version = p.active ? p.active->version() : 0u;
  const auto digest = p.active_digest;
  const bool ready = check_ready(p.update_state, cfg_.frm.threshold);
  const auto self = p.self;
  for (const auto& m : members)
    send(idx, m, MsgType::Heartbeat, 0,
         [this, self, version, digest, ready](VirtualPeer& q) {
           on_heartbeat(q, self, version, digest, ready);
           // Lists are not symmetric; answer peers that watch us but are not on
           // our lists so they do not time us out.
           auto known = [&](const std::vector<PeerRef>& l) {
             return std::any_of(l.begin(), l.end(), [&](const PeerRef& c) { return c.idx == self.idx; });
           };
           if (known(q.successors) || known(q.predecessors)) return;
           const auto me = q.self;
           const auto v = q.active ? q.active->version() : 0u;
           const auto d = q.active_digest;
           const bool r = check_ready(q.update_state, cfg_.frm.threshold);
           send(q.self.idx, self, MsgType::Heartbeat, 0,
                [this, me, v, d, r](VirtualPeer& back) { on_heartbeat(back, me, v, d, r); });
         });

  const SimTime now = sim_.now();
  std::vector<std::uint32_t> dead;
  for (const auto& m : members) {
    auto [it, fresh] = p.neighbors.try_emplace(m.idx);
    if (fresh) it->second.last_heard = now;
    const SimTime silence = now - it->second.last_heard;
    it->second.suspected = silence > cfg_.overlay.miss_threshold * cfg_.overlay.heartbeat_interval;
    if (silence >= cfg_.overlay.failure_timeout) dead.push_back(m.idx);
  }
  for (auto d : dead) mark_failed(p, d);

  if (cfg_.frm.enabled) maybe_coordinate(p);
}

void Network::on_heartbeat(VirtualPeer& q, const PeerRef& from, std::uint32_t version, std::uint64_t digest,
                           bool ready) {
  q.failed.erase(from.idx);
  auto& st = q.neighbors[from.idx];
  st.last_heard = sim_.now();
  st.version = version;
  st.digest = digest;
  st.ready = ready;
  st.suspected = false;
  if (!q.active || q.pulling || cfg_.placement == Placement::Uniform) return;
  const auto mine = q.active->version();
  if (version > mine || (version == mine && digest != q.active_digest && version > 0)) {
    q.pulling = true;
    const auto me = q.self;
    send(
        q.self.idx, from, MsgType::ModelPull, 0,
        [this, me](VirtualPeer& src) {
          auto model = src.active;
          send(src.self.idx, me, MsgType::ModelPush, 0, [this, model](VirtualPeer& dst) {
            dst.pulling = false;
            if (model) adopt(dst, model, false);
          });
        },
        [this, idx = q.self.idx] { at(idx).pulling = false; });
    // A lost reply must not block future pulls.
    sim_.schedule(4 * hop_timeout_, [this, idx = q.self.idx] { at(idx).pulling = false; }, kTraceTimer,
                  q.self.idx);
  }
}

void Network::reshelve(VirtualPeer& p) {
  p.reshelve_pending = false;
  if (!live_predecessor(p)) {
    p.reshelve_pending = true;
    return;
  }
  auto moving = p.store.extract_if([this, &p](Key k) { return !owns(p, placement_hash(p, k)); });
  reshelve_keys(p, std::move(moving));
}

void Network::absorb(VirtualPeer& p, std::vector<KeyValue> batch) {
  std::vector<KeyValue> away;
  for (auto& kv : batch) {
    if (owns(p, placement_hash(p, kv.first)))
      p.store.insert(kv.first, std::move(kv.second));
    else
      away.push_back(std::move(kv));
  }
  reshelve_keys(p, std::move(away));
}

void Network::reshelve_keys(VirtualPeer& p, std::vector<KeyValue> batch) {
  if (batch.empty()) return;
  const auto me = p.self.vid;
  std::vector<std::pair<std::uint64_t, KeyValue>> hashed;
  hashed.reserve(batch.size());
  for (auto& kv : batch) hashed.emplace_back(ring_.distance(me, placement_hash(p, kv.first)), std::move(kv));
  std::sort(hashed.begin(), hashed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  auto succ = live_successor(p);
  std::vector<KeyValue> direct, routed;
  for (auto& [d, kv] : hashed) {
    if (succ && succ->idx != p.self.idx && d != 0 && d <= ring_.distance(me, succ->vid))
      direct.push_back(std::move(kv));
    else
      routed.push_back(std::move(kv));
  }
  const auto idx = p.self.idx;
  auto keep_here = [this, idx](const std::vector<KeyValue>& kvs) {
    auto& p = at(idx);
    for (const auto& kv : kvs) p.store.insert(kv.first, kv.second);
    p.reshelve_pending = true;
  };
  if (!direct.empty()) {
    auto copy = direct;
    send(idx, *succ, MsgType::TransferKeys, 0,
         [this, direct = std::move(direct)](VirtualPeer& q) mutable { absorb(q, std::move(direct)); },
         [keep_here, copy = std::move(copy)] { keep_here(copy); });
  }
  if (!routed.empty()) {
    auto r = std::make_shared<Route>();
    r->purpose = Purpose::Reshelve;
    r->id = placement_hash(p, routed.front().first);
    r->origin = p.self;
    r->batch = std::move(routed);
    if (owns(p, r->id)) {
      // Ownership is ambiguous right now (pointers in flux); retry later.
      keep_here(r->batch);
      return;
    }
    route_step(p, r, cfg_.overlay.hop_retries);
  }
}

void Network::rejoin_detached(std::uint32_t idx) {
  // The hosting node removes the stranded vnode and rejoins it through a
  // sibling, carrying its keys along.
  auto& old = at(idx);
  const NodeId node = old.self.node;
  const int port = old.port;
  auto keys = old.store.take_all();
  old.alive = false;
  auto& info = nodes_[node];
  std::optional<PeerRef> boot;
  for (auto v : info.vnodes)
    if (v != idx && at(v).alive && at(v).joined && live_successor(at(v))) boot = at(v).self;
  if (!boot) boot = pick_bootstrap(node);
  const auto fresh = new_peer(node, port);
  std::replace(info.vnodes.begin(), info.vnodes.end(), idx, fresh);
  for (auto& kv : keys) at(fresh).store.insert(kv.first, std::move(kv.second));
  at(fresh).reshelve_pending = true;
  if (boot) join_peer(fresh, *boot);
  else form_local_ring({fresh});
}

// ============================================================================
// FRM

void Network::record_insert(VirtualPeer& p, Key key) {
  ++p.update_state.new_since_update;
  if (!cfg_.frm.enabled || !p.active || cfg_.placement == Placement::Uniform) return;
  if (!p.update) p.update = *p.active;
  const auto min_key = p.store.min_key();
  const double base = p.active->predict_rank(min_key ? *min_key : key);
  const double target = insert_target_rank(base, p.store.rank_of(key));
  leaf_update(*p.update, key, target, cfg_.frm.learning_rate);
}

void Network::adopt(VirtualPeer& p, std::shared_ptr<const RmiModel> model, bool participant) {
  const auto cur = p.active;
  std::shared_ptr<const RmiModel> next;
  if (!cur) {
    next = model;
  } else if (model->lineage() != cur->lineage()) {
    if (model->version() <= cur->version()) return;
    next = model;
  } else {
    if (model == cur || *model == *cur) return;
    auto merged = merge_models(*cur, *model);
    if (merged == *cur) return;
    next = merged == *model ? model : std::make_shared<const RmiModel>(std::move(merged));
  }
  const auto old_version = cur ? cur->version() : 0u;
  p.active = next;
  p.active_digest = next->digest();
  if (next->version() > old_version) adoptions_.push_back({sim_.now(), p.self.idx, next->version()});
  if (!reference_ || next->version() > reference_->version()) reference_ = next;
  if (participant) {
    p.update.reset();
    p.update_state = UpdateState{0, p.store.size()};
  } else if (p.update) {
    const auto pending_leaves = p.update->changed_since(old_version);
    if (pending_leaves.empty()) {
      p.update.reset();
    } else {
      RmiModel u = *next;
      for (auto j : pending_leaves) {
        auto leaf = p.update->leaf(j);
        leaf.changed_at = next->version() + 1;
        leaf.author = 0;
        u.set_leaf(j, leaf);
      }
      p.update = std::move(u);
    }
  }
  p.reshelve_pending = true;
}

void Network::maybe_coordinate(VirtualPeer& p) {
  if (p.busy || !p.active || cfg_.placement == Placement::Uniform) return;
  if (!check_ready(p.update_state, cfg_.frm.threshold)) return;
  std::vector<PeerRef> members;
  for (const auto& c : p.successors) push_unique(members, c);
  for (const auto& c : p.predecessors) push_unique(members, c);
  std::vector<PeerRef> ready;
  for (const auto& m : members) {
    if (m.idx == p.self.idx) continue;
    auto it = p.neighbors.find(m.idx);
    if (it != p.neighbors.end() && it->second.ready) ready.push_back(m);
  }
  if (!quorum_reached(ready.size(), members.size(), cfg_.frm.quorum)) return;

  const auto sid = next_session_++;
  auto s = std::make_unique<Session>();
  s->id = sid;
  s->coordinator = p.self.idx;
  s->invited = ready.size();
  s->max_version = p.active->version();
  sessions_.emplace(sid, std::move(s));
  p.busy = true;
  p.session = sid;
  const auto coord = p.self;
  for (const auto& m : ready) {
    send(p.self.idx, m, MsgType::ModelConfirm, 0, [this, sid, coord](VirtualPeer& q) {
      const bool busy = q.busy || !q.joined || !q.active;
      std::vector<std::uint8_t> blob;
      std::uint32_t version = 0;
      if (!busy) {
        q.busy = true;
        q.session = sid;
        const auto& src = q.update ? *q.update : *q.active;
        RmiModel stamped = src;
        stamped.set_version(q.active->version(), q.active->author());
        blob = serialize_changed_segments(stamped, q.active->version());
        version = q.active->version();
        q.update_state = UpdateState{0, q.store.size()};
        // Release the busy flag if the coordinator never publishes.
        sim_.schedule(8 * hop_timeout_, [this, idx = q.self.idx, sid] {
          auto& q = at(idx);
          if (q.busy && q.session == sid) q.busy = false;
        }, kTraceTimer, sid);
      }
      const auto who = q.self.idx;
      send(who, coord, busy ? MsgType::ModelConfirm : MsgType::ModelPush, 0,
           [this, sid, who, busy, version, blob = std::move(blob)](VirtualPeer&) mutable {
             auto it = sessions_.find(sid);
             if (it == sessions_.end() || it->second->closed) return;
             auto& s = *it->second;
             ++s.answered;
             if (!busy) {
               s.participants.push_back(who);
               s.blobs.push_back(std::move(blob));
               s.max_version = std::max(s.max_version, version);
             }
             if (s.answered == s.invited) close_session(sid);
           });
    });
  }
  sim_.schedule(4 * hop_timeout_, [this, sid] { close_session(sid); }, kTraceTimer, sid);
}

void Network::close_session(std::uint64_t sid) {
  auto it = sessions_.find(sid);
  if (it == sessions_.end() || it->second->closed) return;
  auto& s = *it->second;
  s.closed = true;
  auto& c = at(s.coordinator);
  if (c.session == sid) c.busy = false;
  if (!c.alive || s.participants.empty() || !c.active) {
    sessions_.erase(it);
    return;
  }
  std::vector<SegmentBlob> blobs;
  for (const auto& b : s.blobs) blobs.push_back(decode_segments(b));
  {
    const auto& src = c.update ? *c.update : *c.active;
    RmiModel stamped = src;
    stamped.set_version(c.active->version(), c.active->author());
    blobs.push_back(decode_segments(serialize_changed_segments(stamped, c.active->version())));
  }
  const auto new_version = std::max(s.max_version, c.active->version()) + 1;
  auto result = aggregate_segments(*c.active, blobs, new_version, c.self.idx + 1);
  auto model = std::make_shared<const RmiModel>(std::move(result.model));
  publications_.push_back({sim_.now(), c.self.idx, model->version()});
  adopt(c, model, true);
  const auto coord = c.self.idx;
  for (auto q : s.participants) {
    send(coord, at(q).self, MsgType::ModelPush, 0, [this, model, sid](VirtualPeer& dst) {
      adopt(dst, model, true);
      if (dst.session == sid) dst.busy = false;
    });
  }
  sessions_.erase(sid);
}

}  // namespace lead
