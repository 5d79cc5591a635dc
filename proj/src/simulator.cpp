#include "lcc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <map>
#include <queue>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "lcc/clustering.hpp"
#include "lcc/locating.hpp"
#include "lcc/random.hpp"

namespace lcc {

namespace {

constexpr SimTime kPingTimeout = from_ms(1000);
constexpr SimTime kRendezvousTimeout = from_ms(2000);
constexpr SimTime kLocateTimeout = from_ms(5000);
constexpr SimTime kProbeTimeout = from_ms(2500);
constexpr SimTime kJoinTimeout = from_ms(3000);
constexpr SimTime kReservationHold = from_ms(3000);
constexpr SimTime kPendingJoinHold = from_ms(20000);
constexpr SimTime kRetryDelay = from_ms(2000);
constexpr SimTime kIndirectRepairDelay = from_ms(2000);
constexpr SimTime kStickyRepairDelay = from_ms(10000);
constexpr SimTime kRecoveryPoll = from_ms(100);
constexpr SimTime kQuiescence = from_ms(2000);
constexpr std::size_t kDigestTop = 4;
constexpr std::size_t kBootCandidates = 3;
constexpr int kRingProbesPerMerge = 2;
constexpr int kGossipMissThreshold = 2;
constexpr std::size_t kMaxViolationSamples = 20;
constexpr std::size_t kMaxLinkAttempts = 24;
constexpr std::size_t kMaxRedirects = 6;
constexpr std::size_t kRefineHints = 4;
constexpr int kMaxReboots = 2;

enum class LinkKind : std::uint8_t { kBackbone, kMesh, kRefine, kRepair, kEdge };

bool owned_kind(LinkKind k) { return k == LinkKind::kBackbone || k == LinkKind::kRefine || k == LinkKind::kRepair; }

enum class Timer : std::uint8_t {
  kArrive,
  kDepart,
  kFailure,
  kRejoin,
  kKeepAlive,
  kGossip,
  kRefine,
  kRpcTimeout,
  kNeighborDown,
  kAnnounce,
  kRepair,
  kSnapshot,
  kRecoveryPoll,
  kRetryJoin,
};

struct Message {
  MsgType type = MsgType::kPing;
  NodeId from, to;
  std::uint64_t token = 0;
  bool reply = false;
  NodeId session;
  NodeId node;
  Millis dist = -1.0;
  ClusterId cluster, cluster2;
  int ival = 0;
  int ival2 = 0;
  LinkKind link_kind = LinkKind::kMesh;
  std::vector<NodeId> ids;
  std::vector<Candidate> cands;
  Advert advert;
  PriorityVector pv;
  std::vector<CacheEntry> digest;
  std::vector<GossipEntry> entries;
};

std::uint32_t wire_size(const Message& m) {
  const std::uint32_t h = kHeaderBytes;
  const auto n = [](std::size_t k) { return static_cast<std::uint32_t>(k); };
  switch (m.type) {
    case MsgType::kNodeJoin:
    case MsgType::kNodeLeave: return 0;
    case MsgType::kRendezvousRequest: return h + 8 * n(m.ids.size() + m.cands.size());
    case MsgType::kRendezvousReply: return h + 8 * n(m.ids.size());
    case MsgType::kPing:
    case MsgType::kPong:
    case MsgType::kNotALeader:
    case MsgType::kJoinReject:
    case MsgType::kRouteWithdraw:
    case MsgType::kRefineProbe: return h;
    case MsgType::kRegister:
    case MsgType::kLocalizationRequest:
    case MsgType::kProbeRequest:
    case MsgType::kProbeReply:
    case MsgType::kJoinRequest:
    case MsgType::kLeave:
    case MsgType::kReclaimRequest:
    case MsgType::kNewCluster:
    case MsgType::kRecoveringAck:
    case MsgType::kLinkRequest: return h + 8;
    case MsgType::kCandidateList: return h + 8 * n(m.cands.size());
    case MsgType::kJoinNotification: return h + 8 + 8 * n(m.ids.size());
    case MsgType::kJoinAck: return h + 20;
    case MsgType::kKeepAlive: return h + 20 + 28 * n(m.digest.size());
    case MsgType::kRecoveringRequest:
    case MsgType::kSplitNotice: return h + 8 + 8 * n(m.ids.size());
    case MsgType::kGossip:
    case MsgType::kGossipReply: return h + 8 * n(m.entries.size());
    case MsgType::kLinkDrop: return m.node.valid() ? h + 8 : h;
    case MsgType::kRouteAdvert: return h + 8 + 8 * n(m.advert.path.size());
    case MsgType::kRefineReply: return h + 8 + 8 * n(m.advert.path.size()) + 8 * n(m.cands.size());
    case MsgType::kLinkAccept: return h + 8 + 8 * n(m.advert.path.size()) + 8 * n(m.ids.size());
    case MsgType::kLinkReject: return h + 8 * n(m.ids.size());
  }
  return h;
}

struct Event {
  SimTime at = 0;
  std::uint64_t seq = 0;
  std::uint32_t node = 0;
  std::uint32_t inc = 0;
  std::uint32_t msg = 0;
  bool deliver = false;
  Timer timer = Timer::kArrive;
  std::uint64_t aux = 0;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const { return a.at != b.at ? a.at > b.at : a.seq > b.seq; }
};

using Callback = std::function<void(const Message*)>;

struct MemberExtra {
  int fanout_max = 0;
  int spare = 0;
  int other = 0;
  ClusterId primary;
};

struct Membership {
  Membership(ClusterView v, bool is_primary) : view(std::move(v)), primary(is_primary) {}

  ClusterView view;
  bool primary = false;
  NodeId evaluated_leader;
  std::set<NodeId> last_migrated;
  SimTime recovering_since = 0;
  // leader side
  std::map<NodeId, MemberExtra> extra;
  std::map<NodeId, SimTime> pending_joins;
  std::map<ClusterId, std::set<NodeId>> edge_members;
};

struct JoinState {
  bool relocate = false;
  int boot_failures = 0;
  std::vector<NodeId> failed;
  std::optional<LocateSession> locate;
  std::vector<Candidate> targets;
  std::size_t target_idx = 0;
  std::vector<Candidate> known;
  SimTime started = 0;
  std::uint64_t bytes_at_start = 0;
  std::uint64_t probe_bytes_at_start = 0;
  std::size_t record = static_cast<std::size_t>(-1);
  std::vector<Candidate> edge_targets;
  std::vector<NodeId> refused;
  int reboots = 0;
};

struct RepairState {
  bool active = false;
  bool scheduled = false;
  NodeId lost;
  SimTime lost_at = 0;
  std::vector<NodeId> list;
  std::size_t idx = 0;
  std::deque<NodeId> bfs;
  std::vector<NodeId> ancestors;
  std::size_t ancestor_idx = 0;
  std::set<NodeId> tried;
};

struct ProbeRound {
  NodeId newcomer;
  std::uint64_t token = 0;
  Millis d = 0.0;
  std::size_t outstanding = 0;
  std::vector<Candidate> results;
};

struct RecoveryRun {
  ClusterId old_cluster, cluster;
  NodeId prev_leader;
  std::vector<NodeId> todo;
  std::size_t idx = 0;
  std::vector<NodeId> negatives;
  std::vector<NodeId> joined;
};

struct Node {
  bool alive = false;
  bool joined = false;
  std::uint32_t inc = 0;
  int fanout = 0;
  SimTime session_start = 0;
  RoutingState routing;
  GossipView gossip{kNoNode, 64};
  std::vector<Membership> memberships;
  std::unique_ptr<LocatingSystem> rings;
  std::map<NodeId, Millis> leader_dist;
  std::unordered_map<std::uint64_t, Callback> pending;
  std::map<NodeId, SimTime> reservations;
  int pending_out = 0;
  SimTime last_announce = std::numeric_limits<SimTime>::min() / 2;
  bool announce_scheduled = false;
  bool announced = false;
  bool advert_dirty = false;
  std::unique_ptr<JoinState> join;
  RepairState repair;
  std::vector<NodeId> last_path;
  std::map<std::uint64_t, ProbeRound> rounds;
  std::unique_ptr<RecoveryRun> recovery;
  std::vector<NodeId> crash_neighbors;
  bool refining = false;
};

struct RecoveryTracking {
  SimTime at = 0;
  std::vector<NodeId> pending;
  std::size_t record = 0;
};

}  // namespace

struct Simulator::Impl {
  Impl(ScenarioConfig c, Topology t)
      : cfg(std::move(c)),
        topo(std::move(t)),
        rng(cfg.seed * 0x9E3779B97F4A7C15ull + 17),
        churn_rng(rng.fork()),
        fail_rng(rng.fork()),
        acc(cfg.snapshot_period_s, cfg.adjust_window_s) {
    cfg.n = topo.size();
    lcc_mode = cfg.protocol == Protocol::kLcc;
    sticky = cfg.recovery == RecoveryScheme::kGrandparent;
    election.stability_threshold_s = cfg.stability_s;
    locate_cfg.r_max = cfg.r_max_ms;
    locate_cfg.stop_c = cfg.stop_c;
    locate_cfg.mode = cfg.locating_mode;
    nodes.resize(cfg.n);
    Rng fan = rng.fork();
    host_fanout.resize(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) host_fanout[i] = cfg.fanout.sample(fan.uniform01());
    host_fanout[0] = cfg.source_fanout;
    session_bytes.assign(cfg.n, 0);
    session_probe_bytes.assign(cfg.n, 0);
  }

  // ---- configuration and state
  ScenarioConfig cfg;
  Topology topo;
  Rng rng;
  Rng churn_rng;
  Rng fail_rng;
  bool lcc_mode = true;
  bool sticky = false;
  ElectionParams election;
  LocateConfig locate_cfg;
  std::vector<int> host_fanout;
  std::vector<Node> nodes;
  MeshOverlay overlay;
  std::vector<NodeId> pool;
  bool arrivals_paused = false;
  std::vector<NodeId> registry;  // rendezvous point's list
  std::uint32_t next_cluster = 0;

  // ---- engine
  std::priority_queue<Event, std::vector<Event>, EventLater> queue;
  std::vector<Message> msg_pool;
  std::vector<std::uint32_t> msg_free;
  std::uint64_t seq = 0;
  std::uint64_t next_token = 0;
  SimTime now = 0;
  SimTime last_route_change = 0;

  // ---- accounting and results
  std::vector<LogSink*> sinks;
  bool started = false;
  LogAccumulator acc;
  std::vector<std::uint64_t> session_bytes;
  std::vector<std::uint64_t> session_probe_bytes;
  std::uint64_t deliveries = 0;
  RunResult res;
  std::vector<RecoveryTracking> tracking;

  Node& node(NodeId n) { return nodes[n.value]; }
  const Node& node(NodeId n) const { return nodes[n.value]; }
  Millis rtt(NodeId a, NodeId b) const { return topo.rtt(a, b); }

  // ------------------------------------------------------------ engine
  void push(Event e) {
    e.seq = seq++;
    queue.push(e);
  }

  void timer(SimTime at, NodeId n, Timer kind, std::uint64_t aux = 0) {
    Event e;
    e.at = at;
    e.node = n.valid() ? n.value : 0;
    e.inc = n.valid() ? node(n).inc : 0;
    e.timer = kind;
    e.aux = aux;
    push(e);
  }

  void log(const LogRecord& r) {
    acc.record(r);
    for (auto* s : sinks) s->record(r);
  }

  void marker(MsgType type, NodeId n) { log(LogRecord{now, n, type, 0, n, kNoNode}); }

  void send(Message m) {
    const std::uint32_t bytes = wire_size(m);
    log(LogRecord{now, m.to, m.type, bytes, m.from, m.session});
    if (m.session.valid()) {
      session_bytes[m.session.value] += bytes;
      if (is_probe_traffic(m.type)) session_probe_bytes[m.session.value] += bytes;
    }
    Event e;
    e.at = now + from_ms(rtt(m.from, m.to) / 2.0);
    e.node = m.to.value;
    e.inc = node(m.to).inc;
    e.deliver = true;
    std::uint32_t slot;
    if (!msg_free.empty()) {
      slot = msg_free.back();
      msg_free.pop_back();
      msg_pool[slot] = std::move(m);
    } else {
      slot = static_cast<std::uint32_t>(msg_pool.size());
      msg_pool.push_back(std::move(m));
    }
    e.msg = slot;
    ++deliveries;
    push(e);
  }

  Message make(MsgType type, NodeId from, NodeId to, NodeId session = kNoNode) {
    Message m;
    m.type = type;
    m.from = from;
    m.to = to;
    m.session = session;
    return m;
  }

  void rpc(Message m, SimTime timeout, Callback cb) {
    const NodeId from = m.from;
    m.token = ++next_token;
    node(from).pending.emplace(m.token, std::move(cb));
    timer(now + timeout, from, Timer::kRpcTimeout, m.token);
    send(std::move(m));
  }

  void reply(const Message& req, Message r) {
    r.from = req.to;
    r.to = req.from;
    r.token = req.token;
    r.reply = true;
    if (!r.session.valid()) r.session = req.session;
    send(std::move(r));
  }

  void measure(NodeId from, NodeId to, NodeId session, std::function<void(std::optional<Millis>)> cb) {
    rpc(make(MsgType::kPing, from, to, session), kPingTimeout,
        [this, from, to, cb = std::move(cb)](const Message* m) {
          if (m) cb(rtt(from, to));
          else cb(std::nullopt);
        });
  }

  void run_until(SimTime limit) {
    if (!started && cfg.duration_s > 0.0) {
      started = true;
      bootstrap_run();
    }
    while (!queue.empty() && queue.top().at <= limit) {
      const Event e = queue.top();
      queue.pop();
      now = e.at;
      if (e.deliver) {
        Message m = std::move(msg_pool[e.msg]);
        msg_free.push_back(e.msg);
        Node& t = nodes[e.node];
        if (!t.alive || t.inc != e.inc) continue;
        deliver(m);
      } else {
        fire(e);
      }
    }
    if (limit > now) now = limit;
  }

  // ------------------------------------------------------------ run setup
  void bootstrap_run() {
    const NodeId src(0);
    Node& s = node(src);
    s.alive = true;
    s.joined = true;
    s.fanout = host_fanout[0];
    s.session_start = 0;
    s.routing = RoutingState(src, true);
    s.gossip = GossipView(src, static_cast<std::size_t>(cfg.view_bound));
    overlay.add_node(src, s.fanout, true);
    marker(MsgType::kNodeJoin, src);
    registry.push_back(src);
    if (lcc_mode) become_leader(src, ClusterId(next_cluster++), ClusterId{});
    start_timers(src);
    for (std::uint32_t i = 1; i < cfg.n; ++i) pool.push_back(NodeId(i));
    if (!pool.empty()) timer(from_seconds(churn_rng.exponential(cfg.join_rate)), kNoNode, Timer::kArrive);
    for (std::size_t k = 0; k < cfg.failures.size(); ++k) {
      timer(from_seconds(cfg.failures[k].at_s), kNoNode, Timer::kFailure, k);
    }
    const auto snaps = static_cast<std::size_t>(std::floor(cfg.duration_s / cfg.snapshot_period_s + 1e-9));
    for (std::size_t k = 0; k < snaps; ++k) {
      timer(from_seconds(cfg.snapshot_period_s * static_cast<double>(k + 1)), kNoNode, Timer::kSnapshot, k);
    }
  }

  void start_timers(NodeId n) {
    timer(now + from_seconds(rng.uniform(0.0, cfg.keepalive_s)), n, Timer::kKeepAlive);
    timer(now + from_seconds(rng.uniform(0.0, cfg.gossip_s)), n, Timer::kGossip);
    if (n != NodeId(0)) timer(now + from_seconds(rng.uniform(0.5, 1.0) * cfg.rt_s), n, Timer::kRefine);
  }

  // ------------------------------------------------------------ timers
  void fire(const Event& e) {
    const NodeId n(e.node);
    switch (e.timer) {
      case Timer::kArrive: on_arrival_tick(); return;
      case Timer::kFailure: inject_failure(static_cast<std::size_t>(e.aux)); return;
      case Timer::kRejoin: {
        const NodeId x(static_cast<std::uint32_t>(e.aux));
        if (!node(x).alive) arrive(x);
        return;
      }
      case Timer::kSnapshot: snapshot(static_cast<std::size_t>(e.aux)); return;
      case Timer::kRecoveryPoll: poll_recovery(static_cast<std::size_t>(e.aux)); return;
      default: break;
    }
    Node& x = node(n);
    if (!x.alive || x.inc != e.inc) return;
    switch (e.timer) {
      case Timer::kDepart:
        crash(n);
        pool.push_back(n);
        if (arrivals_paused) {
          arrivals_paused = false;
          timer(now + from_seconds(churn_rng.exponential(cfg.join_rate)), kNoNode, Timer::kArrive);
        }
        return;
      case Timer::kKeepAlive: keepalive_tick(n); return;
      case Timer::kGossip: gossip_tick(n); return;
      case Timer::kRefine: refine_tick(n); return;
      case Timer::kRpcTimeout: {
        auto it = x.pending.find(e.aux);
        if (it == x.pending.end()) return;
        auto cb = std::move(it->second);
        x.pending.erase(it);
        cb(nullptr);
        return;
      }
      case Timer::kNeighborDown: {
        const NodeId gone(static_cast<std::uint32_t>(e.aux));
        if (node(gone).inc == static_cast<std::uint32_t>(e.aux >> 32)) neighbor_down(n, gone);
        return;
      }
      case Timer::kAnnounce:
        x.announce_scheduled = false;
        if (x.routing.route().valid && x.advert_dirty) do_announce(n);
        return;
      case Timer::kRepair:
        x.repair.scheduled = false;
        if (!x.routing.route().valid && x.joined && !x.repair.active) start_repair(n);
        return;
      case Timer::kRetryJoin:
        if (x.join) bootstrap(n);
        return;
      default: return;
    }
  }

  // ------------------------------------------------------------ churn
  void on_arrival_tick() {
    if (pool.empty()) {
      arrivals_paused = true;
      return;
    }
    const auto i = churn_rng.below(pool.size());
    const NodeId x = pool[i];
    pool[i] = pool.back();
    pool.pop_back();
    arrive(x);
    timer(now + from_seconds(churn_rng.exponential(cfg.join_rate)), kNoNode, Timer::kArrive);
  }

  void arrive(NodeId x) {
    Node& n = node(x);
    for (NodeId y : n.crash_neighbors) {
      if (overlay.contains(y) && overlay.linked(y, x)) {
        overlay.remove_half(y, x);
        node(y).routing.on_neighbor_lost(x);
      }
    }
    const std::uint32_t inc = n.inc + 1;
    n = Node{};
    n.inc = inc;
    n.alive = true;
    n.fanout = host_fanout[x.value];
    n.session_start = now;
    n.routing = RoutingState(x, false);
    n.gossip = GossipView(x, static_cast<std::size_t>(cfg.view_bound));
    if (overlay.contains(x)) overlay.remove_node(x);
    overlay.add_node(x, n.fanout, false);
    marker(MsgType::kNodeJoin, x);
    res.last_join_s = to_seconds(now);
    if (cfg.lifetime_param > 0.0) {
      timer(now + from_seconds(churn_rng.exponential(cfg.lifetime_param)), x, Timer::kDepart);
    }
    start_join(x, false);
  }

  void crash(NodeId x) {
    Node& n = node(x);
    if (!n.alive) return;
    marker(MsgType::kNodeLeave, x);
    std::vector<NodeId> nbrs;
    for (const auto& adj : overlay.neighbors(x)) nbrs.push_back(adj.node);
    const std::uint32_t inc = n.inc + 1;
    // tagged with the dead incarnation; a rejoin before detection voids it
    for (NodeId y : nbrs) {
      overlay.remove_half(x, y);
      timer(now + from_seconds(cfg.failure_detect_s), y, Timer::kNeighborDown,
            (std::uint64_t{inc} << 32) | x.value);
    }
    n = Node{};
    n.inc = inc;
    n.crash_neighbors = std::move(nbrs);
  }

  // ------------------------------------------------------------ failures
  bool is_leader_node(NodeId x) const {
    const Node& n = node(x);
    if (!n.alive) return false;
    for (const auto& m : n.memberships) {
      if (m.primary) return m.view.is_leader();
    }
    return false;
  }

  void inject_failure(std::size_t k) {
    const auto& f = cfg.failures[k];
    std::vector<NodeId> candidates;
    for (std::uint32_t i = 1; i < cfg.n; ++i) {
      const NodeId x(i);
      if (!node(x).alive) continue;
      if (f.selector == FailureSpec::Selector::kLeadersFraction && !is_leader_node(x)) continue;
      if (f.selector == FailureSpec::Selector::kNodes &&
          std::find(f.nodes.begin(), f.nodes.end(), i) == f.nodes.end()) {
        continue;
      }
      candidates.push_back(x);
    }
    std::vector<NodeId> victims;
    if (f.selector == FailureSpec::Selector::kNodes) {
      victims = candidates;
    } else {
      const auto count = static_cast<std::size_t>(std::llround(f.fraction * static_cast<double>(candidates.size())));
      for (std::size_t i = 0; i < count && i < candidates.size(); ++i) {
        const auto j = i + fail_rng.below(candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
        victims.push_back(candidates[i]);
      }
    }
    if (victims.empty()) {
      res.warnings.push_back(fmt::format("failure at {}s selected no node", f.at_s));
      return;
    }
    const DeliveryTree before = delivery_tree();
    for (NodeId v : victims) crash(v);
    const DeliveryTree after = delivery_tree();
    RecoveryRecord rec;
    rec.at_s = to_seconds(now);
    rec.failed = victims.size();
    RecoveryTracking tr;
    tr.at = now;
    for (std::uint32_t i = 0; i < cfg.n; ++i) {
      if (!node(NodeId(i)).alive || !node(NodeId(i)).joined) continue;
      if (before.reachable[i] && !after.reachable[i]) tr.pending.push_back(NodeId(i));
    }
    rec.affected = tr.pending.size();
    tr.record = res.recoveries.size();
    res.recoveries.push_back(rec);
    tracking.push_back(std::move(tr));
    timer(now + kRecoveryPoll, kNoNode, Timer::kRecoveryPoll, tracking.size() - 1);
    if (f.rejoin_at_s) {
      for (NodeId v : victims) timer(from_seconds(*f.rejoin_at_s), kNoNode, Timer::kRejoin, v.value);
    }
  }

  void poll_recovery(std::size_t k) {
    auto& tr = tracking[k];
    auto& rec = res.recoveries[tr.record];
    if (tr.pending.empty()) return;
    const DeliveryTree tree = delivery_tree();
    std::vector<NodeId> still;
    for (NodeId x : tr.pending) {
      if (!node(x).alive) {
        --rec.affected;
        continue;
      }
      if (tree.reachable[x.value]) rec.resume_s.push_back(to_seconds(now - tr.at));
      else still.push_back(x);
    }
    tr.pending = std::move(still);
    if (tr.pending.empty()) return;
    if (now - tr.at >= from_seconds(cfg.recovery_horizon_s)) {
      rec.censored = tr.pending.size();
      tr.pending.clear();
      return;
    }
    timer(now + kRecoveryPoll, kNoNode, Timer::kRecoveryPoll, k);
  }

  // ------------------------------------------------------------ membership helpers
  Membership* membership(NodeId x, ClusterId c) {
    for (auto& m : node(x).memberships) {
      if (m.view.cluster() == c) return &m;
    }
    return nullptr;
  }

  Membership* primary(NodeId x) {
    for (auto& m : node(x).memberships) {
      if (m.primary) return &m;
    }
    return nullptr;
  }

  const Membership* primary(NodeId x) const { return const_cast<Impl*>(this)->primary(x); }

  ClusterId primary_cluster(NodeId x) const {
    const auto* m = primary(x);
    return m ? m->view.cluster() : kNoCluster;
  }

  int reserved(NodeId x) {
    Node& n = node(x);
    std::erase_if(n.reservations, [this](const auto& kv) { return kv.second <= now; });
    return static_cast<int>(n.reservations.size()) + n.pending_out;
  }

  bool spare(NodeId x) { return overlay.has_spare(x, reserved(x)); }

  int spare_links(NodeId x) {
    return std::max(0, overlay.budget(x) - static_cast<int>(overlay.link_count(x)) - reserved(x));
  }

  std::optional<Millis> nearest_foreign_leader(NodeId x, NodeId own_leader) const {
    std::optional<Millis> best;
    for (const auto& [l, d] : node(x).leader_dist) {
      if (l == own_leader || l == x) continue;
      if (!best || d < *best) best = d;
    }
    return best;
  }

  PriorityVector current_pv(NodeId x, Membership& m) {
    Node& n = node(x);
    const auto& route = n.routing.route();
    std::optional<Millis> dl;
    if (n.routing.is_source()) dl = 0.0;
    else if (route.valid) dl = route.distance;
    auto pv = make_priority_vector(n.fanout, dl, to_seconds(now - n.session_start),
                                   nearest_foreign_leader(x, m.view.leader()), m.view.own_pv().migrated);
    m.view.own_pv() = pv;
    return pv;
  }

  void become_leader(NodeId x, ClusterId c, ClusterId replaced) {
    Node& n = node(x);
    Membership* m = replaced.valid() ? membership(x, replaced) : nullptr;
    ClusterView view(x, c, x, cfg.r_max_ms, now);
    if (m) {
      const bool was_primary = m->primary;
      *m = Membership(std::move(view), true);
      if (!was_primary) {
        for (auto& other : n.memberships) {
          if (&other != m && other.primary) other.primary = false;
        }
      }
    } else {
      n.memberships.insert(n.memberships.begin(), Membership(std::move(view), true));
    }
    // a leader keeps only its own cluster
    drop_secondary_memberships(x);
    if (!n.rings) {
      n.rings = std::make_unique<LocatingSystem>(x, RingLevels(cfg.alpha_ms, cfg.max_level),
                                                 static_cast<std::size_t>(cfg.k_per_level));
      for (const auto& [l, d] : n.leader_dist) {
        if (l != x) n.rings->observe(l, d, now);
      }
    }
    if (x != NodeId(0)) send(make(MsgType::kRegister, x, NodeId(0)));
  }

  void drop_secondary_memberships(NodeId x) {
    Node& n = node(x);
    for (auto it = n.memberships.begin(); it != n.memberships.end();) {
      if (it->primary) {
        ++it;
        continue;
      }
      if (!it->view.is_leader()) {
        auto lv = make(MsgType::kLeave, x, it->view.leader());
        lv.cluster = it->view.cluster();
        send(std::move(lv));
      }
      it = n.memberships.erase(it);
    }
  }

  void step_down(NodeId x) {
    Node& n = node(x);
    n.rings.reset();
    std::erase(registry, x);
  }

  // ------------------------------------------------------------ join
  void start_join(NodeId x, bool relocate) {
    Node& n = node(x);
    n.join = std::make_unique<JoinState>();
    n.join->relocate = relocate;
    n.join->started = now;
    n.join->bytes_at_start = session_bytes[x.value];
    n.join->probe_bytes_at_start = session_probe_bytes[x.value];
    if (lcc_mode) n.join->locate.emplace(x, locate_cfg);
    bootstrap(x);
  }

  void bootstrap(NodeId x) {
    Node& n = node(x);
    auto req = make(MsgType::kRendezvousRequest, x, NodeId(0), x);
    req.ids = n.join->failed;
    for (NodeId f : n.join->refused) req.cands.push_back(Candidate{f, 0.0});
    rpc(std::move(req), kRendezvousTimeout, [this, x](const Message* r) {
      Node& n = node(x);
      if (!n.join) return;
      if (n.join->reboots > 0 && r && r->ids.empty()) {
        n.join->reboots = kMaxReboots;
        finish_locate(x);
        return;
      }
      if (!r || r->ids.empty()) {
        timer(now + kRetryDelay, x, Timer::kRetryJoin);
        return;
      }
      if (lcc_mode) {
        const NodeId boot = r->ids.front();
        measure(x, boot, x, [this, x, boot](std::optional<Millis> d) {
          Node& n = node(x);
          if (!n.join) return;
          if (!d) {
            n.join->failed.push_back(boot);
            if (++n.join->boot_failures > locate_cfg.bootstrap_retries) {
              res.warnings.push_back(fmt::format("node {} bootstrap failed at {}s", x.value, to_seconds(now)));
              n.join->boot_failures = 0;
              timer(now + kRetryDelay, x, Timer::kRetryJoin);
              return;
            }
            bootstrap(x);
            return;
          }
          n.leader_dist[boot] = *d;
          auto& loc = *n.join->locate;
          exec_locate(x, n.join->reboots > 0 ? loc.on_reboot(boot, *d) : loc.on_boot_measured(boot, *d));
        });
      } else {
        flat_attach(x, r->ids);
      }
    });
  }

  void on_rendezvous(const Message& m) {
    for (NodeId f : m.ids) {
      if (f != NodeId(0)) std::erase(registry, f);
    }
    auto r = make(MsgType::kRendezvousReply, m.to, m.from);
    std::vector<NodeId> choices;
    for (NodeId c : registry) {
      const bool excluded = std::any_of(m.cands.begin(), m.cands.end(), [c](const Candidate& e) { return e.node == c; });
      if (c != m.from && !excluded) choices.push_back(c);
    }
    const std::size_t want = lcc_mode ? 1 : static_cast<std::size_t>(cfg.flat_links);
    for (std::size_t i = 0; i < want && i < choices.size(); ++i) {
      const auto j = i + rng.below(choices.size() - i);
      std::swap(choices[i], choices[j]);
      r.ids.push_back(choices[i]);
    }
    reply(m, std::move(r));
  }

  void exec_locate(NodeId x, LocateSession::Step step) {
    Node& n = node(x);
    if (std::holds_alternative<LocateSession::Done>(step)) {
      finish_locate(x);
      return;
    }
    const auto req = std::get<LocateSession::SendRequest>(step);
    auto m = make(MsgType::kLocalizationRequest, x, req.to, x);
    m.dist = req.distance;
    (void)n;
    rpc(std::move(m), kLocateTimeout, [this, x, to = req.to](const Message* r) {
      Node& n = node(x);
      if (!n.join || !n.join->locate) return;
      if (!r || r->type == MsgType::kNotALeader) {
        exec_locate(x, n.join->locate->on_request_failed(to));
        return;
      }
      for (const auto& c : r->cands) n.leader_dist[c.node] = c.distance;
      exec_locate(x, n.join->locate->on_candidates(to, r->cands));
    });
  }

  void finish_locate(NodeId x) {
    Node& n = node(x);
    auto& js = *n.join;
    const auto& out = js.locate->outcome();
    if (out.kind == LocatingOutcome::Kind::kCreateOwnCluster && !js.refused.empty() && js.reboots < kMaxReboots &&
        out.requested_count < locate_cfg.stop_c) {
      // refused everywhere it knew of: ask the rendezvous point for another leader
      ++js.reboots;
      bootstrap(x);
      return;
    }
    js.known = out.known;
    if (!js.relocate) {
      LocateRecord fresh;
      LocateRecord& rec = js.record < res.locates.size() ? res.locates[js.record] : fresh;
      rec = LocateRecord{};
      rec.node = x;
      rec.time_s = to_seconds(now);
      rec.created = out.kind == LocatingOutcome::Kind::kCreateOwnCluster;
      rec.requested = out.requested_count;
      rec.elapsed_s = to_seconds(now - js.started);
      std::optional<Millis> best;
      for (std::uint32_t i = 0; i < cfg.n; ++i) {
        const NodeId l(i);
        if (l == x || !is_leader_node(l)) continue;
        const Millis d = rtt(x, l);
        if (!best || d < *best) {
          best = d;
          rec.nearest = l;
        }
      }
      rec.nearest_distance = best.value_or(0.0);
      if (rec.created) {
        rec.correct = !best || *best > cfg.r_max_ms;
      } else {
        rec.chosen = out.leaders.front().node;
        rec.correct = rec.chosen == rec.nearest;
        for (const auto& l : out.leaders) rec.offered.push_back(l.node);
      }
      if (&rec == &fresh) {
        js.record = res.locates.size();
        res.locates.push_back(rec);
      }
    }
    if (out.kind == LocatingOutcome::Kind::kJoinClusters) {
      js.targets = out.leaders;
      try_join_next(x);
    } else {
      create_cluster(x);
    }
  }

  void try_join_next(NodeId x) {
    Node& n = node(x);
    auto& js = *n.join;
    if (js.target_idx >= js.targets.size()) {
      std::vector<NodeId> refused;
      for (const auto& t : js.targets) refused.push_back(t.node);
      js.refused.insert(js.refused.end(), refused.begin(), refused.end());
      js.targets.clear();
      js.target_idx = 0;
      exec_locate(x, js.locate->on_join_rejected(refused));
      return;
    }
    const Candidate target = js.targets[js.target_idx++];
    auto m = make(MsgType::kJoinRequest, x, target.node, x);
    m.ival = 0;
    m.dist = target.distance;
    rpc(std::move(m), kJoinTimeout, [this, x, target](const Message* r) {
      Node& n = node(x);
      if (!n.join) return;
      if (!r || r->type != MsgType::kJoinNotification) {
        try_join_next(x);
        return;
      }
      const ClusterId c = r->cluster2;
      if (n.join->relocate || overlay.link_count(x) > 0) {
        finish_cluster_join(x, target.node, c, target.distance, true);
        return;
      }
      std::vector<NodeId> boot = r->ids;
      if (std::find(boot.begin(), boot.end(), target.node) == boot.end()) boot.push_back(target.node);
      link_to_nearest(x, boot, LinkKind::kBackbone, [this, x, target, c](bool ok) {
        if (!node(x).join) return;
        finish_cluster_join(x, target.node, c, target.distance, true);
        if (!ok) schedule_repair(x, true);
      });
    });
  }

  /// Measures every candidate, then asks them nearest first for a link.
  void link_to_nearest(NodeId x, std::vector<NodeId> cands, LinkKind kind, std::function<void(bool)> done) {
    std::erase(cands, x);
    if (cands.empty()) {
      done(false);
      return;
    }
    auto results = std::make_shared<std::vector<Candidate>>();
    auto outstanding = std::make_shared<std::size_t>(cands.size());
    auto finish = std::make_shared<std::function<void(bool)>>(std::move(done));
    const NodeId session = node(x).join ? x : kNoNode;
    for (NodeId c : cands) {
      measure(x, c, session, [this, x, c, kind, results, outstanding, finish](std::optional<Millis> d) {
        if (d) results->push_back(Candidate{c, *d});
        if (--*outstanding > 0) return;
        std::sort(results->begin(), results->end(), candidate_less);
        std::vector<NodeId> order;
        for (const auto& r : *results) order.push_back(r.node);
        link_sequence(x, std::move(order), kind, *finish);
      });
    }
  }

  struct LinkSearch {
    std::vector<NodeId> order;
    std::set<NodeId> seen;
    std::size_t idx = 0;
    LinkKind kind = LinkKind::kBackbone;
    std::function<void(bool)> done;
  };

  /// Asks each node of `order` in turn; rejections may redirect the search
  /// to routed neighbours of the rejecting node, appended at the back.
  void link_sequence(NodeId x, std::vector<NodeId> order, LinkKind kind, std::function<void(bool)> done) {
    auto s = std::make_shared<LinkSearch>();
    s->seen.insert(x);
    for (NodeId o : order) {
      if (s->seen.insert(o).second) s->order.push_back(o);
    }
    s->kind = kind;
    s->done = std::move(done);
    link_search_step(x, s);
  }

  void link_search_step(NodeId x, std::shared_ptr<LinkSearch> s) {
    while (s->idx < s->order.size() && overlay.linked(x, s->order[s->idx])) ++s->idx;
    if (s->idx >= s->order.size() || s->idx >= kMaxLinkAttempts) {
      s->done(false);
      return;
    }
    const NodeId target = s->order[s->idx++];
    request_link(x, target, s->kind, kNoNode, [this, x, s](bool ok, const std::vector<NodeId>& redirect) {
      if (ok) {
        s->done(true);
        return;
      }
      if (!node(x).alive) return;
      for (NodeId r : redirect) {
        if (s->seen.insert(r).second) s->order.push_back(r);
      }
      link_search_step(x, s);
    });
  }

  void finish_cluster_join(NodeId x, NodeId leader, ClusterId c, Millis d, bool is_primary) {
    Node& n = node(x);
    if (membership(x, c)) return;
    if (is_primary) {
      for (auto& m : n.memberships) m.primary = false;
    }
    ClusterView view(x, c, leader, cfg.r_max_ms, now);
    view.set_distance_to_leader(d);
    n.memberships.emplace_back(std::move(view), is_primary);
    Membership& m = n.memberships.back();
    m.evaluated_leader = leader;
    n.leader_dist[leader] = d;
    n.gossip.touch(leader, c, true, now);
    auto ack = make(MsgType::kJoinAck, x, leader, n.join ? x : kNoNode);
    ack.pv = current_pv(x, m);
    ack.cluster = c;
    ack.cluster2 = primary_cluster(x);
    ack.ival = is_primary ? 0 : 1;
    ack.ival2 = spare_links(x);
    send(std::move(ack));
    if (is_primary) complete_join(x);
  }

  void complete_join(NodeId x) {
    Node& n = node(x);
    if (!n.join) return;
    auto js = std::move(n.join);
    if (js->record < res.locates.size()) {
      auto& rec = res.locates[js->record];
      rec.join_bytes = session_bytes[x.value] - js->bytes_at_start;
      rec.probe_bytes = session_probe_bytes[x.value] - js->probe_bytes_at_start;
      rec.completed = true;
    }
    const bool first = !n.joined;
    n.joined = true;
    if (first) start_timers(x);
    if (!lcc_mode) {
      send(make(MsgType::kRegister, x, NodeId(0)));
      return;
    }
    // extra memberships among the other in-scope leaders
    std::vector<Candidate> extra;
    for (std::size_t i = js->target_idx; i < js->targets.size(); ++i) extra.push_back(js->targets[i]);
    edge_join_sequence(x, std::move(extra), 0);
  }

  void edge_join_sequence(NodeId x, std::vector<Candidate> list, std::size_t idx) {
    Node& n = node(x);
    while (idx < list.size() && membership_with_leader(x, list[idx].node)) ++idx;
    if (idx >= list.size() || static_cast<int>(n.memberships.size()) >= cfg.edge_cap || !spare(x) ||
        is_leader_node(x)) {
      return;
    }
    const Candidate target = list[idx];
    edge_join(x, target.node, target.distance, [this, x, list = std::move(list), idx]() mutable {
      if (node(x).alive) edge_join_sequence(x, std::move(list), idx + 1);
    });
  }

  bool membership_with_leader(NodeId x, NodeId leader) {
    for (const auto& m : node(x).memberships) {
      if (m.view.leader() == leader) return true;
    }
    return false;
  }

  void edge_join(NodeId x, NodeId leader, Millis d, std::function<void()> done) {
    auto m = make(MsgType::kJoinRequest, x, leader);
    m.ival = 1;
    m.dist = d;
    m.cluster2 = primary_cluster(x);
    rpc(std::move(m), kJoinTimeout, [this, x, leader, d, done = std::move(done)](const Message* r) {
      if (!r || r->type != MsgType::kJoinNotification || !primary(x) || is_leader_node(x) ||
          static_cast<int>(node(x).memberships.size()) >= cfg.edge_cap) {
        done();
        return;
      }
      const ClusterId c = r->cluster2;
      std::vector<NodeId> boot = r->ids;
      if (std::find(boot.begin(), boot.end(), leader) == boot.end()) boot.push_back(leader);
      link_to_nearest(x, boot, LinkKind::kEdge, [this, x, leader, c, d, done](bool) {
        if (primary(x) && !is_leader_node(x) && !membership(x, c)) finish_cluster_join(x, leader, c, d, false);
        done();
      });
    });
  }

  void create_cluster(NodeId x) {
    Node& n = node(x);
    const ClusterId c(next_cluster++);
    become_leader(x, c, ClusterId{});
    auto& js = *n.join;
    std::vector<Candidate> known;
    for (const auto& k : js.known) {
      if (k.node != x) known.push_back(k);
    }
    std::sort(known.begin(), known.end(), candidate_less);
    for (std::size_t i = 0; i < known.size() && i < 2; ++i) {
      auto nc = make(MsgType::kNewCluster, x, known[i].node);
      nc.node = x;
      nc.dist = known[i].distance;
      nc.cluster = c;
      send(std::move(nc));
    }
    if (js.relocate || overlay.link_count(x) > 0) {
      complete_join(x);
      return;
    }
    std::vector<NodeId> order;
    for (const auto& k : known) order.push_back(k.node);
    if (order.empty()) order.push_back(NodeId(0));
    link_sequence(x, order, LinkKind::kBackbone, [this, x, order](bool ok) {
      if (!ok) {
        schedule_repair(x, true);
      } else if (order.size() > 1) {
        for (NodeId o : order) {
          if (!overlay.linked(x, o)) {
            if (spare(x)) request_link(x, o, LinkKind::kMesh, kNoNode, [](bool, const std::vector<NodeId>&) {});
            break;
          }
        }
      }
      complete_join(x);
    });
  }

  void flat_attach(NodeId x, std::vector<NodeId> ids) {
    link_sequence(x, ids, LinkKind::kBackbone, [this, x, ids](bool ok) {
      Node& n = node(x);
      if (!n.join) return;
      if (!ok) {
        for (NodeId i : ids) n.join->failed.push_back(i);
        timer(now + kRetryDelay, x, Timer::kRetryJoin);
        return;
      }
      for (NodeId i : ids) {
        n.gossip.touch(i, kNoCluster, false, now);
        if (!overlay.linked(x, i) && spare(x)) request_link(x, i, LinkKind::kMesh, kNoNode, [](bool, const std::vector<NodeId>&) {});
      }
      complete_join(x);
    });
  }

  // ------------------------------------------------------------ locating at leaders
  void on_localization_request(const Message& m) {
    const NodeId r = m.to;
    Node& n = node(r);
    if (!is_leader_node(r) || !n.rings) {
      reply(m, make(MsgType::kNotALeader, r, m.from));
      return;
    }
    const NodeId x = m.from;
    const auto queried = choose_queried_nodes(*n.rings, x, m.dist, cfg.locating_mode, rng);
    if (queried.empty()) {
      reply(m, make(MsgType::kCandidateList, r, x));
      return;
    }
    const std::uint64_t id = ++next_token;
    ProbeRound round;
    round.newcomer = x;
    round.token = m.token;
    round.d = m.dist;
    round.outstanding = queried.size();
    n.rounds.emplace(id, std::move(round));
    for (NodeId q : queried) {
      auto p = make(MsgType::kProbeRequest, r, q, x);
      p.node = x;
      rpc(std::move(p), kProbeTimeout, [this, r, q, id](const Message* rep) {
        Node& n = node(r);
        auto it = n.rounds.find(id);
        if (it == n.rounds.end()) return;
        auto& round = it->second;
        if (rep && rep->dist >= 0.0) {
          round.results.push_back(Candidate{q, rep->dist});
        } else if (!rep && n.rings) {
          n.rings->forget(q);
          n.leader_dist.erase(q);
        }
        if (--round.outstanding > 0) return;
        if (n.rings) record_probe_results(*n.rings, round.newcomer, round.d, round.results);
        auto list = make(MsgType::kCandidateList, r, round.newcomer, round.newcomer);
        list.cands = filter_candidates(round.results, round.d);
        list.token = round.token;
        list.reply = true;
        n.rounds.erase(it);
        send(std::move(list));
      });
    }
  }

  void on_probe_request(const Message& m) {
    const NodeId q = m.to;
    const NodeId x = m.node;
    measure(q, x, m.session, [this, m](std::optional<Millis> d) {
      auto r = make(MsgType::kProbeReply, m.to, m.from, m.session);
      r.dist = d.value_or(-1.0);
      reply(m, std::move(r));
    });
  }

  // ------------------------------------------------------------ cluster admission
  void on_join_request(const Message& m) {
    const NodeId l = m.to;
    Membership* pm = primary(l);
    auto reject = [&](int why) {
      auto r = make(MsgType::kJoinReject, l, m.from);
      r.ival = why;
      reply(m, std::move(r));
    };
    if (!pm || !pm->view.is_leader()) {
      reject(1);
      return;
    }
    const bool edge = m.ival == 1;
    if (edge) {
      const auto& set = pm->edge_members[m.cluster2];
      if (!m.cluster2.valid() || m.cluster2 == pm->view.cluster() || (!set.empty() && !set.contains(m.from))) {
        reject(3);
        return;
      }
    }
    std::erase_if(pm->pending_joins, [this](const auto& kv) { return kv.second <= now; });
    std::vector<MemberCapacity> caps;
    caps.push_back(MemberCapacity{l, node(l).fanout, node(l).fanout, 0});
    for (const auto& [id, info] : pm->view.members()) {
      if (id == l || id == m.from) continue;
      const auto it = pm->extra.find(id);
      const int fmax = it != pm->extra.end() ? it->second.fanout_max : info.pv.fanout_max;
      const int other = it != pm->extra.end() ? it->second.other : 0;
      caps.push_back(MemberCapacity{id, std::max(0, fmax - other), fmax, other});
    }
    for (const auto& [id, until] : pm->pending_joins) {
      if (id != m.from) caps.push_back(MemberCapacity{id, 0, 0, 0});
    }
    const auto decision = decide_admission(caps);
    if (decision.kind == AdmissionDecision::Kind::kReject) {
      reject(2);
      return;
    }
    if (decision.kind == AdmissionDecision::Kind::kReclaimEdge) {
      auto rc = make(MsgType::kReclaimRequest, l, decision.edge_node);
      rc.cluster = pm->view.cluster();
      send(std::move(rc));
    }
    pm->pending_joins[m.from] = now + kPendingJoinHold;
    auto r = make(MsgType::kJoinNotification, l, m.from);
    r.cluster2 = pm->view.cluster();
    std::vector<NodeId> boot;
    for (const auto& [id, ex] : pm->extra) {
      if (id != m.from && ex.spare > 0 && node(id).alive) boot.push_back(id);
    }
    for (std::size_t i = 0; i < kBootCandidates && i < boot.size(); ++i) {
      const auto j = i + rng.below(boot.size() - i);
      std::swap(boot[i], boot[j]);
      r.ids.push_back(boot[i]);
    }
    if (r.ids.empty() || spare(l)) r.ids.push_back(l);
    reply(m, std::move(r));
  }

  void on_join_ack(const Message& m) {
    const NodeId l = m.to;
    Membership* pm = membership(l, m.cluster);
    if (!pm || !pm->view.is_leader()) return;
    on_keepalive(pm->view, m.from, m.pv, now, election);
    pm->extra[m.from] = MemberExtra{m.pv.fanout_max, m.ival2, 0, m.cluster2};
    pm->pending_joins.erase(m.from);
    if (m.ival == 1) pm->edge_members[m.cluster2].insert(m.from);
  }

  void remove_member(Membership& pm, NodeId x) {
    pm.view.erase_member(x);
    pm.extra.erase(x);
    for (auto& [c, set] : pm.edge_members) set.erase(x);
    if (pm.view.migrated_set().empty() && pm.view.state() == ClusterState::kTemporary) {
      pm.view.set_state(ClusterState::kStabilized);
    }
  }

  void on_leave(const Message& m) {
    Membership* pm = membership(m.to, m.cluster);
    if (pm && pm->view.is_leader()) remove_member(*pm, m.from);
  }

  void on_reclaim(const Message& m) {
    if (!membership(m.to, m.cluster)) return;
    drop_secondary_memberships(m.to);
  }

  // ------------------------------------------------------------ keep-alive and election
  std::vector<CacheEntry> build_digest(const ClusterView& view) {
    std::vector<CacheEntry> out;
    const auto& entries = view.cache().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (i < kDigestTop || entries[i].pv.migrated || view.migrated_set().contains(entries[i].node)) {
        out.push_back(entries[i]);
      }
    }
    return out;
  }

  void keepalive_tick(NodeId x) {
    Node& n = node(x);
    timer(now + from_seconds(cfg.keepalive_s), x, Timer::kKeepAlive);
    if (!lcc_mode || !n.joined) return;
    const SimTime deadline = from_seconds(cfg.keepalive_s * cfg.leader_timeout_periods);
    std::vector<ClusterId> timed_out;
    for (auto& m : n.memberships) {
      if (m.view.is_leader()) {
        leader_keepalive(x, m);
        continue;
      }
      if (m.view.state() == ClusterState::kRecovering && now - m.recovering_since > deadline) {
        m.view.set_state(ClusterState::kTemporary);
      }
      if (now - m.view.leader_last_heard() > deadline) {
        timed_out.push_back(m.view.cluster());
        continue;
      }
      auto ka = make(MsgType::kKeepAlive, x, m.view.leader());
      ka.cluster = m.view.cluster();
      ka.cluster2 = primary_cluster(x);
      ka.pv = current_pv(x, m);
      ka.ival = spare_links(x);
      ka.ival2 = static_cast<int>(n.memberships.size()) - 1;
      send(std::move(ka));
    }
    for (ClusterId c : timed_out) leader_timeout(x, c);
  }

  void leader_keepalive(NodeId x, Membership& m) {
    const SimTime deadline = from_seconds(cfg.keepalive_s * cfg.leader_timeout_periods);
    on_keepalive(m.view, x, current_pv(x, m), now, election);
    std::vector<NodeId> gone;
    for (const auto& [id, info] : m.view.members()) {
      if (id != x && now - info.last_heard > deadline) gone.push_back(id);
    }
    for (NodeId g : gone) remove_member(m, g);
    if (!gone.empty()) m.view.rebuild_cache(election);
    if (m.view.migrated_set().empty() && m.view.state() == ClusterState::kTemporary) {
      m.view.set_state(ClusterState::kStabilized);
    }
    const auto digest = build_digest(m.view);
    for (const auto& [id, info] : m.view.members()) {
      if (id == x) continue;
      auto ka = make(MsgType::kKeepAlive, x, id);
      ka.cluster = m.view.cluster();
      ka.ival = -1;
      ka.digest = digest;
      ka.pv = m.view.own_pv();
      send(std::move(ka));
    }
  }

  void on_keepalive_msg(const Message& m) {
    const NodeId y = m.to;
    Membership* mem = membership(y, m.cluster);
    if (!mem) return;
    if (m.ival == -1) {
      member_heard_leader(y, *mem, m);
      return;
    }
    if (!mem->view.is_leader()) return;
    on_keepalive(mem->view, m.from, m.pv, now, election);
    mem->extra[m.from] = MemberExtra{m.pv.fanout_max, m.ival, m.ival2, m.cluster2};
    mem->pending_joins.erase(m.from);
  }

  void member_heard_leader(NodeId y, Membership& mem, const Message& m) {
    if (mem.view.is_leader()) return;
    if (m.from != mem.view.leader()) {
      if (mem.view.suspected_leaders().contains(m.from)) return;
      mem.view.set_leader(m.from, now);
    }
    mem.view.touch_leader(now);
    const Millis d = rtt(y, m.from);
    node(y).leader_dist[m.from] = d;
    on_migration_detected(mem.view, d);
    mem.evaluated_leader = m.from;
    mem.view.apply_digest(m.digest, now, election);
    if (mem.view.migrated_set().empty() && mem.view.state() == ClusterState::kTemporary) {
      mem.view.set_state(ClusterState::kStabilized);
    }
    if (!mem.view.own_pv().migrated) {
      mem.last_migrated = mem.view.migrated_set();
      return;
    }
    if (!mem.primary) {
      // an edge membership that drifted out of scope is simply dropped
      auto lv = make(MsgType::kLeave, y, mem.view.leader());
      lv.cluster = mem.view.cluster();
      send(std::move(lv));
      const ClusterId c = mem.view.cluster();
      std::erase_if(node(y).memberships, [c](const Membership& x) { return x.view.cluster() == c; });
      return;
    }
    const bool stable = mem.view.migrated_set() == mem.last_migrated;
    mem.last_migrated = mem.view.migrated_set();
    if (!stable || node(y).recovery || mem.view.state() != ClusterState::kTemporary) return;
    const auto ranked = rank_migrated(mem.view);
    if (!ranked.empty() && ranked.front() == y) start_recovery(y, mem.view.cluster());
  }

  void leader_timeout(NodeId x, ClusterId c) {
    Membership* m = membership(x, c);
    if (!m) return;
    const auto action = on_leader_timeout(m->view, now);
    switch (action.kind) {
      case PromotionAction::Kind::kSelfPromote: {
        if (!m->primary) {
          for (auto& o : node(x).memberships) o.primary = false;
          m->primary = true;
        }
        drop_secondary_memberships(x);
        m = membership(x, c);
        auto& n = node(x);
        if (!n.rings) {
          n.rings = std::make_unique<LocatingSystem>(x, RingLevels(cfg.alpha_ms, cfg.max_level),
                                                     static_cast<std::size_t>(cfg.k_per_level));
          for (const auto& [l, d] : n.leader_dist) {
            if (l != x) n.rings->observe(l, d, now);
          }
        }
        send(make(MsgType::kRegister, x, NodeId(0)));
        m->view.set_state(ClusterState::kStabilized);
        m->view.mutable_migrated_set().clear();
        m->view.own_pv().migrated = false;
        leader_keepalive(x, *m);
        link_new_leader(x);
        return;
      }
      case PromotionAction::Kind::kAwaitLeader: return;
      case PromotionAction::Kind::kRelocate: {
        const bool was_primary = m->primary;
        std::erase_if(node(x).memberships, [c](const Membership& o) { return o.view.cluster() == c; });
        if (!was_primary) return;
        if (!node(x).memberships.empty()) {
          node(x).memberships.front().primary = true;
          return;
        }
        if (!node(x).join) start_join(x, true);
        return;
      }
    }
  }

  /// A freshly promoted leader adds one mesh link towards the nearest other
  /// leader it knows, to join the top-level mesh.
  void link_new_leader(NodeId x) {
    if (!spare(x)) return;
    std::vector<Candidate> known;
    for (const auto& [l, d] : node(x).leader_dist) {
      if (l != x && !overlay.linked(x, l)) known.push_back(Candidate{l, d});
    }
    if (known.empty()) return;
    std::sort(known.begin(), known.end(), candidate_less);
    request_link(x, known.front().node, LinkKind::kMesh, kNoNode, [](bool, const std::vector<NodeId>&) {});
  }

  void on_new_cluster(const Message& m) {
    const NodeId y = m.to;
    Node& n = node(y);
    const NodeId l = m.node;
    if (l == y) return;
    if (m.dist >= 0.0) {
      n.leader_dist[l] = m.dist;
      if (n.rings) n.rings->observe(l, m.dist, now);
    }
    if (is_leader_node(y) && m.ival == 0) {
      Membership* pm = primary(y);
      for (const auto& [id, info] : pm->view.members()) {
        if (id == y) continue;
        auto fw = make(MsgType::kNewCluster, y, id);
        fw.node = l;
        fw.cluster = m.cluster;
        fw.ival = 1;
        send(std::move(fw));
      }
      return;
    }
    if (m.ival != 1 || !n.joined || !primary(y) || is_leader_node(y)) return;
    if (static_cast<int>(n.memberships.size()) >= cfg.edge_cap || !spare(y) || membership(y, m.cluster)) return;
    measure(y, l, kNoNode, [this, y, l](std::optional<Millis> d) {
      if (!d) return;
      node(y).leader_dist[l] = *d;
      if (*d > cfg.r_max_ms || membership_with_leader(y, l)) return;
      if (static_cast<int>(node(y).memberships.size()) >= cfg.edge_cap || !spare(y)) return;
      edge_join(y, l, *d, [] {});
    });
  }

  // ------------------------------------------------------------ recovery of migrated nodes
  void start_recovery(NodeId y, ClusterId old) {
    Membership* m = membership(y, old);
    if (!m) return;
    auto ranked = rank_migrated(m->view);
    std::erase(ranked, y);
    const NodeId prev = m->view.leader();
    run_recovery_leader(y, old, prev, std::move(ranked));
  }

  void run_recovery_leader(NodeId y, ClusterId old, NodeId prev, std::vector<NodeId> todo) {
    const ClusterId c(next_cluster++);
    become_leader(y, c, old);
    link_new_leader(y);
    auto run = std::make_unique<RecoveryRun>();
    run->old_cluster = old;
    run->cluster = c;
    run->prev_leader = prev;
    run->todo = std::move(todo);
    node(y).recovery = std::move(run);
    recovery_step(y);
  }

  void recovery_step(NodeId y) {
    Node& n = node(y);
    auto& run = *n.recovery;
    if (run.idx < run.todo.size()) {
      const NodeId t = run.todo[run.idx++];
      auto rq = make(MsgType::kRecoveringRequest, y, t);
      rq.cluster = run.cluster;
      rq.cluster2 = run.old_cluster;
      rq.node = y;
      rq.ival = 0;
      rpc(std::move(rq), kJoinTimeout, [this, y, t](const Message* r) {
        Node& n = node(y);
        if (!n.recovery) return;
        auto& run = *n.recovery;
        if (r && r->ival == 1) {
          run.joined.push_back(t);
          if (Membership* m = membership(y, run.cluster)) {
            on_keepalive(m->view, t, r->pv, now, election);
            m->extra[t] = MemberExtra{r->pv.fanout_max, r->ival2, 0, run.cluster};
          }
        } else if (r && r->ival == 0) {
          run.negatives.push_back(t);
        }
        recovery_step(y);
      });
      return;
    }
    auto split = make(MsgType::kSplitNotice, y, run.prev_leader);
    split.cluster2 = run.old_cluster;
    split.ids = run.joined;
    split.ids.push_back(y);
    send(std::move(split));
    if (!run.negatives.empty()) {
      auto hand = make(MsgType::kRecoveringRequest, y, run.negatives.front());
      hand.cluster2 = run.old_cluster;
      hand.node = run.prev_leader;
      hand.ival = 1;
      hand.ids.assign(run.negatives.begin() + 1, run.negatives.end());
      send(std::move(hand));
    }
    n.recovery.reset();
  }

  void on_recovering_request(const Message& m) {
    const NodeId y = m.to;
    Membership* mem = membership(y, m.cluster2);
    if (m.ival == 1) {
      if (!mem || node(y).recovery || mem->view.is_leader()) return;
      run_recovery_leader(y, m.cluster2, m.node, m.ids);
      return;
    }
    if (!mem || !mem->view.own_pv().migrated || mem->view.is_leader()) {
      auto r = make(MsgType::kRecoveringAck, y, m.from);
      r.ival = 2;
      reply(m, std::move(r));
      return;
    }
    mem->view.set_state(ClusterState::kRecovering);
    mem->recovering_since = now;
    measure(y, m.node, kNoNode, [this, m, y](std::optional<Millis> d) {
      auto r = make(MsgType::kRecoveringAck, y, m.from);
      Membership* mem = membership(y, m.cluster2);
      if (!d || !mem) {
        r.ival = 2;
        reply(m, std::move(r));
        return;
      }
      if (*d <= cfg.r_max_ms) {
        const bool was_primary = mem->primary;
        ClusterView view(y, m.cluster, m.node, cfg.r_max_ms, now);
        view.set_distance_to_leader(*d);
        *mem = Membership(std::move(view), was_primary);
        mem->evaluated_leader = m.node;
        node(y).leader_dist[m.node] = *d;
        r.ival = 1;
        r.pv = current_pv(y, *mem);
        r.ival2 = spare_links(y);
      } else {
        r.ival = 0;
      }
      reply(m, std::move(r));
    });
  }

  void on_split_notice(const Message& m) {
    Membership* pm = membership(m.to, m.cluster2);
    if (!pm || !pm->view.is_leader()) return;
    for (NodeId id : m.ids) remove_member(*pm, id);
    pm->view.rebuild_cache(election);
    node(m.to).leader_dist[m.from] = rtt(m.to, m.from);
  }

  // ------------------------------------------------------------ gossip
  GossipEntry self_entry(NodeId x) {
    return GossipEntry{x, primary_cluster(x), is_leader_node(x), 0.0, now};
  }

  std::vector<GossipEntry> gossip_payload(NodeId x, NodeId exclude) {
    Node& n = node(x);
    auto entries = n.gossip.sample(rng, static_cast<std::size_t>(cfg.gossip_g), exclude);
    for (auto& e : entries) {
      const auto it = n.leader_dist.find(e.node);
      e.distance = it != n.leader_dist.end() ? it->second : -1.0;
    }
    entries.push_back(self_entry(x));
    return entries;
  }

  void absorb_gossip(NodeId x, NodeId from, const std::vector<GossipEntry>& entries) {
    Node& n = node(x);
    n.gossip.merge(entries, now);
    n.gossip.record_reply(from);
    if (!n.rings) return;
    int probes = 0;
    for (const auto& e : entries) {
      if (e.node == x) continue;
      if (e.distance >= 0.0 && n.rings->contains(from)) n.rings->learn(from, e.node, e.distance);
      if (!e.leader || n.rings->contains(e.node) || probes >= kRingProbesPerMerge) continue;
      ++probes;
      const NodeId l = e.node;
      measure(x, l, kNoNode, [this, x, l](std::optional<Millis> d) {
        Node& n = node(x);
        if (!d || !n.rings) return;
        n.leader_dist[l] = *d;
        n.rings->observe(l, *d, now);
      });
    }
  }

  void gossip_tick(NodeId x) {
    Node& n = node(x);
    timer(now + from_seconds(cfg.gossip_s), x, Timer::kGossip);
    if (!n.joined) return;
    if (n.rings) refresh_ring(x);
    const auto peer = n.gossip.pick_peer(rng);
    if (!peer) return;
    auto g = make(MsgType::kGossip, x, *peer);
    g.entries = gossip_payload(x, *peer);
    rpc(std::move(g), kPingTimeout, [this, x, p = *peer](const Message* r) {
      Node& n = node(x);
      if (!r) {
        if (n.gossip.record_miss(p, kGossipMissThreshold)) n.leader_dist.erase(p);
        return;
      }
      absorb_gossip(x, p, r->entries);
    });
  }

  void refresh_ring(NodeId x) {
    Node& n = node(x);
    const auto members = n.rings->members();
    if (members.empty()) return;
    const NodeId l = members[rng.below(members.size())].id;
    measure(x, l, kNoNode, [this, x, l](std::optional<Millis> d) {
      Node& n = node(x);
      if (!n.rings) return;
      if (!d) {
        n.rings->forget(l);
        n.leader_dist.erase(l);
        return;
      }
      n.rings->observe(l, *d, now);
    });
  }

  void on_gossip(const Message& m) {
    const NodeId y = m.to;
    auto r = make(MsgType::kGossipReply, y, m.from);
    r.entries = gossip_payload(y, m.from);
    reply(m, std::move(r));
    absorb_gossip(y, m.from, m.entries);
  }

  // ------------------------------------------------------------ mesh links
  using LinkDone = std::function<void(bool, const std::vector<NodeId>&)>;

  void request_link(NodeId x, NodeId target, LinkKind kind, NodeId lost, LinkDone done) {
    Node& n = node(x);
    ++n.pending_out;
    auto m = make(MsgType::kLinkRequest, x, target, n.join ? x : kNoNode);
    m.link_kind = kind;
    m.node = lost;
    const SimTime timeout = from_ms(rtt(x, target)) + from_ms(500);
    rpc(std::move(m), timeout, [this, x, target, kind, done = std::move(done)](const Message* r) {
      Node& n = node(x);
      --n.pending_out;
      if (!r || r->type != MsgType::kLinkAccept) {
        done(false, r ? r->ids : std::vector<NodeId>{});
        return;
      }
      done(establish(x, target, *r, kind), {});
    });
  }

  bool establish(NodeId x, NodeId a, const Message& acc, LinkKind kind) {
    Node& n = node(x);
    node(a).reservations.erase(x);
    if (!node(a).alive || overlay.linked(x, a)) return false;
    NodeId old_up;
    if (owned_kind(kind)) {
      if (auto u = overlay.upstream(x)) old_up = *u;
    }
    NodeId victim;
    if (kind == LinkKind::kRefine && !overlay.has_spare(x)) {
      const auto& route = n.routing.route();
      if (route.valid && old_up.valid() && route.parent == old_up) victim = old_up;
      else if (auto w = worst_redundant_link(overlay, n.routing)) victim = *w;
      if (!victim.valid()) return false;
      drop_link(x, victim, false);
    }
    if (!overlay.add_link(x, a, rtt(x, a), owned_kind(kind) ? x : kNoNode)) return false;
    if (old_up.valid() && old_up != a && overlay.linked(x, old_up)) overlay.set_owner(x, old_up, kNoNode);
    if (!acc.advert.path.empty()) n.routing.on_advert(a, acc.advert);
    for (NodeId g : acc.ids) {
      if (g != x) n.gossip.touch(g, kNoCluster, false, now);
    }
    send_advert(x, a);
    update_route(x, false);
    if (kind == LinkKind::kRefine && !victim.valid()) {
      if (auto w = worst_redundant_link(overlay, n.routing)) drop_link(x, *w, true);
    }
    return true;
  }

  /// Routed neighbours a rejected requester may try instead: children
  /// first, never the requester or the node it lost.
  std::vector<NodeId> redirect_list(NodeId a, NodeId x, NodeId lost) {
    std::vector<NodeId> out;
    const Node& n = node(a);
    auto add = [&](NodeId c) {
      if (out.size() >= kMaxRedirects || c == x || c == lost) return;
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    };
    for (NodeId c : n.routing.children()) add(c);
    if (sticky) return out;
    for (const auto& adj : overlay.neighbors(a)) {
      const Advert* adv = n.routing.advert_of(adj.node);
      if (adv && !adv->path.empty() && std::find(adv->path.begin(), adv->path.end(), x) == adv->path.end()) {
        add(adj.node);
      }
    }
    return out;
  }

  void on_link_request(const Message& m) {
    const NodeId a = m.to;
    const NodeId x = m.from;
    Node& n = node(a);
    auto reject = [&] {
      auto r = make(MsgType::kLinkReject, a, x);
      r.ids = redirect_list(a, x, m.node);
      reply(m, std::move(r));
    };
    if (!n.joined || overlay.linked(a, x) || !overlay.contains(a)) {
      reject();
      return;
    }
    n.reservations.erase(x);
    const LinkKind kind = m.link_kind;
    if (owned_kind(kind)) {
      const auto& route = n.routing.route();
      if (!route.valid || n.routing.path_contains(x) || (m.node.valid() && n.routing.path_contains(m.node))) {
        reject();
        return;
      }
    }
    if (!spare(a)) {
      if (!owned_kind(kind)) {
        reject();
        return;
      }
      const auto victim = worst_redundant_link(overlay, n.routing);
      if (victim) {
        drop_link(a, *victim, true);
      } else if (kind == LinkKind::kRefine && m.node.valid() && m.node != x && overlay.linked(a, m.node) &&
                 is_child(a, m.node)) {
        // the displaced child is handed to the requester
        overlay.remove_link(a, m.node);
        n.routing.forget(m.node);
        auto d = make(MsgType::kLinkDrop, a, m.node);
        d.node = x;
        send(std::move(d));
      } else {
        reject();
        return;
      }
      if (!spare(a)) {
        reject();
        return;
      }
    }
    n.reservations[x] = now + kReservationHold;
    auto r = make(MsgType::kLinkAccept, a, x);
    if (auto adv = n.routing.advert()) r.advert = std::move(*adv);
    for (const auto& adj : overlay.neighbors(a)) {
      if (r.ids.size() >= 8) break;
      if (adj.node != x) r.ids.push_back(adj.node);
    }
    r.cluster = primary_cluster(a);
    reply(m, std::move(r));
  }

  void drop_link(NodeId x, NodeId y, bool reroute) {
    if (!overlay.linked(x, y)) return;
    overlay.remove_link(x, y);
    node(x).routing.forget(y);
    send(make(MsgType::kLinkDrop, x, y));
    if (reroute) update_route(x, false);
  }

  void on_link_drop(const Message& m) {
    const NodeId y = m.to;
    if (overlay.contains(y) && overlay.linked(y, m.from)) overlay.remove_half(y, m.from);
    node(y).routing.forget(m.from);
    if (m.node.valid() && m.node != y && node(y).joined && !overlay.linked(y, m.node)) {
      request_link(y, m.node, LinkKind::kRepair, kNoNode, [this, y](bool ok, const std::vector<NodeId>&) {
        if (!ok) update_route(y, true);
      });
      return;
    }
    update_route(y, false);
  }

  bool is_child(NodeId a, NodeId y) {
    const auto kids = node(a).routing.children();
    return std::find(kids.begin(), kids.end(), y) != kids.end();
  }

  void neighbor_down(NodeId y, NodeId x) {
    Node& n = node(y);
    const bool was_parent = n.routing.route().valid && n.routing.route().parent == x;
    if (overlay.linked(y, x)) overlay.remove_half(y, x);
    n.routing.on_neighbor_lost(x);
    n.gossip.erase(x);
    n.leader_dist.erase(x);
    if (n.rings) n.rings->forget(x);
    n.reservations.erase(x);
    if (was_parent) {
      n.repair.lost = x;
      n.repair.lost_at = now;
    }
    update_route(y, was_parent);
  }

  // ------------------------------------------------------------ routing
  void send_advert(NodeId x, NodeId to) {
    auto adv = node(x).routing.advert();
    if (adv) {
      auto m = make(MsgType::kRouteAdvert, x, to);
      m.advert = std::move(*adv);
      send(std::move(m));
    } else {
      send(make(MsgType::kRouteWithdraw, x, to));
    }
  }

  void do_announce(NodeId x) {
    Node& n = node(x);
    const auto adv = n.routing.advert();
    if (!adv) return;
    for (const auto& adj : overlay.neighbors(x)) {
      auto m = make(MsgType::kRouteAdvert, x, adj.node);
      m.advert = *adv;
      send(std::move(m));
    }
    n.last_announce = now;
    n.announced = true;
    n.advert_dirty = false;
  }

  void announce(NodeId x) {
    Node& n = node(x);
    if (!n.routing.route().valid) {
      if (n.announced) {
        for (const auto& adj : overlay.neighbors(x)) send(make(MsgType::kRouteWithdraw, x, adj.node));
        n.announced = false;
      }
      return;
    }
    const SimTime interval = from_seconds(cfg.advert_interval_s);
    // a restored route is announced at once; only changes to a live route are paced
    if (!n.announced || now >= n.last_announce + interval) {
      do_announce(x);
    } else if (!n.announce_scheduled) {
      n.announce_scheduled = true;
      timer(n.last_announce + interval, x, Timer::kAnnounce);
    }
  }

  void update_route(NodeId x, bool lost_parent) {
    Node& n = node(x);
    if (n.routing.is_source()) return;
    const auto& links = overlay.neighbors(x);
    const bool was_valid = n.routing.route().valid;
    std::vector<NodeId> before_path = was_valid ? n.routing.route().path : std::vector<NodeId>{};
    const bool changed = sticky ? n.routing.follow(overlay.upstream(x), links) : n.routing.recompute(links);
    if (!changed) {
      if (!n.routing.route().valid && lost_parent) schedule_repair(x, true);
      return;
    }
    last_route_change = now;
    if (was_valid) n.last_path = std::move(before_path);
    n.advert_dirty = true;
    announce(x);
    if (!n.routing.route().valid && n.joined) {
      // a stale detour that collapses right after losing the parent is still a direct loss
      const bool relost = n.repair.lost_at > 0 && now - n.repair.lost_at < from_seconds(cfg.advert_interval_s);
      const bool direct = lost_parent || relost || (sticky && !overlay.upstream(x));
      schedule_repair(x, direct);
    }
  }

  void schedule_repair(NodeId x, bool direct) {
    Node& n = node(x);
    if (n.repair.active || n.repair.scheduled) return;
    n.repair.scheduled = true;
    const SimTime delay = direct ? 0 : (sticky ? kStickyRepairDelay : kIndirectRepairDelay);
    timer(now + delay, x, Timer::kRepair);
  }

  // ------------------------------------------------------------ repair
  void start_repair(NodeId x) {
    Node& n = node(x);
    auto& rp = n.repair;
    rp.active = true;
    rp.list.clear();
    rp.idx = 0;
    rp.bfs.clear();
    rp.ancestors.clear();
    rp.ancestor_idx = 0;
    rp.tried.clear();
    rp.tried.insert(x);
    if (rp.lost.valid()) rp.tried.insert(rp.lost);
    if (sticky) {
      // grandparent first, then further up the old path
      const auto& p = n.last_path;
      if (p.size() >= 3) {
        for (std::size_t i = p.size() - 2; i-- > 0;) rp.ancestors.push_back(p[i]);
      }
    }
    std::vector<NodeId> list;
    if (lcc_mode) {
      if (const Membership* pm = primary(x)) {
        for (const auto& e : pm->view.cache().entries()) list.push_back(e.node);
      }
      std::vector<Candidate> leaders;
      for (const auto& [l, d] : n.leader_dist) leaders.push_back(Candidate{l, d});
      std::sort(leaders.begin(), leaders.end(), candidate_less);
      for (const auto& c : leaders) list.push_back(c.node);
    }
    std::vector<NodeId> view;
    for (const auto& e : n.gossip.entries()) view.push_back(e.node);
    for (std::size_t i = 0; i + 1 < view.size(); ++i) std::swap(view[i], view[i + rng.below(view.size() - i)]);
    list.insert(list.end(), view.begin(), view.end());
    list.push_back(NodeId(0));
    rp.list = std::move(list);
    next_repair(x);
  }

  void next_repair(NodeId x) {
    Node& n = node(x);
    auto& rp = n.repair;
    if (!rp.active) return;
    if (n.routing.route().valid) {
      rp.active = false;
      return;
    }
    NodeId target;
    while (!target.valid()) {
      NodeId c;
      if (sticky && rp.ancestor_idx < rp.ancestors.size() && rp.bfs.empty()) {
        c = rp.ancestors[rp.ancestor_idx++];
      } else if (!rp.bfs.empty()) {
        c = rp.bfs.front();
        rp.bfs.pop_front();
      } else if (rp.idx < rp.list.size()) {
        c = rp.list[rp.idx++];
      } else {
        break;
      }
      if (rp.tried.contains(c) || overlay.linked(x, c)) continue;
      rp.tried.insert(c);
      target = c;
    }
    if (!target.valid()) {
      rp.active = false;
      schedule_repair(x, false);
      return;
    }
    if (!spare(x)) {
      if (auto w = worst_redundant_link(overlay, n.routing)) drop_link(x, *w, false);
    }
    if (!spare(x)) {
      rp.active = false;
      schedule_repair(x, false);
      return;
    }
    request_link(x, target, LinkKind::kRepair, rp.lost, [this, x](bool ok, const std::vector<NodeId>& redirect) {
      Node& n = node(x);
      if (ok) {
        n.repair.active = false;
        n.repair.lost = kNoNode;
        return;
      }
      for (NodeId c : redirect) n.repair.bfs.push_back(c);
      next_repair(x);
    });
  }

  // ------------------------------------------------------------ refinement
  void refine_tick(NodeId x) {
    Node& n = node(x);
    timer(now + from_seconds(cfg.rt_s), x, Timer::kRefine);
    if (!n.joined || n.refining || !n.routing.route().valid) return;
    std::vector<NodeId> pool_nodes;
    auto consider = [&](NodeId c) {
      if (c == x || !c.valid() || overlay.linked(x, c)) return;
      if (std::find(pool_nodes.begin(), pool_nodes.end(), c) == pool_nodes.end()) pool_nodes.push_back(c);
    };
    int scope = 0;
    ClusterId scope_cluster = kNoCluster;
    if (lcc_mode) {
      if (is_leader_node(x)) {
        scope = 2;
        if (n.rings) {
          for (const auto& r : n.rings->members()) consider(r.id);
        }
      } else if (const Membership* pm = primary(x)) {
        scope = 1;
        scope_cluster = pm->view.cluster();
        for (const auto& e : n.gossip.entries()) {
          if (e.cluster == scope_cluster) consider(e.node);
        }
        for (const auto& e : pm->view.cache().entries()) consider(e.node);
        consider(pm->view.leader());
      }
    } else {
      for (const auto& e : n.gossip.entries()) consider(e.node);
    }
    if (pool_nodes.empty()) return;
    const NodeId c = pool_nodes[rng.below(pool_nodes.size())];
    n.refining = true;
    auto probe = make(MsgType::kRefineProbe, x, c);
    probe.ival = scope;
    probe.cluster = scope_cluster;
    rpc(std::move(probe), kPingTimeout, [this, x, c](const Message* r) {
      Node& n = node(x);
      if (!r) {
        n.refining = false;
        n.gossip.record_miss(c, kGossipMissThreshold);
        return;
      }
      RefineCandidate cand{c, r->advert.distance, r->advert.path, rtt(x, c)};
      const auto& route = n.routing.route();
      const auto verdict = evaluate_refinement(x, route.distance, route.valid, cand, cfg.improvement_epsilon_ms);
      if (verdict == RefineVerdict::kSwitch && r->ival == 0 && !r->cands.empty() && !overlay.linked(x, c) &&
          overlay.link_count(x) < static_cast<std::size_t>(overlay.budget(x))) {
        try_insertion(x, c, cand.root_distance + cand.link_cost, cand.link_cost, r->cands);
        return;
      }
      if (verdict != RefineVerdict::kSwitch || r->ival == 0 || overlay.linked(x, c)) {
        n.refining = false;
        return;
      }
      request_link(x, c, LinkKind::kRefine, kNoNode, [this, x](bool, const std::vector<NodeId>&) {
        node(x).refining = false;
      });
    });
  }

  /// Full candidate c: take the slot of a child that loses at most epsilon
  /// by hanging under x instead.
  void try_insertion(NodeId x, NodeId c, Millis via_c, Millis cost_c, std::vector<Candidate> kids) {
    std::erase_if(kids, [&](const Candidate& k) { return k.node == x || node(x).routing.path_contains(k.node); });
    if (kids.empty()) {
      node(x).refining = false;
      return;
    }
    struct Pick {
      std::size_t left;
      NodeId child;
      Millis loss = std::numeric_limits<Millis>::infinity();
    };
    auto pick = std::make_shared<Pick>(Pick{kids.size(), kNoNode});
    for (const auto& k : kids) {
      measure(x, k.node, kNoNode, [this, x, c, via_c, cost_c, k, pick](std::optional<Millis> d) {
        if (d) {
          const Millis loss = cost_c + *d - k.distance;
          if (loss < pick->loss) {
            pick->loss = loss;
            pick->child = k.node;
          }
        }
        if (--pick->left > 0) return;
        Node& n = node(x);
        const auto& route = n.routing.route();
        const NodeId y = pick->child;
        if (!y.valid() || !route.valid || overlay.linked(x, c) || n.routing.path_contains(y) ||
            overlay.link_count(x) >= static_cast<std::size_t>(overlay.budget(x)) ||
            pick->loss > cfg.improvement_epsilon_ms) {
          n.refining = false;
          return;
        }
        n.reservations[y] = now + kReservationHold;
        request_link(x, c, LinkKind::kRefine, y, [this, x, y](bool ok, const std::vector<NodeId>&) {
          node(x).refining = false;
          if (!ok) node(x).reservations.erase(y);
        });
      });
    }
  }

  /// Whether y is known to c as inside the requester's refinement scope.
  bool in_refine_scope(NodeId c, NodeId y, int scope, ClusterId cluster) {
    if (scope == 0) return true;
    const Node& n = node(c);
    const GossipEntry* e = n.gossip.find(y);
    if (scope == 2) return (e && e->leader) || (n.rings && n.rings->contains(y));
    if (e && e->cluster == cluster) return true;
    const Membership* pm = membership(c, cluster);
    return pm && (pm->view.members().contains(y) || pm->view.leader() == y);
  }

  void on_refine_probe(const Message& m) {
    const NodeId c = m.to;
    Node& n = node(c);
    auto r = make(MsgType::kRefineReply, c, m.from);
    if (auto adv = n.routing.advert()) r.advert = std::move(*adv);
    r.ival = n.joined && (spare(c) || worst_redundant_link(overlay, n.routing)) ? 1 : 0;
    if (r.ival == 0) {
      for (NodeId y : n.routing.children()) {
        if (y == m.from || r.cands.size() >= kRefineHints || !in_refine_scope(c, y, m.ival, m.cluster)) continue;
        if (const LinkInfo* l = overlay.link(c, y)) r.cands.push_back(Candidate{y, l->cost});
      }
    }
    reply(m, std::move(r));
  }

  // ------------------------------------------------------------ dispatch
  void deliver(const Message& m) {
    if (m.reply) {
      Node& n = node(m.to);
      auto it = n.pending.find(m.token);
      if (it == n.pending.end()) return;
      auto cb = std::move(it->second);
      n.pending.erase(it);
      cb(&m);
      return;
    }
    switch (m.type) {
      case MsgType::kRendezvousRequest: on_rendezvous(m); return;
      case MsgType::kRegister:
        if (std::find(registry.begin(), registry.end(), m.from) == registry.end()) registry.push_back(m.from);
        return;
      case MsgType::kPing: reply(m, make(MsgType::kPong, m.to, m.from)); return;
      case MsgType::kLocalizationRequest: on_localization_request(m); return;
      case MsgType::kProbeRequest: on_probe_request(m); return;
      case MsgType::kJoinRequest: on_join_request(m); return;
      case MsgType::kJoinAck: on_join_ack(m); return;
      case MsgType::kLeave: on_leave(m); return;
      case MsgType::kReclaimRequest: on_reclaim(m); return;
      case MsgType::kKeepAlive: on_keepalive_msg(m); return;
      case MsgType::kNewCluster: on_new_cluster(m); return;
      case MsgType::kRecoveringRequest: on_recovering_request(m); return;
      case MsgType::kSplitNotice: on_split_notice(m); return;
      case MsgType::kGossip: on_gossip(m); return;
      case MsgType::kRouteAdvert: {
        const NodeId y = m.to;
        if (!overlay.contains(y) || !overlay.linked(y, m.from)) return;
        node(y).routing.on_advert(m.from, m.advert);
        update_route(y, false);
        return;
      }
      case MsgType::kRouteWithdraw: {
        const NodeId y = m.to;
        if (!overlay.contains(y) || !overlay.linked(y, m.from)) return;
        const bool was_parent = node(y).routing.route().valid && node(y).routing.route().parent == m.from;
        node(y).routing.on_withdraw(m.from);
        update_route(y, was_parent && sticky);
        return;
      }
      case MsgType::kLinkRequest: on_link_request(m); return;
      case MsgType::kLinkDrop: on_link_drop(m); return;
      case MsgType::kRefineProbe: on_refine_probe(m); return;
      default: return;
    }
  }

  // ------------------------------------------------------------ observation
  DeliveryTree delivery_tree() const {
    std::vector<NodeId> parent(cfg.n, kNoNode);
    std::vector<bool> present(cfg.n, false);
    for (std::uint32_t i = 0; i < cfg.n; ++i) {
      const Node& n = nodes[i];
      if (!n.alive) continue;
      present[i] = true;
      if (n.routing.route().valid) parent[i] = n.routing.route().parent;
    }
    return derive_delivery_tree(NodeId(0), parent, present, [this](NodeId p, NodeId c) {
      return nodes[p.value].alive && overlay.linked(p, c) && overlay.linked(c, p);
    });
  }

  std::size_t cluster_count() const {
    std::size_t k = 0;
    for (std::uint32_t i = 0; i < cfg.n; ++i) {
      if (is_leader_node(NodeId(i))) ++k;
    }
    return k;
  }

  void snapshot(std::size_t k) {
    MetricSnapshot s;
    s.time_s = to_seconds(now);
    const DeliveryTree tree = delivery_tree();
    std::vector<bool> receivers(cfg.n, false);
    for (std::uint32_t i = 0; i < cfg.n; ++i) {
      if (nodes[i].alive && nodes[i].joined) {
        receivers[i] = true;
        ++s.joined_nodes;
      }
    }
    const auto a = ardp(tree, topo, NodeId(0), receivers);
    s.ardp = a.ardp;
    s.ardp_trimmed = a.ardp_trimmed;
    s.connected_fraction = a.connected_fraction;
    if (topo.has_hop_paths()) {
      const auto st = link_stress(tree, topo);
      s.stress_mean = st.mean;
      s.stress_max = st.max;
    } else {
      s.stress_mean = s.stress_max = std::numeric_limits<double>::quiet_NaN();
    }
    const auto w = acc.window(k);
    s.live_nodes = w.live_nodes;
    s.adjustments_per_node_per_hour = w.adjustments_per_node_per_hour;
    s.control_kbps_per_node = w.control_kbps_per_node;
    s.clusters = lcc_mode ? cluster_count() : 0;
    res.snapshots.push_back(s);
    if (now - last_route_change >= kQuiescence) {
      ++res.invariant_checks;
      const auto v = check_invariants(tree);
      res.invariant_violations += v.size();
      for (const auto& msg : v) {
        if (res.violation_samples.size() < kMaxViolationSamples) {
          res.violation_samples.push_back(fmt::format("t={}s {}", s.time_s, msg));
        }
      }
    }
  }

  std::vector<std::string> check_invariants(const DeliveryTree& tree) const {
    std::vector<std::string> out;
    for (std::uint32_t i = 0; i < cfg.n; ++i) {
      const NodeId x(i);
      const Node& n = nodes[i];
      if (!n.alive || !overlay.contains(x)) continue;
      if (static_cast<int>(overlay.link_count(x)) > overlay.budget(x)) {
        out.push_back(fmt::format("degree: node {} holds {} links over budget {}", i, overlay.link_count(x),
                                  overlay.budget(x)));
      }
      for (const auto& adj : overlay.neighbors(x)) {
        if (nodes[adj.node.value].alive && !overlay.linked(adj.node, x)) {
          out.push_back(fmt::format("link: {}-{} is one-sided", i, adj.node.value));
        }
      }
      const auto& route = n.routing.route();
      if (route.valid) {
        std::vector<NodeId> p = route.path;
        std::sort(p.begin(), p.end());
        if (std::adjacent_find(p.begin(), p.end()) != p.end()) {
          out.push_back(fmt::format("copy: node {} route path repeats a node", i));
        }
        if (route.path.back() != x || (route.path.front() != NodeId(0))) {
          out.push_back(fmt::format("copy: node {} route path does not run from the source to itself", i));
        }
      }
      if (!lcc_mode) continue;
      for (const auto& m : n.memberships) {
        if (m.view.is_leader() || m.view.state() != ClusterState::kStabilized) continue;
        if (m.evaluated_leader != m.view.leader() || !nodes[m.view.leader().value].alive) continue;
        if (rtt(x, m.view.leader()) > cfg.r_max_ms) {
          out.push_back(fmt::format("scope: node {} stabilized in cluster {} at {:.2f} ms from its leader", i,
                                    m.view.cluster().value, rtt(x, m.view.leader())));
        }
      }
    }
    for (NodeId c : tree.cyclic) out.push_back(fmt::format("tree: node {} sits on a parent cycle", c.value));
    return out;
  }

  RunResult result() const {
    RunResult r = res;
    r.messages = acc.total_messages();
    r.bytes = acc.total_bytes();
    r.deliveries_scheduled = deliveries;
    r.adjustments = acc.adjustments_between(0, std::numeric_limits<SimTime>::max());
    for (std::uint32_t i = 0; i < cfg.n; ++i) {
      const Node& n = nodes[i];
      if (!n.alive) continue;
      ++r.live_nodes;
      if (!n.joined) continue;
      ++r.joined_nodes;
      if (!lcc_mode) continue;
      const Membership* pm = primary(NodeId(i));
      if (!pm) {
        ++r.leaderless_members;
        continue;
      }
      const NodeId l = pm->view.leader();
      const Membership* lm = primary(l);
      if (!nodes[l.value].alive || !lm || !lm->view.is_leader() || lm->view.cluster() != pm->view.cluster()) {
        ++r.leaderless_members;
      }
    }
    return r;
  }
};

Simulator::Simulator(ScenarioConfig config) {
  config.validate();
  auto topo = Topology::generate(config.n, config.topology, config.seed);
  impl_ = std::make_unique<Impl>(std::move(config), std::move(topo));
}

Simulator::Simulator(ScenarioConfig config, Topology topology) {
  config.n = topology.size();
  config.validate();
  impl_ = std::make_unique<Impl>(std::move(config), std::move(topology));
}

Simulator::~Simulator() = default;

void Simulator::add_sink(LogSink& sink) { impl_->sinks.push_back(&sink); }

RunResult Simulator::run() {
  impl_->run_until(from_seconds(impl_->cfg.duration_s));
  return impl_->result();
}

void Simulator::run_until(double t_s) { impl_->run_until(from_seconds(std::min(t_s, impl_->cfg.duration_s))); }
double Simulator::now_s() const { return to_seconds(impl_->now); }
RunResult Simulator::result() const { return impl_->result(); }
const ScenarioConfig& Simulator::config() const { return impl_->cfg; }
const Topology& Simulator::topology() const { return impl_->topo; }
const MeshOverlay& Simulator::overlay() const { return impl_->overlay; }
bool Simulator::alive(NodeId n) const { return impl_->node(n).alive; }
bool Simulator::joined(NodeId n) const { return impl_->node(n).alive && impl_->node(n).joined; }
bool Simulator::is_leader(NodeId n) const { return impl_->is_leader_node(n); }
const RoutingState& Simulator::routing(NodeId n) const { return impl_->node(n).routing; }

std::optional<NodeId> Simulator::primary_leader(NodeId n) const {
  const auto* m = impl_->primary(n);
  if (!m) return std::nullopt;
  return m->view.leader();
}

std::size_t Simulator::memberships(NodeId n) const { return impl_->node(n).memberships.size(); }
DeliveryTree Simulator::delivery_tree() const { return impl_->delivery_tree(); }
std::vector<std::string> Simulator::check_invariants() const {
  return impl_->check_invariants(impl_->delivery_tree());
}

}  // namespace lcc
