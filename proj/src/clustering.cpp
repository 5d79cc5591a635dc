#include "lcc/clustering.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace lcc {

PriorityVector make_priority_vector(int fanout_max, std::optional<Millis> delivery_latency, double lifetime_s,
                                    std::optional<Millis> nearest_foreign_leader, bool migrated) {
  PriorityVector pv;
  pv.fanout_max = std::max(0, fanout_max);
  const Millis dl = std::max(kDeliveryLatencyFloor, delivery_latency.value_or(kDeliveryLatencyFloor));
  pv.inv_delivery_latency = 1.0 / dl;
  pv.lifetime_s = std::max(0.0, lifetime_s);
  if (nearest_foreign_leader && *nearest_foreign_leader > 0.0 && std::isfinite(*nearest_foreign_leader)) {
    pv.inv_leader_distance = 1.0 / *nearest_foreign_leader;
  }
  pv.migrated = migrated;
  return pv;
}

void PriorityWeights::validate() const {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || (i > 0 && !(w[i] < w[i - 1]))) {
      throw Error(ErrorCode::kInvalidConfiguration,
                  fmt::format("priority weights must be positive and strictly decreasing ({}, {}, {}, {})", w[0],
                              w[1], w[2], w[3]));
    }
  }
}

double compute_priority(const NormalizedPv& pv, const PriorityWeights& weights) {
  weights.validate();
  double sum = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) sum += weights.w[i] * pv[i];
  return sum;
}

namespace {

NormalizedPv raw_components(const PriorityVector& pv) {
  return {static_cast<double>(pv.fanout_max), pv.inv_delivery_latency, pv.lifetime_s, pv.inv_leader_distance};
}

}  // namespace

std::vector<NormalizedPv> normalize(std::span<const PriorityVector> pvs) {
  std::vector<NormalizedPv> out;
  out.reserve(pvs.size());
  for (const auto& pv : pvs) out.push_back(raw_components(pv));
  for (std::size_t c = 0; c < 4; ++c) {
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (i == 0 || out[i][c] < lo) lo = out[i][c];
      if (i == 0 || out[i][c] > hi) hi = out[i][c];
    }
    const double span = hi - lo;
    for (auto& v : out) v[c] = span > 0.0 ? (v[c] - lo) / span : 0.0;
  }
  return out;
}

std::vector<double> rank_priorities(std::span<const PriorityVector> pvs, const PriorityWeights& weights) {
  weights.validate();
  const auto normalized = normalize(pvs);
  std::vector<double> out;
  out.reserve(normalized.size());
  for (const auto& n : normalized) out.push_back(compute_priority(n, weights));
  return out;
}

void LocalCache::rebuild(std::vector<CacheEntry> entries, const PriorityWeights& weights,
                         double stability_threshold_s) {
  std::vector<PriorityVector> pvs;
  pvs.reserve(entries.size());
  for (const auto& e : entries) pvs.push_back(e.pv);
  const auto priorities = rank_priorities(pvs, weights);
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].priority = priorities[i];

  const auto by_priority = [](const CacheEntry& a, const CacheEntry& b) {
    return a.priority != b.priority ? a.priority > b.priority : a.node < b.node;
  };
  std::vector<CacheEntry> pinned;
  std::vector<CacheEntry> rest;
  for (auto& e : entries) {
    const bool pin = e.join_winner && e.pv.lifetime_s <= stability_threshold_s;
    (pin ? pinned : rest).push_back(std::move(e));
  }
  std::sort(pinned.begin(), pinned.end(), by_priority);
  std::sort(rest.begin(), rest.end(), by_priority);
  entries_.clear();
  entries_.reserve(pinned.size() + rest.size());
  if (!rest.empty()) entries_.push_back(rest.front());
  entries_.insert(entries_.end(), pinned.begin(), pinned.end());
  if (rest.size() > 1) entries_.insert(entries_.end(), rest.begin() + 1, rest.end());
}

std::optional<std::size_t> LocalCache::position(NodeId node) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].node == node) return i;
  }
  return std::nullopt;
}

std::string_view to_string(ClusterState state) {
  switch (state) {
    case ClusterState::kStabilized: return "Stabilized";
    case ClusterState::kTemporary: return "Temporary";
    case ClusterState::kRecovering: return "Recovering";
  }
  return "?";
}

ClusterView::ClusterView(NodeId self, ClusterId cluster, NodeId leader, Millis r_max, SimTime now)
    : self_(self), cluster_(cluster), leader_(leader), r_max_(r_max), leader_last_heard_(now) {
  if (leader == self) distance_to_leader_ = 0.0;
}

void ClusterView::set_leader(NodeId leader, SimTime now) {
  leader_ = leader;
  leader_last_heard_ = now;
  suspected_.erase(leader);
  if (leader == self_) distance_to_leader_ = 0.0;
}

void ClusterView::erase_member(NodeId node) {
  members_.erase(node);
  migrated_.erase(node);
}

void ClusterView::rebuild_cache(const ElectionParams& params) {
  std::vector<CacheEntry> entries;
  entries.reserve(members_.size());
  for (const auto& [node, info] : members_) {
    entries.push_back(CacheEntry{node, 0.0, info.pv, info.last_heard, info.join_winner});
  }
  cache_.rebuild(std::move(entries), params.weights, params.stability_threshold_s);
}

void ClusterView::apply_digest(std::span<const CacheEntry> digest, SimTime now, const ElectionParams& params) {
  members_.clear();
  std::set<NodeId> migrated;
  for (const auto& e : digest) {
    members_[e.node] = MemberInfo{e.pv, now, e.join_winner};
    if (e.pv.migrated) migrated.insert(e.node);
  }
  if (own_pv_.migrated) migrated.insert(self_);
  migrated_ = std::move(migrated);
  if (!migrated_.empty() && state_ == ClusterState::kStabilized) state_ = ClusterState::kTemporary;
  rebuild_cache(params);
}

void on_keepalive(ClusterView& view, NodeId sender, const PriorityVector& pv, SimTime now,
                  const ElectionParams& params) {
  auto& members = view.mutable_members();
  const bool is_new = !members.contains(sender);
  auto& info = members[sender];
  info.pv = pv;
  info.last_heard = now;
  if (sender == view.leader()) view.touch_leader(now);

  auto& migrated = view.mutable_migrated_set();
  if (pv.migrated) {
    migrated.insert(sender);
    if (view.state() == ClusterState::kStabilized) view.set_state(ClusterState::kTemporary);
  } else {
    migrated.erase(sender);
  }

  view.rebuild_cache(params);
  if (is_new && view.cache().size() > 1 && view.cache().position(sender) == std::size_t{0}) {
    info.join_winner = true;
    view.rebuild_cache(params);
  }
}

PromotionAction on_leader_timeout(ClusterView& view, SimTime now) {
  view.suspected_leaders().insert(view.leader());
  for (const auto& entry : view.cache().entries()) {
    if (view.suspected_leaders().contains(entry.node)) continue;
    view.set_leader(entry.node, now);
    if (entry.node == view.self()) return PromotionAction{PromotionAction::Kind::kSelfPromote, entry.node};
    return PromotionAction{PromotionAction::Kind::kAwaitLeader, entry.node};
  }
  return PromotionAction{PromotionAction::Kind::kRelocate, kNoNode};
}

bool on_migration_detected(ClusterView& view, Millis distance_to_leader) {
  view.set_distance_to_leader(distance_to_leader);
  auto& pv = view.own_pv();
  auto& migrated = view.mutable_migrated_set();
  if (distance_to_leader > view.r_max()) {
    if (pv.migrated) return false;
    pv.migrated = true;
    migrated.insert(view.self());
    view.mutable_foreign_leaders().insert(view.leader());
    if (view.state() == ClusterState::kStabilized) view.set_state(ClusterState::kTemporary);
    return true;
  }
  if (!pv.migrated || view.state() == ClusterState::kRecovering) return false;
  pv.migrated = false;
  migrated.erase(view.self());
  view.mutable_foreign_leaders().erase(view.leader());
  if (migrated.empty()) view.set_state(ClusterState::kStabilized);
  return true;
}

RecoveryOutcome plan_recovery(std::span<const NodeId> ranked_migrated,
                              const std::function<bool(NodeId, NodeId)>& in_scope,
                              const std::function<bool(NodeId)>& alive, NodeId previous_leader) {
  RecoveryOutcome out;
  const std::size_t k = ranked_migrated.size();
  // 0 = unresolved, 1 = joined or leading, 2 = dead
  std::vector<int> status(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    if (status[i] != 0) continue;
    const NodeId leader = ranked_migrated[i];
    if (!alive(leader)) {
      status[i] = 2;
      out.skipped.push_back(leader);
      continue;
    }
    status[i] = 1;
    RecoveredCluster cluster{leader, {}};
    for (std::size_t j = i + 1; j < k; ++j) {
      if (status[j] != 0) continue;
      const NodeId target = ranked_migrated[j];
      out.messages.push_back({RecoveryMessage::Kind::kRequest, leader, target});
      if (!alive(target)) {
        status[j] = 2;
        out.skipped.push_back(target);
        continue;
      }
      if (in_scope(target, leader)) {
        out.messages.push_back({RecoveryMessage::Kind::kPositiveAck, target, leader});
        cluster.members.push_back(target);
        status[j] = 1;
      } else {
        out.messages.push_back({RecoveryMessage::Kind::kNegativeAck, target, leader});
      }
    }
    if (previous_leader.valid()) {
      out.messages.push_back({RecoveryMessage::Kind::kSplitNotice, leader, previous_leader});
    }
    out.clusters.push_back(std::move(cluster));
  }
  return out;
}

RecoveryOutcome plan_recovery(std::span<const NodeId> ranked_migrated,
                              const std::function<bool(NodeId, NodeId)>& in_scope, NodeId previous_leader) {
  return plan_recovery(ranked_migrated, in_scope, [](NodeId) { return true; }, previous_leader);
}

std::vector<NodeId> rank_migrated(const ClusterView& view) {
  std::vector<NodeId> out;
  for (const auto& e : view.cache().entries()) {
    if (view.migrated_set().contains(e.node)) out.push_back(e.node);
  }
  for (const NodeId n : view.migrated_set()) {
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  }
  return out;
}

AdmissionDecision decide_admission(std::span<const MemberCapacity> members) {
  std::vector<int> fanouts;
  fanouts.reserve(members.size());
  for (const auto& m : members) fanouts.push_back(m.available_fanout);
  if (cluster_overall_capacity(fanouts) >= 1) return AdmissionDecision{AdmissionDecision::Kind::kAccept, kNoNode};

  const MemberCapacity* best = nullptr;
  for (const auto& m : members) {
    if (m.other_memberships <= 0) continue;
    const int gain = m.fanout_max - m.available_fanout;
    if (!best || gain > best->fanout_max - best->available_fanout ||
        (gain == best->fanout_max - best->available_fanout && m.node < best->node)) {
      best = &m;
    }
  }
  if (best) return AdmissionDecision{AdmissionDecision::Kind::kReclaimEdge, best->node};
  return AdmissionDecision{AdmissionDecision::Kind::kReject, kNoNode};
}

GossipView::GossipView(NodeId self, std::size_t bound) : self_(self), bound_(bound) {
  if (bound == 0) throw Error(ErrorCode::kInvalidConfiguration, "gossip view bound must be positive");
}

bool GossipView::contains(NodeId node) const { return find(node) != nullptr; }

const GossipEntry* GossipView::find(NodeId node) const {
  for (const auto& e : entries_) {
    if (e.node == node) return &e;
  }
  return nullptr;
}

void GossipView::merge(std::span<const GossipEntry> incoming, SimTime now) {
  (void)now;
  for (const auto& in : incoming) {
    if (in.node == self_) continue;
    auto it = std::find_if(entries_.begin(), entries_.end(), [&in](const GossipEntry& e) { return e.node == in.node; });
    if (it == entries_.end()) {
      GossipEntry stored = in;
      stored.distance = -1.0;
      entries_.push_back(stored);
    } else if (in.last_heard > it->last_heard) {
      it->last_heard = in.last_heard;
      it->cluster = in.cluster;
      it->leader = in.leader;
    }
  }
  evict();
}

void GossipView::touch(NodeId node, ClusterId cluster, bool leader, SimTime now) {
  if (node == self_) return;
  auto it = std::find_if(entries_.begin(), entries_.end(), [node](const GossipEntry& e) { return e.node == node; });
  if (it == entries_.end()) {
    entries_.push_back(GossipEntry{node, cluster, leader, -1.0, now});
    evict();
  } else {
    it->cluster = cluster;
    it->leader = leader;
    it->last_heard = std::max(it->last_heard, now);
  }
}

void GossipView::erase(NodeId node) {
  std::erase_if(entries_, [node](const GossipEntry& e) { return e.node == node; });
  misses_.erase(node);
}

void GossipView::evict() {
  while (entries_.size() > bound_) {
    const auto oldest = std::min_element(entries_.begin(), entries_.end(), [](const GossipEntry& a, const GossipEntry& b) {
      return a.last_heard != b.last_heard ? a.last_heard < b.last_heard : a.node < b.node;
    });
    misses_.erase(oldest->node);
    entries_.erase(oldest);
  }
}

std::optional<NodeId> GossipView::pick_peer(Rng& rng) const {
  if (entries_.empty()) return std::nullopt;
  return entries_[rng.below(entries_.size())].node;
}

std::vector<GossipEntry> GossipView::sample(Rng& rng, std::size_t g, NodeId exclude) const {
  std::vector<GossipEntry> pool;
  pool.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (e.node != exclude) pool.push_back(e);
  }
  const std::size_t take = std::min(g, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  return pool;
}

bool GossipView::record_miss(NodeId peer, int threshold) {
  if (++misses_[peer] >= threshold) {
    erase(peer);
    return true;
  }
  return false;
}

void GossipView::record_reply(NodeId peer) { misses_.erase(peer); }

std::optional<GossipRound> gossip_round(const GossipView& view, Rng& rng, std::size_t g) {
  const auto peer = view.pick_peer(rng);
  if (!peer) return std::nullopt;
  return GossipRound{*peer, view.sample(rng, g, *peer)};
}

}  // namespace lcc
