#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "lcc/core.hpp"
#include "lcc/random.hpp"

namespace lcc {

/// Leader-election record <f^max, 1/DL, T, 1/CD, Migrated>.
struct PriorityVector {
  int fanout_max = 0;
  double inv_delivery_latency = 0.0;  // 1/ms
  double lifetime_s = 0.0;
  double inv_leader_distance = 0.0;  // 1/ms
  bool migrated = false;

  friend bool operator==(const PriorityVector&, const PriorityVector&) = default;
};

/// Latency used for 1/DL before the first data packet arrives.
inline constexpr Millis kDeliveryLatencyFloor = 1.0;

/// Builds a PV from raw measurements. A missing delivery latency uses the
/// floor; a missing foreign leader distance contributes 0.
PriorityVector make_priority_vector(int fanout_max, std::optional<Millis> delivery_latency, double lifetime_s,
                                    std::optional<Millis> nearest_foreign_leader, bool migrated);

struct PriorityWeights {
  std::array<double, 4> w{0.4, 0.3, 0.2, 0.1};

  /// Throws Error(kInvalidConfiguration) unless strictly decreasing and positive.
  void validate() const;
};

/// The four numeric PV components after min-max normalization.
using NormalizedPv = std::array<double, 4>;

/// Weighted sum of normalized components; Migrated is not part of it.
double compute_priority(const NormalizedPv& pv, const PriorityWeights& weights);

/// Min-max normalizes each component over the given set. A component that
/// is constant across the set normalizes to 0.
std::vector<NormalizedPv> normalize(std::span<const PriorityVector> pvs);

/// Normalizes over the set, then weights.
std::vector<double> rank_priorities(std::span<const PriorityVector> pvs, const PriorityWeights& weights);

struct CacheEntry {
  NodeId node;
  double priority = 0.0;
  PriorityVector pv;
  SimTime last_heard = 0;
  /// Ranked first at its own joining; pinned behind position 1 while young.
  bool join_winner = false;
};

/// Priority-sorted list of election-eligible nodes: the rescue plan.
class LocalCache {
 public:
  /// Recomputes priorities over `entries`, sorts by decreasing priority
  /// (ties: lower id) and pins young join winners at the second position.
  void rebuild(std::vector<CacheEntry> entries, const PriorityWeights& weights, double stability_threshold_s);

  const std::vector<CacheEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  /// Zero-based rank, or nullopt.
  std::optional<std::size_t> position(NodeId node) const;

 private:
  std::vector<CacheEntry> entries_;
};

enum class ClusterState { kStabilized, kTemporary, kRecovering };

std::string_view to_string(ClusterState state);

struct MemberInfo {
  PriorityVector pv;
  SimTime last_heard = 0;
  bool join_winner = false;
};

struct ElectionParams {
  PriorityWeights weights;
  double stability_threshold_s = 60.0;
};

/// One node's picture of one cluster it belongs to.
class ClusterView {
 public:
  ClusterView(NodeId self, ClusterId cluster, NodeId leader, Millis r_max, SimTime now);

  NodeId self() const { return self_; }
  ClusterId cluster() const { return cluster_; }
  NodeId leader() const { return leader_; }
  bool is_leader() const { return leader_ == self_; }
  Millis r_max() const { return r_max_; }
  ClusterState state() const { return state_; }
  const std::map<NodeId, MemberInfo>& members() const { return members_; }
  const LocalCache& cache() const { return cache_; }
  const std::set<NodeId>& migrated_set() const { return migrated_; }
  const std::set<NodeId>& foreign_leaders() const { return foreign_leaders_; }
  SimTime leader_last_heard() const { return leader_last_heard_; }
  PriorityVector& own_pv() { return own_pv_; }
  const PriorityVector& own_pv() const { return own_pv_; }
  std::optional<Millis> distance_to_leader() const { return distance_to_leader_; }

  void set_leader(NodeId leader, SimTime now);
  void set_state(ClusterState state) { state_ = state; }
  void set_distance_to_leader(Millis d) { distance_to_leader_ = d; }
  void erase_member(NodeId node);
  /// Replaces the known member set with a leader digest and rebuilds the cache.
  void apply_digest(std::span<const CacheEntry> digest, SimTime now, const ElectionParams& params);
  void rebuild_cache(const ElectionParams& params);

  // Used by on_keepalive and friends.
  std::map<NodeId, MemberInfo>& mutable_members() { return members_; }
  std::set<NodeId>& mutable_migrated_set() { return migrated_; }
  std::set<NodeId>& mutable_foreign_leaders() { return foreign_leaders_; }
  std::set<NodeId>& suspected_leaders() { return suspected_; }
  void touch_leader(SimTime now) { leader_last_heard_ = now; }

 private:
  NodeId self_;
  ClusterId cluster_;
  NodeId leader_;
  Millis r_max_;
  ClusterState state_ = ClusterState::kStabilized;
  std::map<NodeId, MemberInfo> members_;
  LocalCache cache_;
  std::set<NodeId> migrated_;
  std::set<NodeId> foreign_leaders_;
  std::set<NodeId> suspected_;
  SimTime leader_last_heard_;
  PriorityVector own_pv_;
  std::optional<Millis> distance_to_leader_;
};

/// Stores the sender's PV, refreshes leader liveness, folds the migration
/// flag into the migrated set and re-sorts the cache. Unknown senders are
/// learned.
void on_keepalive(ClusterView& view, NodeId sender, const PriorityVector& pv, SimTime now,
                  const ElectionParams& params);

struct PromotionAction {
  enum class Kind { kSelfPromote, kAwaitLeader, kRelocate };
  Kind kind = Kind::kRelocate;
  NodeId expected;
};

/// Called when the current (or expected) leader missed its keep-alive
/// deadline. Marks it dead and walks the cache to the next live entry.
PromotionAction on_leader_timeout(ClusterView& view, SimTime now);

/// Re-checks the scope criterion against the current leader distance.
/// Sets or clears the migrated flag and moves between Stabilized and
/// Temporary. Returns true if the state or flag changed.
bool on_migration_detected(ClusterView& view, Millis distance_to_leader);

struct RecoveryMessage {
  enum class Kind { kRequest, kPositiveAck, kNegativeAck, kSplitNotice };
  Kind kind;
  NodeId from;
  NodeId to;
};

struct RecoveredCluster {
  NodeId leader;
  std::vector<NodeId> members;  // excludes the leader
};

struct RecoveryOutcome {
  std::vector<RecoveredCluster> clusters;
  std::vector<RecoveryMessage> messages;
  std::vector<NodeId> skipped;  // dead during recovery
};

/// Re-clusters migrated nodes in cache rank order. The first eligible node
/// leads and asks each later unassigned node in turn; nodes inside its scope
/// join, the others answer negatively. A node that has been asked by every
/// earlier leader without joining leads next. Each new leader finally
/// notifies the previous leader of the split.
RecoveryOutcome plan_recovery(std::span<const NodeId> ranked_migrated,
                              const std::function<bool(NodeId, NodeId)>& in_scope,
                              const std::function<bool(NodeId)>& alive, NodeId previous_leader);

/// Convenience overload with everyone alive.
RecoveryOutcome plan_recovery(std::span<const NodeId> ranked_migrated,
                              const std::function<bool(NodeId, NodeId)>& in_scope, NodeId previous_leader);

/// Migrated nodes in cache order (cache entries first, then the rest by id).
std::vector<NodeId> rank_migrated(const ClusterView& view);

struct MemberCapacity {
  NodeId node;
  int available_fanout = 0;  // fan-out not consumed by other memberships
  int fanout_max = 0;
  int other_memberships = 0;
};

struct AdmissionDecision {
  enum class Kind { kAccept, kReclaimEdge, kReject };
  Kind kind = Kind::kReject;
  NodeId edge_node;
};

/// Accept while the cluster overall capacity is >= 1; otherwise ask an edge
/// member to give up its other memberships; otherwise reject as saturated.
AdmissionDecision decide_admission(std::span<const MemberCapacity> members);

struct GossipEntry {
  NodeId node;
  ClusterId cluster;
  bool leader = false;
  /// Sender's measured RTT to `node`, negative when unknown.
  Millis distance = -1.0;
  SimTime last_heard = 0;
};

/// Bounded partial view of overlay membership.
class GossipView {
 public:
  explicit GossipView(NodeId self, std::size_t bound = 64);

  NodeId self() const { return self_; }
  std::size_t bound() const { return bound_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<GossipEntry>& entries() const { return entries_; }
  bool contains(NodeId node) const;
  const GossipEntry* find(NodeId node) const;

  /// Keeps the freshest last_heard per node; evicts oldest-heard first.
  void merge(std::span<const GossipEntry> incoming, SimTime now);
  void touch(NodeId node, ClusterId cluster, bool leader, SimTime now);
  void erase(NodeId node);

  std::optional<NodeId> pick_peer(Rng& rng) const;
  /// Random subset of at most g entries, never including `exclude`.
  std::vector<GossipEntry> sample(Rng& rng, std::size_t g, NodeId exclude = kNoNode) const;

  /// Returns true when the peer crossed the miss threshold and was dropped.
  bool record_miss(NodeId peer, int threshold);
  void record_reply(NodeId peer);

 private:
  void evict();

  NodeId self_;
  std::size_t bound_;
  std::vector<GossipEntry> entries_;
  std::map<NodeId, int> misses_;
};

struct GossipRound {
  NodeId peer;
  std::vector<GossipEntry> entries;
};

/// Picks a uniform random peer and a random subset of size g for it.
std::optional<GossipRound> gossip_round(const GossipView& view, Rng& rng, std::size_t g);

}  // namespace lcc
