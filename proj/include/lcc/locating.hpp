#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <variant>
#include <vector>

#include "lcc/core.hpp"
#include "lcc/random.hpp"

namespace lcc {

/// Placeholder for an unknown learned distance. Larger than any threshold
/// the selection can produce, so unknown pairs never represent each other.
inline constexpr Millis kInfDiscard = 2147483648.0;  // 2^31 ms

/// Exponentially growing ring radii: r_0 = 0, r_i = alpha * e^(i-1).
class RingLevels {
 public:
  explicit RingLevels(Millis alpha = 4.0, int max_level = 9);

  Millis alpha() const { return alpha_; }
  int max_level() const { return max_level_; }

  /// Inner radius of `level`; valid for 0 <= level <= max_level + 1.
  Millis radius(int level) const;

  /// Level i with r_i <= d < r_{i+1}; distances beyond r_max_level land in
  /// the overflow level max_level.
  int assign_level(Millis d) const;

 private:
  Millis alpha_;
  int max_level_;
  std::vector<Millis> radii_;
};

/// gamma = |d - r_i| * d / r_{i+1}
Millis selection_threshold(Millis d, int level, const RingLevels& rings);

/// Square matrix of learned distances between the nodes of one ring level
/// and its two neighbours.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(int level, std::vector<NodeId> index);

  int level() const { return level_; }
  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }
  const std::vector<NodeId>& index() const { return index_; }

  Millis at(std::size_t j, std::size_t k) const { return entries_[j * index_.size() + k]; }
  /// Sets both (j,k) and (k,j).
  void set(std::size_t j, std::size_t k, Millis d);

 private:
  int level_ = 0;
  std::vector<NodeId> index_;
  std::vector<Millis> entries_;
};

/// Picks an index in [0, n). Lets tests pin the random choices of the
/// selection loop.
using IndexChooser = std::function<std::size_t(std::size_t n)>;

/// Representative selection over a level matrix. Repeatedly picks a random
/// remaining node, drops every node it represents (known distance below
/// gamma), and keeps it as a representative, until only representatives
/// remain.
std::vector<NodeId> select_representatives(const DistanceMatrix& matrix, Millis d,
                                           const RingLevels& rings, const IndexChooser& choose);
std::vector<NodeId> select_representatives(const DistanceMatrix& matrix, Millis d,
                                           const RingLevels& rings, Rng& rng);

struct RingMember {
  NodeId id;
  Millis distance = 0;
  SimTime refreshed = 0;
};

/// A leader's ring-structured view of other cluster leaders plus the
/// pairwise distances it has learned between them.
class LocatingSystem {
 public:
  LocatingSystem(NodeId owner, RingLevels rings, std::size_t k_per_level = 8,
                 SimTime refresh_protect = from_seconds(5), std::size_t learned_capacity = 8192);

  NodeId owner() const { return owner_; }
  const RingLevels& rings() const { return rings_; }
  std::size_t k_per_level() const { return k_per_level_; }

  /// Inserts or refreshes a leader at measured distance d. When the level is
  /// full, evicts the stalest member unless it was refreshed within the
  /// protection window. Returns whether the leader is now tracked.
  bool observe(NodeId leader, Millis d, SimTime now);
  void forget(NodeId leader);
  bool contains(NodeId leader) const;
  std::optional<Millis> distance_to(NodeId leader) const;

  const std::vector<RingMember>& level(int i) const { return levels_.at(static_cast<std::size_t>(i)); }
  /// Members of levels i-1, i and i+1.
  std::vector<RingMember> near_level(int i) const;
  std::vector<RingMember> members() const;
  std::size_t size() const;

  void learn(NodeId a, NodeId b, Millis d);
  std::optional<Millis> learned(NodeId a, NodeId b) const;
  std::size_t learned_size() const { return learned_.size(); }

  /// Matrix over near_level(i); unknown pairs hold kInfDiscard.
  DistanceMatrix matrix(int level) const;

 private:
  static std::uint64_t pair_key(NodeId a, NodeId b);

  NodeId owner_;
  RingLevels rings_;
  std::size_t k_per_level_;
  SimTime refresh_protect_;
  std::size_t learned_capacity_;
  std::vector<std::vector<RingMember>> levels_;
  std::unordered_map<std::uint64_t, float> learned_;
  std::deque<std::uint64_t> learned_order_;
};

enum class LocatingMode { kSelective, kNonSelective };

struct Candidate {
  NodeId node;
  Millis distance = 0;
};

/// Ascending distance, ties by lower id.
bool candidate_less(const Candidate& a, const Candidate& b);

/// Nodes the requested leader asks to probe the newcomer.
std::vector<NodeId> choose_queried_nodes(const LocatingSystem& state, NodeId newcomer,
                                         Millis d_requested, LocatingMode mode, Rng& rng);

/// Probe results strictly closer to the newcomer than the requested node,
/// sorted by candidate_less.
std::vector<Candidate> filter_candidates(std::span<const Candidate> probe_results, Millis d_requested);

/// Stores probe outcomes as learned distances for later matrix builds.
void record_probe_results(LocatingSystem& state, NodeId newcomer, Millis d_requested,
                          std::span<const Candidate> probe_results);

using ProbeFn = std::function<std::optional<Millis>(NodeId queried, NodeId newcomer)>;

/// Full request handling at a requested leader: choose queried nodes, have
/// each probe the newcomer, record results and return the candidate list.
/// Throws Error(kNotALeader) when the requested node is no longer a leader.
std::vector<Candidate> handle_localization_request(LocatingSystem& state, bool is_leader, NodeId newcomer,
                                                   Millis d_requested, LocatingMode mode, Rng& rng,
                                                   const ProbeFn& probe);

struct LocateConfig {
  Millis r_max = 50.0;
  int stop_c = 16;
  LocatingMode mode = LocatingMode::kSelective;
  int bootstrap_retries = 3;
};

struct LocatingOutcome {
  enum class Kind { kPending, kJoinClusters, kCreateOwnCluster };

  Kind kind = Kind::kPending;
  /// In-scope leaders to join, nearest first (JoinClusters only).
  std::vector<Candidate> leaders;
  /// Every leader measured during the process, nearest first.
  std::vector<Candidate> known;
  int requested_count = 0;
  SimTime elapsed = 0;
  int probes_sent = 0;
};

/// Newcomer-side state machine of the iterative locating loop. The driver
/// measures the boot node, forwards candidate lists and executes the
/// returned steps.
class LocateSession {
 public:
  struct SendRequest {
    NodeId to;
    Millis distance = 0;
  };
  struct Done {};
  using Step = std::variant<SendRequest, Done>;

  LocateSession(NodeId newcomer, LocateConfig config);

  NodeId newcomer() const { return newcomer_; }
  const LocateConfig& config() const { return config_; }

  Step on_boot_measured(NodeId boot, Millis d);
  Step on_candidates(NodeId requested, std::span<const Candidate> candidates);
  /// Requested node answered NOT_A_LEADER or timed out.
  Step on_request_failed(NodeId requested);
  /// Every leader of a JoinClusters outcome refused the newcomer. They are
  /// dropped for good; one not requested yet is asked for its candidates,
  /// otherwise the loop resumes from the working list.
  Step on_join_rejected(std::span<const NodeId> refused);
  /// A fresh boot leader from the rendezvous point after the loop ran dry;
  /// refusals and the request count carry over.
  Step on_reboot(NodeId boot, Millis d);

  bool done() const { return outcome_.kind != LocatingOutcome::Kind::kPending; }
  LocatingOutcome& outcome() { return outcome_; }
  const LocatingOutcome& outcome() const { return outcome_; }
  const std::vector<Candidate>& requested_sequence() const { return requested_; }
  /// Candidate-list sizes in request order (0 for failed requests).
  const std::vector<std::size_t>& response_sizes() const { return response_sizes_; }

 private:
  void merge(std::span<const Candidate> candidates);
  Step advance();
  Step finish(LocatingOutcome::Kind kind);

  NodeId newcomer_;
  LocateConfig config_;
  std::vector<Candidate> working_;  // measured, not yet requested
  std::vector<Candidate> known_;
  std::vector<Candidate> requested_;
  std::vector<std::size_t> response_sizes_;
  std::vector<NodeId> refused_;
  LocatingOutcome outcome_;
};

/// Abstract network the synchronous locate() driver talks to.
class LocatingNetwork {
 public:
  virtual ~LocatingNetwork() = default;
  /// A random live leader from the rendezvous point.
  virtual std::optional<NodeId> rendezvous(Rng& rng) = 0;
  /// RTT between two nodes, or nullopt when b is unreachable.
  virtual std::optional<Millis> measure(NodeId a, NodeId b) = 0;
  /// Sends a localization request; throws Error(kNotALeader). Adds the
  /// number of probes it triggered to `probes`.
  virtual std::vector<Candidate> request(NodeId requested, NodeId newcomer, Millis d, int& probes) = 0;
};

/// Runs the whole locating process synchronously. Elapsed time counts one
/// RTT per newcomer measurement and per request round trip. Throws
/// Error(kBootstrapFailed) after exhausting rendezvous retries.
LocatingOutcome locate(NodeId newcomer, LocatingNetwork& network, const LocateConfig& config, Rng& rng);

}  // namespace lcc
