#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lcc/config.hpp"
#include "lcc/eventlog.hpp"
#include "lcc/meshtree.hpp"
#include "lcc/metrics.hpp"
#include "lcc/topology.hpp"

namespace lcc {

/// One newcomer's locating outcome scored against ground truth.
struct LocateRecord {
  NodeId node;
  double time_s = 0.0;
  bool created = false;      // ended by creating its own cluster
  NodeId chosen;             // first in-scope leader it went for
  NodeId nearest;            // true nearest live leader at that instant
  Millis nearest_distance = 0.0;
  bool correct = false;
  std::vector<NodeId> offered;  // in-scope leaders the locating returned, nearest first
  int requested = 0;
  double elapsed_s = 0.0;
  std::uint64_t join_bytes = 0;   // everything tagged with its session until joined
  std::uint64_t probe_bytes = 0;  // probe requests, replies and pings
  bool completed = false;
};

struct RecoveryRecord {
  double at_s = 0.0;
  std::size_t failed = 0;
  std::size_t affected = 0;
  std::vector<double> resume_s;  // per resumed node, relative to the failure
  std::size_t censored = 0;
};

struct RunResult {
  std::vector<MetricSnapshot> snapshots;
  std::vector<LocateRecord> locates;
  std::vector<RecoveryRecord> recoveries;
  std::size_t invariant_checks = 0;
  std::size_t invariant_violations = 0;
  std::vector<std::string> violation_samples;
  std::vector<std::string> warnings;
  double last_join_s = 0.0;
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  std::uint64_t deliveries_scheduled = 0;
  std::uint64_t adjustments = 0;
  /// Live joined nodes whose primary cluster has no live leader at the end.
  std::size_t leaderless_members = 0;
  std::size_t live_nodes = 0;
  std::size_t joined_nodes = 0;
};

/// Deterministic discrete-event run of one scenario: churn, failure script,
/// full protocol message exchange, and periodic metric snapshots.
class Simulator {
 public:
  explicit Simulator(ScenarioConfig config);
  /// Uses the given topology instead of generating one; its size wins over
  /// config.n.
  Simulator(ScenarioConfig config, Topology topology);
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  /// Every accounted send is also forwarded here. The sink must outlive run().
  void add_sink(LogSink& sink);

  /// Runs to the configured horizon and returns the collected results.
  RunResult run();
  /// Advances to `t_s` (inclusive); run() continues from there.
  void run_until(double t_s);
  double now_s() const;
  RunResult result() const;

  const ScenarioConfig& config() const;
  const Topology& topology() const;
  const MeshOverlay& overlay() const;
  bool alive(NodeId n) const;
  bool joined(NodeId n) const;
  bool is_leader(NodeId n) const;
  const RoutingState& routing(NodeId n) const;
  /// Leader of the node's primary cluster, if it has one.
  std::optional<NodeId> primary_leader(NodeId n) const;
  std::size_t memberships(NodeId n) const;
  DeliveryTree delivery_tree() const;
  /// Violations of the global invariants in the current state.
  std::vector<std::string> check_invariants() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lcc
