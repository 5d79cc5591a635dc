#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "lcc/core.hpp"
#include "lcc/eventlog.hpp"
#include "lcc/meshtree.hpp"
#include "lcc/topology.hpp"

namespace lcc {

struct MetricSnapshot {
  double time_s = 0.0;
  std::size_t live_nodes = 0;
  std::size_t joined_nodes = 0;
  double connected_fraction = 1.0;
  double ardp = 0.0;          // NaN when no receiver is connected
  double ardp_trimmed = 0.0;  // 20%-trimmed mean of the same ratios
  double stress_mean = 0.0;   // NaN without hop paths
  double stress_max = 0.0;
  double adjustments_per_node_per_hour = 0.0;
  double control_kbps_per_node = 0.0;
  std::size_t clusters = 0;
};

struct ArdpResult {
  double ardp = 0.0;
  double ardp_trimmed = 0.0;
  double connected_fraction = 1.0;
  std::size_t receivers = 0;
  std::size_t counted = 0;
  std::vector<double> ratios;
};

/// (1/N') sum over connected receivers of d'(s,i)/d(s,i), where d' sums
/// underlay RTTs along tree edges. Disconnected receivers are left out and
/// lower connected_fraction. `receivers` masks which present nodes count;
/// empty means every present node other than s. With no connected receiver
/// ardp is NaN.
ArdpResult ardp(const DeliveryTree& tree, const Topology& topo, NodeId s, const std::vector<bool>& receivers = {});

struct StressSummary {
  double mean = 0.0;  // over underlay links carrying at least one copy
  std::uint32_t max = 0;
  std::size_t links_used = 0;
  std::uint64_t traversals = 0;
  std::vector<std::uint32_t> per_link;
};

/// Copies per underlay link over every tree edge of a reachable node.
/// Throws Error(kNoHopPaths) when the topology has no router paths.
StressSummary link_stress(const DeliveryTree& tree, const Topology& topo);

/// Mean after dropping floor(fraction * n) values from each end.
double trimmed_mean(std::vector<double> values, double fraction = 0.2);

struct Convergence {
  bool converged = false;
  double time_s = 0.0;
  double final_ardp = 0.0;
};

/// First snapshot at or after `after_s` from which ARDP stays below the
/// threshold until the end of the stream.
Convergence convergence_time(std::span<const MetricSnapshot> stream, double after_s, double threshold = 2.0);

/// Adjustments per node per hour.
double adjustment_rate(std::uint64_t adjustments, double live_nodes, double window_s);
/// Control traffic in kbps per node.
double control_kbps(std::uint64_t bytes, double live_nodes, double window_s);

struct RecoveryStats {
  std::size_t affected = 0;
  std::size_t resumed = 0;
  std::size_t censored = 0;
  double mean_s = 0.0;
  double max_s = 0.0;
};

RecoveryStats summarize_recovery(std::span<const double> resume_times, std::size_t censored);

/// Per-period accumulators over the byte log. Records land in the bucket
/// floor(time / period); a snapshot at the end of bucket k reads buckets
/// <= k only, so same-instant sends never leak into it. The live simulator
/// and offline log replays share this class.
class LogAccumulator : public LogSink {
 public:
  LogAccumulator(double period_s, double adjust_window_s);

  void record(const LogRecord& r) override;

  struct Window {
    std::size_t live_nodes = 0;
    std::uint64_t bytes = 0;
    std::uint64_t adjustments = 0;
    double adjust_window_s = 0.0;
    double adjustments_per_node_per_hour = 0.0;
    double control_kbps_per_node = 0.0;
  };
  /// Window ending at (k + 1) * period.
  Window window(std::size_t k) const;

  SimTime period() const { return period_; }
  std::uint64_t total_bytes() const { return total_bytes_; }
  std::uint64_t total_messages() const { return total_messages_; }
  std::uint64_t adjustments_between(SimTime from, SimTime to) const;

 private:
  void grow(std::size_t k);

  SimTime period_;
  std::size_t adjust_buckets_;
  std::vector<std::uint64_t> bytes_;
  std::vector<std::uint64_t> adjustments_;
  std::vector<std::int64_t> live_delta_;
  std::vector<SimTime> adjustment_times_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t total_messages_ = 0;
};

/// Rebuilds the per-snapshot adjustment and overhead columns from a log.
std::vector<LogAccumulator::Window> replay_windows(std::span<const LogRecord> records, double period_s,
                                                   double adjust_window_s, std::size_t snapshots);

/// Column order of the snapshot CSV.
std::string_view snapshot_csv_header();
void write_snapshot_csv(std::ostream& out, std::span<const MetricSnapshot> stream);

}  // namespace lcc
