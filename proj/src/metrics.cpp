#include "lcc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>

#include <fmt/format.h>

namespace lcc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) { return std::isnan(v) ? "NA" : fmt::format("{:.6f}", v); }

}  // namespace

ArdpResult ardp(const DeliveryTree& tree, const Topology& topo, NodeId s, const std::vector<bool>& receivers) {
  const std::size_t n = tree.parent.size();
  ArdpResult out;
  // overlay delay from s, filled along parent chains
  std::vector<double> overlay(n, -1.0);
  if (s.value < n) overlay[s.value] = 0.0;
  std::vector<std::uint32_t> chain;
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId id(static_cast<std::uint32_t>(i));
    if (id == s || !tree.present[i]) continue;
    if (!receivers.empty() && !receivers[i]) continue;
    ++out.receivers;
    if (!tree.reachable[i]) continue;
    chain.clear();
    std::uint32_t cur = static_cast<std::uint32_t>(i);
    while (overlay[cur] < 0.0) {
      chain.push_back(cur);
      cur = tree.parent[cur].value;
    }
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const NodeId p = tree.parent[*it];
      overlay[*it] = overlay[p.value] + topo.rtt(p, NodeId(*it));
    }
    out.ratios.push_back(overlay[i] / topo.rtt(s, id));
  }
  out.counted = out.ratios.size();
  out.connected_fraction = out.receivers == 0 ? 1.0 : static_cast<double>(out.counted) / out.receivers;
  if (out.counted == 0) {
    out.ardp = out.ardp_trimmed = kNaN;
    return out;
  }
  double sum = 0.0;
  for (double r : out.ratios) sum += r;
  out.ardp = sum / static_cast<double>(out.counted);
  out.ardp_trimmed = trimmed_mean(out.ratios);
  return out;
}

StressSummary link_stress(const DeliveryTree& tree, const Topology& topo) {
  if (!topo.has_hop_paths()) {
    throw Error(ErrorCode::kNoHopPaths,
                fmt::format("link stress needs hop paths; use topology.model = transit_stub (got {})",
                            to_string(topo.model())));
  }
  StressSummary out;
  out.per_link.assign(topo.underlay_link_count(), 0);
  for (std::size_t i = 0; i < tree.parent.size(); ++i) {
    if (!tree.present[i] || !tree.reachable[i] || !tree.parent[i].valid()) continue;
    for (auto link : topo.hop_path(tree.parent[i], NodeId(static_cast<std::uint32_t>(i)))) {
      ++out.per_link[link];
      ++out.traversals;
    }
  }
  for (auto c : out.per_link) {
    if (c == 0) continue;
    ++out.links_used;
    out.max = std::max(out.max, c);
  }
  out.mean = out.links_used == 0 ? 0.0 : static_cast<double>(out.traversals) / static_cast<double>(out.links_used);
  return out;
}

double trimmed_mean(std::vector<double> values, double fraction) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(values.size())));
  std::size_t lo = cut, hi = values.size() - cut;
  if (lo >= hi) {
    lo = 0;
    hi = values.size();
  }
  double sum = 0.0;
  for (std::size_t i = lo; i < hi; ++i) sum += values[i];
  return sum / static_cast<double>(hi - lo);
}

Convergence convergence_time(std::span<const MetricSnapshot> stream, double after_s, double threshold) {
  Convergence out;
  if (stream.empty()) return out;
  out.final_ardp = stream.back().ardp;
  std::optional<double> since;
  for (const auto& s : stream) {
    if (s.time_s < after_s) continue;
    const bool below = !std::isnan(s.ardp) && s.ardp < threshold;
    if (below && !since) since = s.time_s;
    if (!below) since.reset();
  }
  if (since) {
    out.converged = true;
    out.time_s = *since;
  }
  return out;
}

double adjustment_rate(std::uint64_t adjustments, double live_nodes, double window_s) {
  if (live_nodes <= 0.0 || window_s <= 0.0) return 0.0;
  return static_cast<double>(adjustments) / live_nodes / (window_s / 3600.0);
}

double control_kbps(std::uint64_t bytes, double live_nodes, double window_s) {
  if (live_nodes <= 0.0 || window_s <= 0.0) return 0.0;
  return static_cast<double>(bytes) * 8.0 / window_s / 1000.0 / live_nodes;
}

RecoveryStats summarize_recovery(std::span<const double> resume_times, std::size_t censored) {
  RecoveryStats out;
  out.resumed = resume_times.size();
  out.censored = censored;
  out.affected = out.resumed + censored;
  if (!resume_times.empty()) {
    out.mean_s = std::accumulate(resume_times.begin(), resume_times.end(), 0.0) /
                 static_cast<double>(resume_times.size());
    out.max_s = *std::max_element(resume_times.begin(), resume_times.end());
  }
  return out;
}

LogAccumulator::LogAccumulator(double period_s, double adjust_window_s)
    : period_(from_seconds(period_s)),
      adjust_buckets_(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(adjust_window_s / period_s)))) {
  if (period_ <= 0) throw Error(ErrorCode::kInvalidArgument, "snapshot period must be positive");
}

void LogAccumulator::grow(std::size_t k) {
  if (k < bytes_.size()) return;
  bytes_.resize(k + 1, 0);
  adjustments_.resize(k + 1, 0);
  live_delta_.resize(k + 1, 0);
}

void LogAccumulator::record(const LogRecord& r) {
  const auto k = static_cast<std::size_t>(r.time / period_);
  grow(k);
  if (r.type == MsgType::kNodeJoin) {
    ++live_delta_[k];
    return;
  }
  if (r.type == MsgType::kNodeLeave) {
    --live_delta_[k];
    return;
  }
  bytes_[k] += r.bytes;
  total_bytes_ += r.bytes;
  ++total_messages_;
  if (is_adjustment(r.type)) {
    ++adjustments_[k];
    adjustment_times_.push_back(r.time);
  }
}

LogAccumulator::Window LogAccumulator::window(std::size_t k) const {
  Window w;
  std::int64_t live = 0;
  for (std::size_t i = 0; i <= k && i < live_delta_.size(); ++i) live += live_delta_[i];
  w.live_nodes = static_cast<std::size_t>(std::max<std::int64_t>(0, live));
  if (k < bytes_.size()) w.bytes = bytes_[k];
  const std::size_t first = k + 1 >= adjust_buckets_ ? k + 1 - adjust_buckets_ : 0;
  for (std::size_t i = first; i <= k && i < adjustments_.size(); ++i) w.adjustments += adjustments_[i];
  const double period_s = to_seconds(period_);
  w.adjust_window_s = static_cast<double>(k + 1 - first) * period_s;
  w.adjustments_per_node_per_hour = adjustment_rate(w.adjustments, static_cast<double>(w.live_nodes), w.adjust_window_s);
  w.control_kbps_per_node = control_kbps(w.bytes, static_cast<double>(w.live_nodes), period_s);
  return w;
}

std::uint64_t LogAccumulator::adjustments_between(SimTime from, SimTime to) const {
  const auto lo = std::lower_bound(adjustment_times_.begin(), adjustment_times_.end(), from);
  const auto hi = std::lower_bound(adjustment_times_.begin(), adjustment_times_.end(), to);
  return static_cast<std::uint64_t>(hi - lo);
}

std::vector<LogAccumulator::Window> replay_windows(std::span<const LogRecord> records, double period_s,
                                                   double adjust_window_s, std::size_t snapshots) {
  LogAccumulator acc(period_s, adjust_window_s);
  for (const auto& r : records) acc.record(r);
  std::vector<LogAccumulator::Window> out;
  out.reserve(snapshots);
  for (std::size_t k = 0; k < snapshots; ++k) out.push_back(acc.window(k));
  return out;
}

std::string_view snapshot_csv_header() {
  return "time_s,live_nodes,joined_nodes,connected_fraction,ardp,ardp_trimmed,stress_mean,stress_max,"
         "adjust_per_node_hour,control_kbps_per_node,clusters";
}

void write_snapshot_csv(std::ostream& out, std::span<const MetricSnapshot> stream) {
  out << snapshot_csv_header() << '\n';
  for (const auto& s : stream) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", num(s.time_s), s.live_nodes, s.joined_nodes,
                       num(s.connected_fraction), num(s.ardp), num(s.ardp_trimmed), num(s.stress_mean),
                       num(s.stress_max), num(s.adjustments_per_node_per_hour), num(s.control_kbps_per_node),
                       s.clusters);
  }
}

}  // namespace lcc
