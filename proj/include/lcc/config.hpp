#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lcc/core.hpp"
#include "lcc/locating.hpp"
#include "lcc/topology.hpp"

namespace lcc {

enum class Protocol { kLcc, kFlat };
enum class RecoveryScheme { kLcc, kGrandparent };

std::string_view to_string(Protocol p);
std::string_view to_string(RecoveryScheme r);

struct FailureSpec {
  enum class Selector { kRandomFraction, kLeadersFraction, kNodes };

  double at_s = 0.0;
  Selector selector = Selector::kRandomFraction;
  double fraction = 0.0;
  std::vector<std::uint32_t> nodes;
  std::optional<double> rejoin_at_s;

  /// "at=5400 select=random_fraction(0.2) rejoin_at=7200"
  static FailureSpec parse(std::string_view text);
  std::string to_string() const;
};

struct ScenarioConfig {
  Protocol protocol = Protocol::kLcc;
  RecoveryScheme recovery = RecoveryScheme::kLcc;
  std::size_t n = 100;
  TopologyModel topology = TopologyModel::kEuclidean2D;
  std::uint64_t seed = 1;

  // locating
  double r_max_ms = 50.0;
  double alpha_ms = 4.0;
  int max_level = 9;
  int k_per_level = 8;
  int stop_c = 16;
  LocatingMode locating_mode = LocatingMode::kSelective;

  // mesh
  double rt_s = 30.0;
  double improvement_epsilon_ms = 5.0;
  int flat_links = 3;
  double advert_interval_s = 1.0;
  double failure_detect_s = 1.0;
  int source_fanout = 8;
  FanoutDistribution fanout;

  // clustering
  double keepalive_s = 5.0;
  int leader_timeout_periods = 3;
  double gossip_s = 10.0;
  int gossip_g = 8;
  int view_bound = 64;
  double stability_s = 60.0;
  int edge_cap = 3;

  // churn: joins per second while unused hosts remain; lifetime rate per
  // second (0 = nodes never leave)
  double join_rate = 1.0;
  double lifetime_param = 0.0;
  std::vector<FailureSpec> failures;

  double duration_s = 600.0;
  double snapshot_period_s = 10.0;
  double adjust_window_s = 600.0;
  double recovery_horizon_s = 120.0;

  /// Throws Error(kInvalidConfiguration) on the first bad value.
  void validate() const;

  /// Parses flat "key = value" text; '#' starts a comment. Unknown keys
  /// and malformed values throw Error(kInvalidConfiguration).
  static ScenarioConfig parse(std::string_view text);
  static ScenarioConfig load(const std::string& path);

  /// Applies one "key=value" override on top of the current values.
  void set(std::string_view key, std::string_view value);
  /// Canonical text form; parse(to_text()) round-trips.
  std::string to_text() const;
};

}  // namespace lcc
