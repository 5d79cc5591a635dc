#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcc {

/// Opaque node identity. Unique within a run.
struct NodeId {
  std::uint32_t value = kInvalid;

  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();

  constexpr NodeId() = default;
  constexpr explicit NodeId(std::uint32_t v) : value(v) {}
  constexpr bool valid() const { return value != kInvalid; }
  friend constexpr auto operator<=>(NodeId, NodeId) = default;
};

/// Opaque cluster identity, minted only by cluster creation.
struct ClusterId {
  std::uint32_t value = kInvalid;

  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();

  constexpr ClusterId() = default;
  constexpr explicit ClusterId(std::uint32_t v) : value(v) {}
  constexpr bool valid() const { return value != kInvalid; }
  friend constexpr auto operator<=>(ClusterId, ClusterId) = default;
};

inline constexpr NodeId kNoNode{};
inline constexpr ClusterId kNoCluster{};

/// Round-trip time in milliseconds.
using Millis = double;

/// Simulation time in integer microseconds. Integer time keeps event
/// ordering and log serialization exact.
using SimTime = std::int64_t;

constexpr SimTime from_ms(Millis ms) {
  return static_cast<SimTime>(ms * 1000.0 + (ms >= 0 ? 0.5 : -0.5));
}
constexpr SimTime from_seconds(double s) { return from_ms(s * 1000.0); }
constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }
constexpr Millis to_ms(SimTime t) { return static_cast<double>(t) / 1e3; }

enum class ErrorCode {
  kInvalidArgument,
  kInvalidConfiguration,
  kNotALeader,
  kBootstrapFailed,
  kSaturated,
  kJoinTimeout,
  kPartition,
  kNoHopPaths,
};

std::string_view to_string(ErrorCode code);

/// Error type thrown by every module. Carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Maximum simultaneous outgoing streams a node can serve:
/// floor(access_capacity / playback_rate), both in kbps.
int fanout_from_capacity(double access_capacity_kbps, double playback_rate_kbps);

/// Sum of member fan-outs minus member count. May be negative.
int cluster_overall_capacity(std::span<const int> member_fanouts);

/// Discrete fan-out distribution used to assign node capacities.
class FanoutDistribution {
 public:
  struct Bucket {
    int fanout;
    double weight;
  };

  FanoutDistribution();  // {1: 20%, 2: 40%, 4: 30%, 8: 10%}
  explicit FanoutDistribution(std::vector<Bucket> buckets);

  /// Maps a uniform sample u in [0, 1) to a fan-out value.
  int sample(double u) const;
  const std::vector<Bucket>& buckets() const { return buckets_; }

  /// Parses "1:0.2,2:0.4,4:0.3,8:0.1".
  static FanoutDistribution parse(std::string_view text);
  std::string to_string() const;

 private:
  std::vector<Bucket> buckets_;
  std::vector<double> cumulative_;
};

}  // namespace lcc

template <>
struct std::hash<lcc::NodeId> {
  std::size_t operator()(lcc::NodeId id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};

template <>
struct std::hash<lcc::ClusterId> {
  std::size_t operator()(lcc::ClusterId id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
