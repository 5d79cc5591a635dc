#include "lcc/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace lcc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kInvalidConfiguration: return "INVALID_CONFIGURATION";
    case ErrorCode::kNotALeader: return "NOT_A_LEADER";
    case ErrorCode::kBootstrapFailed: return "BOOTSTRAP_FAILED";
    case ErrorCode::kSaturated: return "SATURATED";
    case ErrorCode::kJoinTimeout: return "JOIN_TIMEOUT";
    case ErrorCode::kPartition: return "PARTITION";
    case ErrorCode::kNoHopPaths: return "NO_HOP_PATHS";
  }
  return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), what)), code_(code) {}

int fanout_from_capacity(double access_capacity_kbps, double playback_rate_kbps) {
  if (!(playback_rate_kbps > 0.0)) {
    throw Error(ErrorCode::kInvalidConfiguration, "playback rate must be positive");
  }
  if (!(access_capacity_kbps >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "access capacity must be non-negative");
  }
  return static_cast<int>(std::floor(access_capacity_kbps / playback_rate_kbps));
}

int cluster_overall_capacity(std::span<const int> member_fanouts) {
  if (member_fanouts.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "a cluster holds at least its leader");
  }
  const int total = std::accumulate(member_fanouts.begin(), member_fanouts.end(), 0);
  return total - static_cast<int>(member_fanouts.size());
}

FanoutDistribution::FanoutDistribution()
    : FanoutDistribution({{1, 0.2}, {2, 0.4}, {4, 0.3}, {8, 0.1}}) {}

FanoutDistribution::FanoutDistribution(std::vector<Bucket> buckets) : buckets_(std::move(buckets)) {
  if (buckets_.empty()) {
    throw Error(ErrorCode::kInvalidConfiguration, "fan-out distribution is empty");
  }
  double total = 0.0;
  for (const auto& b : buckets_) {
    if (b.fanout < 0 || !(b.weight > 0.0)) {
      throw Error(ErrorCode::kInvalidConfiguration,
                  fmt::format("bad fan-out bucket {}:{}", b.fanout, b.weight));
    }
    total += b.weight;
  }
  double running = 0.0;
  for (const auto& b : buckets_) {
    running += b.weight / total;
    cumulative_.push_back(running);
  }
  cumulative_.back() = 1.0;
}

int FanoutDistribution::sample(double u) const {
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                         buckets_.size() - 1);
  return buckets_[idx].fanout;
}

FanoutDistribution FanoutDistribution::parse(std::string_view text) {
  std::vector<Bucket> buckets;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = text.substr(0, comma);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw Error(ErrorCode::kInvalidConfiguration, fmt::format("bad fan-out bucket '{}'", item));
    }
    Bucket b{};
    const auto f = item.substr(0, colon);
    const auto w = std::string(item.substr(colon + 1));
    if (std::from_chars(f.data(), f.data() + f.size(), b.fanout).ec != std::errc{}) {
      throw Error(ErrorCode::kInvalidConfiguration, fmt::format("bad fan-out value '{}'", f));
    }
    try {
      std::size_t used = 0;
      b.weight = std::stod(w, &used);
      if (used != w.size()) throw std::invalid_argument(w);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfiguration, fmt::format("bad fan-out weight '{}'", w));
    }
    buckets.push_back(b);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return FanoutDistribution(std::move(buckets));
}

std::string FanoutDistribution::to_string() const {
  std::string out;
  for (const auto& b : buckets_) {
    if (!out.empty()) out += ',';
    out += fmt::format("{}:{}", b.fanout, b.weight);
  }
  return out;
}

}  // namespace lcc
