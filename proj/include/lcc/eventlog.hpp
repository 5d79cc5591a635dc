#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lcc/core.hpp"

namespace lcc {

enum class MsgType : std::uint8_t {
  // markers, zero bytes
  kNodeJoin,
  kNodeLeave,
  // rendezvous and measurement
  kRendezvousRequest,
  kRendezvousReply,
  kRegister,
  kPing,
  kPong,
  // locating
  kLocalizationRequest,
  kProbeRequest,
  kProbeReply,
  kCandidateList,
  kNotALeader,
  // clustering
  kJoinRequest,
  kJoinNotification,
  kJoinReject,
  kJoinAck,
  kLeave,
  kReclaimRequest,
  kKeepAlive,
  kNewCluster,
  kRecoveringRequest,
  kRecoveringAck,
  kSplitNotice,
  kGossip,
  kGossipReply,
  // mesh
  kRouteAdvert,
  kRouteWithdraw,
  kLinkRequest,
  kLinkAccept,
  kLinkReject,
  kLinkDrop,
  kRefineProbe,
  kRefineReply,
};

inline constexpr int kMsgTypeCount = static_cast<int>(MsgType::kRefineReply) + 1;

std::string_view to_string(MsgType t);
std::optional<MsgType> parse_msg_type(std::string_view text);

/// Link additions and removals counted by the adjustment-rate metric.
inline bool is_adjustment(MsgType t) { return t == MsgType::kLinkAccept || t == MsgType::kLinkDrop; }
inline bool is_marker(MsgType t) { return t == MsgType::kNodeJoin || t == MsgType::kNodeLeave; }
/// Traffic generated by probing a newcomer on behalf of a requested leader.
inline bool is_probe_traffic(MsgType t) {
  return t == MsgType::kProbeRequest || t == MsgType::kProbeReply || t == MsgType::kPing || t == MsgType::kPong;
}

inline constexpr std::uint32_t kHeaderBytes = 40;

/// One accounted send (or a join/leave marker).
struct LogRecord {
  SimTime time = 0;
  NodeId target;
  MsgType type = MsgType::kPing;
  std::uint32_t bytes = 0;
  NodeId source;
  /// Newcomer whose join this message serves, kNoNode otherwise.
  NodeId session;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

/// "time target msg_type bytes source session", time in seconds with
/// microsecond precision, absent ids as '-'.
std::string format_record(const LogRecord& r);
LogRecord parse_record(std::string_view line);
std::vector<LogRecord> read_log(std::istream& in);

class LogSink {
 public:
  virtual ~LogSink() = default;
  virtual void record(const LogRecord& r) = 0;
};

class MemoryLogSink : public LogSink {
 public:
  void record(const LogRecord& r) override { records_.push_back(r); }
  const std::vector<LogRecord>& records() const { return records_; }

 private:
  std::vector<LogRecord> records_;
};

class StreamLogSink : public LogSink {
 public:
  explicit StreamLogSink(std::ostream& out) : out_(out) {}
  void record(const LogRecord& r) override;

 private:
  std::ostream& out_;
};

}  // namespace lcc
