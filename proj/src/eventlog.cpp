#include "lcc/eventlog.hpp"

#include <array>
#include <charconv>
#include <istream>
#include <ostream>

#include <fmt/format.h>

namespace lcc {

namespace {

constexpr std::array<std::string_view, kMsgTypeCount> kNames{
    "NodeJoin",         "NodeLeave",      "RendezvousRequest", "RendezvousReply", "Register",
    "Ping",             "Pong",           "LocalizationRequest", "ProbeRequest",  "ProbeReply",
    "CandidateList",    "NotALeader",     "JoinRequest",       "JoinNotification", "JoinReject",
    "JoinAck",          "Leave",          "ReclaimRequest",    "KeepAlive",       "NewCluster",
    "RecoveringRequest", "RecoveringAck", "SplitNotice",       "Gossip",          "GossipReply",
    "RouteAdvert",      "RouteWithdraw",  "LinkRequest",       "LinkAccept",      "LinkReject",
    "LinkDrop",         "RefineProbe",    "RefineReply",
};

std::string id_text(NodeId n) { return n.valid() ? std::to_string(n.value) : "-"; }

[[noreturn]] void bad_line(std::string_view line) {
  throw Error(ErrorCode::kInvalidArgument, fmt::format("malformed log line '{}'", line));
}

std::uint64_t parse_uint(std::string_view s, std::string_view line) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) bad_line(line);
  return v;
}

NodeId parse_id(std::string_view s, std::string_view line) {
  if (s == "-") return kNoNode;
  return NodeId(static_cast<std::uint32_t>(parse_uint(s, line)));
}

}  // namespace

std::string_view to_string(MsgType t) { return kNames[static_cast<std::size_t>(t)]; }

std::optional<MsgType> parse_msg_type(std::string_view text) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == text) return static_cast<MsgType>(i);
  }
  return std::nullopt;
}

std::string format_record(const LogRecord& r) {
  return fmt::format("{}.{:06} {} {} {} {} {}", r.time / 1000000, r.time % 1000000, id_text(r.target),
                     to_string(r.type), r.bytes, id_text(r.source), id_text(r.session));
}

LogRecord parse_record(std::string_view line) {
  std::array<std::string_view, 6> f;
  std::size_t count = 0, pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    if (pos >= line.size()) break;
    const auto end = line.find(' ', pos);
    if (count == f.size()) bad_line(line);
    f[count++] = line.substr(pos, end == std::string_view::npos ? line.npos : end - pos);
    pos = end == std::string_view::npos ? line.size() : end;
  }
  if (count != f.size()) bad_line(line);
  LogRecord r;
  const auto dot = f[0].find('.');
  if (dot == std::string_view::npos || f[0].size() - dot - 1 != 6) bad_line(line);
  r.time = static_cast<SimTime>(parse_uint(f[0].substr(0, dot), line) * 1000000 +
                                parse_uint(f[0].substr(dot + 1), line));
  r.target = parse_id(f[1], line);
  const auto type = parse_msg_type(f[2]);
  if (!type) bad_line(line);
  r.type = *type;
  r.bytes = static_cast<std::uint32_t>(parse_uint(f[3], line));
  r.source = parse_id(f[4], line);
  r.session = parse_id(f[5], line);
  return r;
}

std::vector<LogRecord> read_log(std::istream& in) {
  std::vector<LogRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_record(line));
  }
  return out;
}

void StreamLogSink::record(const LogRecord& r) {
  out_ << format_record(r) << '\n';
}

}  // namespace lcc
