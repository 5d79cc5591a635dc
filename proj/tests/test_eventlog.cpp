#include <doctest.h>

#include <sstream>

#include "lcc/eventlog.hpp"

using namespace lcc;

TEST_CASE("record line format") {
  LogRecord r;
  r.time = 12'000'345;
  r.target = NodeId(7);
  r.type = MsgType::kLinkAccept;
  r.bytes = 48;
  r.source = NodeId(3);
  CHECK(format_record(r) == "12.000345 7 LinkAccept 48 3 -");
  r.session = NodeId(9);
  r.time = 5;
  CHECK(format_record(r) == "0.000005 7 LinkAccept 48 3 9");
}

TEST_CASE("every message type round-trips") {
  for (std::size_t i = 0; i < static_cast<std::size_t>(kMsgTypeCount); ++i) {
    LogRecord r;
    r.time = 1'234'567'890 + static_cast<SimTime>(i);
    r.type = static_cast<MsgType>(i);
    r.target = NodeId(static_cast<std::uint32_t>(i));
    r.bytes = kHeaderBytes + static_cast<std::uint32_t>(8 * i);
    r.source = i % 2 ? NodeId(1) : kNoNode;
    r.session = i % 3 ? kNoNode : NodeId(2);
    const auto line = format_record(r);
    CHECK(parse_record(line) == r);
    CHECK(parse_msg_type(to_string(r.type)) == r.type);
  }
}

TEST_CASE("log stream round-trips") {
  std::ostringstream out;
  StreamLogSink sink(out);
  MemoryLogSink mem;
  for (int i = 0; i < 5; ++i) {
    LogRecord r{static_cast<SimTime>(i * 1000), NodeId(1), MsgType::kGossip, 104, NodeId(2), kNoNode};
    sink.record(r);
    mem.record(r);
  }
  std::istringstream in(out.str() + "\n");
  CHECK(read_log(in) == mem.records());
}

TEST_CASE("malformed lines") {
  for (const char* bad : {"", "1.000000 1 Ping 40 2", "1.000000 1 Ping 40 2 - extra", "1.0 1 Ping 40 2 -",
                          "1.000000 1 Shout 40 2 -", "1.000000 x Ping 40 2 -", "1.000000 1 Ping -40 2 -",
                          "1000000 1 Ping 40 2 -"}) {
    CHECK_THROWS_AS(parse_record(bad), Error);
  }
}

TEST_CASE("adjustment classification") {
  CHECK(is_adjustment(MsgType::kLinkAccept));
  CHECK(is_adjustment(MsgType::kLinkDrop));
  CHECK_FALSE(is_adjustment(MsgType::kLinkRequest));
  CHECK_FALSE(is_adjustment(MsgType::kLinkReject));
  CHECK(is_marker(MsgType::kNodeJoin));
  CHECK(is_probe_traffic(MsgType::kPong));
}
