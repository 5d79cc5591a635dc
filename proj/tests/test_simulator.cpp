#include <doctest.h>

#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "lcc/simulator.hpp"

using namespace lcc;

namespace {

ScenarioConfig small(std::uint64_t seed = 3) {
  ScenarioConfig c;
  c.n = 120;
  c.seed = seed;
  c.join_rate = 2.0;
  c.duration_s = 400;
  return c;
}

std::string run_text(const ScenarioConfig& cfg, std::string* csv) {
  Simulator sim(cfg);
  std::ostringstream log;
  StreamLogSink sink(log);
  sim.add_sink(sink);
  const auto res = sim.run();
  std::ostringstream out;
  write_snapshot_csv(out, res.snapshots);
  *csv = out.str();
  return log.str();
}

std::size_t subtree_size(const DeliveryTree& t, NodeId x) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < t.parent.size(); ++i) {
    if (!t.reachable[i]) continue;
    for (NodeId p = t.parent[i]; p.valid(); p = t.parent[p.value]) {
      if (p == x) {
        ++count;
        break;
      }
    }
  }
  return count;
}

// Picks a node by its subtree size just before `at_s`, then fails exactly that
// node in an identical run.
RecoveryRecord fail_one(bool interior) {
  auto cfg = small(5);
  cfg.duration_s = 500;
  const double at = 300.0;
  Simulator probe(cfg);
  probe.run_until(at - 0.001);
  const auto tree = probe.delivery_tree();
  NodeId pick;
  std::size_t expected = 0;
  for (std::uint32_t i = 1; i < cfg.n && !pick.valid(); ++i) {
    if (!probe.joined(NodeId(i)) || !tree.reachable[i]) continue;
    const auto size = subtree_size(tree, NodeId(i));
    if ((size > 0) == interior) {
      pick = NodeId(i);
      expected = size;
    }
  }
  REQUIRE(pick.valid());
  cfg.failures.push_back(FailureSpec::parse(fmt::format("at={} select=nodes({})", at, pick.value)));
  Simulator sim(cfg);
  sim.run_until(at - 0.001);
  CHECK(subtree_size(sim.delivery_tree(), pick) == expected);
  const auto res = sim.run();
  REQUIRE(res.recoveries.size() == 1);
  CHECK(res.recoveries[0].failed == 1);
  CHECK(res.recoveries[0].affected == expected);
  CHECK_FALSE(sim.alive(pick));
  return res.recoveries[0];
}

}  // namespace

TEST_CASE("same seed gives byte-identical output") {
  auto cfg = small();
  cfg.lifetime_param = 1.0 / 200.0;
  std::string csv_a, csv_b, csv_c;
  const auto a = run_text(cfg, &csv_a);
  const auto b = run_text(cfg, &csv_b);
  CHECK(!a.empty());
  CHECK(a == b);
  CHECK(csv_a == csv_b);
  cfg.seed = 4;
  const auto c = run_text(cfg, &csv_c);
  CHECK(a != c);
}

TEST_CASE("invariants hold at every snapshot") {
  for (auto protocol : {Protocol::kLcc, Protocol::kFlat}) {
    auto cfg = small();
    cfg.protocol = protocol;
    cfg.lifetime_param = 1.0 / 300.0;
    cfg.failures.push_back(FailureSpec::parse("at=250 select=random_fraction(0.2) rejoin_at=300"));
    Simulator sim(cfg);
    const auto res = sim.run();
    CHECK(res.invariant_checks > 0);
    for (const auto& v : res.violation_samples) MESSAGE(v);
    CHECK(res.invariant_violations == 0);
    CHECK(sim.check_invariants().empty());
    CHECK(sim.delivery_tree().valid());
  }
}

TEST_CASE("every send is delivered once") {
  Simulator sim(small());
  const auto res = sim.run();
  CHECK(res.messages > 0);
  CHECK(res.messages == res.deliveries_scheduled);
}

TEST_CASE("zero duration") {
  auto cfg = small();
  cfg.duration_s = 0;
  Simulator sim(cfg);
  MemoryLogSink log;
  sim.add_sink(log);
  const auto res = sim.run();
  CHECK(log.records().empty());
  CHECK(res.messages == 0);
}

TEST_CASE("everyone joins and receives without churn") {
  for (auto protocol : {Protocol::kLcc, Protocol::kFlat}) {
    auto cfg = small();
    cfg.protocol = protocol;
    Simulator sim(cfg);
    const auto res = sim.run();
    CHECK(res.joined_nodes == cfg.n);
    REQUIRE_FALSE(res.snapshots.empty());
    CHECK(res.snapshots.back().connected_fraction == 1.0);
    CHECK(res.snapshots.back().ardp >= 1.0);
    if (protocol == Protocol::kLcc) {
      CHECK(res.leaderless_members == 0);
      CHECK(res.snapshots.back().clusters >= 1);
      for (std::uint32_t i = 1; i < cfg.n; ++i) CHECK(sim.primary_leader(NodeId(i)).has_value());
    } else {
      CHECK(res.snapshots.back().clusters == 0);
    }
  }
}

TEST_CASE("leaf failure affects nobody") {
  const auto rec = fail_one(false);
  CHECK(rec.resume_s.empty());
  CHECK(rec.censored == 0);
}

TEST_CASE("interior failure recovers its subtree") {
  const auto rec = fail_one(true);
  CHECK(rec.resume_s.size() + rec.censored == rec.affected);
  CHECK(rec.censored == 0);
  for (double t : rec.resume_s) CHECK(t > 0.0);
}

TEST_CASE("leader crash leaves no cluster leaderless") {
  auto cfg = small();
  cfg.duration_s = 600;
  cfg.failures.push_back(FailureSpec::parse("at=300 select=leaders_fraction(1)"));
  Simulator sim(cfg);
  const auto res = sim.run();
  REQUIRE(res.recoveries.size() == 1);
  CHECK(res.recoveries[0].failed >= 1);
  CHECK(res.leaderless_members == 0);
  CHECK(res.invariant_violations == 0);
  CHECK(res.snapshots.back().connected_fraction == 1.0);
}

TEST_CASE("grandparent recovery") {
  auto cfg = small();
  cfg.recovery = RecoveryScheme::kGrandparent;
  cfg.failures.push_back(FailureSpec::parse("at=250 select=random_fraction(0.2)"));
  Simulator sim(cfg);
  const auto res = sim.run();
  CHECK(res.invariant_violations == 0);
  CHECK(res.recoveries.size() == 1);
}

TEST_CASE("locate records") {
  Simulator sim(small());
  const auto res = sim.run();
  CHECK(res.locates.size() == small().n - 1);
  for (const auto& l : res.locates) {
    CHECK(l.completed);
    CHECK(l.requested <= small().stop_c);
  }
}

TEST_CASE("explicit topology overrides n") {
  auto cfg = small();
  cfg.duration_s = 60;
  Simulator sim(cfg, Topology::generate(30, TopologyModel::kTransitStub, 9));
  const auto res = sim.run();
  CHECK(sim.topology().size() == 30);
  CHECK(res.joined_nodes == 30);
  CHECK_FALSE(std::isnan(res.snapshots.back().stress_mean));
}
