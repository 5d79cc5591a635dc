#include <doctest.h>

#include <cmath>
#include <sstream>

#include "lcc/metrics.hpp"
#include "lcc/simulator.hpp"

using namespace lcc;

namespace {

DeliveryTree chain_tree(std::size_t n, std::vector<std::pair<std::uint32_t, std::uint32_t>> edges) {
  DeliveryTree t;
  t.source = NodeId(0);
  t.parent.assign(n, kNoNode);
  t.present.assign(n, true);
  t.reachable.assign(n, false);
  t.reachable[0] = true;
  for (auto [child, parent] : edges) t.parent[child] = NodeId(parent);
  // edges are listed parent-first
  for (auto [child, parent] : edges) t.reachable[child] = t.reachable[parent];
  for (std::size_t i = 0; i < n; ++i) {
    if (!t.reachable[i]) t.unreachable.push_back(NodeId(static_cast<std::uint32_t>(i)));
  }
  return t;
}

}  // namespace

TEST_CASE("ardp hand example") {
  // s=0, 1 under s, 2 under 1: ratios 10/10 and (10+30)/30
  const auto topo = Topology::from_matrix({{0, 10, 30}, {10, 0, 30}, {30, 30, 0}});
  const auto tree = chain_tree(3, {{1, 0}, {2, 1}});
  const auto r = ardp(tree, topo, NodeId(0));
  CHECK(r.counted == 2);
  CHECK(r.connected_fraction == 1.0);
  CHECK(r.ardp == doctest::Approx((1.0 + 4.0 / 3.0) / 2.0));
}

TEST_CASE("ardp leaves out disconnected receivers") {
  const auto topo = Topology::from_matrix({{0, 10, 30}, {10, 0, 30}, {30, 30, 0}});
  const auto tree = chain_tree(3, {{1, 0}});
  const auto r = ardp(tree, topo, NodeId(0));
  CHECK(r.receivers == 2);
  CHECK(r.counted == 1);
  CHECK(r.connected_fraction == 0.5);
  CHECK(r.ardp == 1.0);

  const auto none = ardp(chain_tree(3, {}), topo, NodeId(0));
  CHECK(std::isnan(none.ardp));
  CHECK(none.connected_fraction == 0.0);
}

TEST_CASE("ardp of a star is one") {
  const auto topo = Topology::generate(30, TopologyModel::kEuclidean2D, 4);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t i = 1; i < 30; ++i) edges.emplace_back(i, 0);
  CHECK(ardp(chain_tree(30, edges), topo, NodeId(0)).ardp == doctest::Approx(1.0));
}

TEST_CASE("link stress on transit-stub") {
  const auto topo = Topology::generate(40, TopologyModel::kTransitStub, 2);
  SUBCASE("one edge loads each link on its path once") {
    const auto s = link_stress(chain_tree(40, {{5, 0}}), topo);
    CHECK(s.max == 1);
    CHECK(s.mean == 1.0);
    CHECK(s.traversals == topo.hop_path(NodeId(0), NodeId(5)).size());
  }
  SUBCASE("a star shares the source access link") {
    // every copy leaves over the source's own access link
    for (std::uint32_t k : {2u, 4u, 9u}) {
      std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
      for (std::uint32_t i = 1; i <= k; ++i) edges.emplace_back(i, 0);
      const auto s = link_stress(chain_tree(40, edges), topo);
      CHECK(s.max == k);
      CHECK(s.mean >= 1.0);
      CHECK(s.mean <= static_cast<double>(k));
    }
  }
  SUBCASE("no hop paths") {
    const auto e = Topology::generate(5, TopologyModel::kEuclidean2D, 2);
    CHECK_THROWS_AS(link_stress(chain_tree(5, {{1, 0}}), e), Error);
  }
}

TEST_CASE("trimmed mean") {
  CHECK(trimmed_mean({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) == doctest::Approx(5.5));
  CHECK(trimmed_mean({1, 2, 3, 4, 100}) == doctest::Approx(3.0));
  CHECK(trimmed_mean({7, 1}) == doctest::Approx(4.0));
  CHECK(std::isnan(trimmed_mean({})));
}

TEST_CASE("convergence ignores an early dip") {
  std::vector<MetricSnapshot> s(5);
  const double vals[] = {3.0, 1.5, 2.5, 1.8, 1.9};
  for (int i = 0; i < 5; ++i) {
    s[i].time_s = 10.0 * i;
    s[i].ardp = vals[i];
  }
  const auto c = convergence_time(s, 0.0);
  CHECK(c.converged);
  CHECK(c.time_s == 30.0);
  CHECK(c.final_ardp == 1.9);
  s.back().ardp = 2.1;
  CHECK_FALSE(convergence_time(s, 0.0).converged);
}

TEST_CASE("rates") {
  // 10 adjustments by 5 nodes over half an hour
  CHECK(adjustment_rate(10, 5, 1800) == doctest::Approx(4.0));
  // 40 B/s per node
  CHECK(control_kbps(40 * 10 * 3, 3, 10) == doctest::Approx(0.32));
  CHECK(adjustment_rate(10, 0, 1800) == 0.0);
}

TEST_CASE("recovery summary") {
  const std::vector<double> t{1.0, 2.0, 6.0};
  const auto r = summarize_recovery(t, 2);
  CHECK(r.affected == 5);
  CHECK(r.resumed == 3);
  CHECK(r.mean_s == doctest::Approx(3.0));
  CHECK(r.max_s == 6.0);
}

TEST_CASE("accumulator buckets") {
  LogAccumulator acc(10.0, 20.0);
  acc.record({from_seconds(1), NodeId(1), MsgType::kNodeJoin, 0, kNoNode, kNoNode});
  acc.record({from_seconds(2), NodeId(2), MsgType::kNodeJoin, 0, kNoNode, kNoNode});
  acc.record({from_seconds(3), NodeId(1), MsgType::kLinkAccept, 48, NodeId(2), kNoNode});
  acc.record({from_seconds(10), NodeId(1), MsgType::kLinkDrop, 40, NodeId(2), kNoNode});
  acc.record({from_seconds(25), NodeId(2), MsgType::kNodeLeave, 0, kNoNode, kNoNode});
  acc.record({from_seconds(25), NodeId(1), MsgType::kPing, 40, NodeId(2), kNoNode});
  const auto w0 = acc.window(0);
  CHECK(w0.live_nodes == 2);
  CHECK(w0.bytes == 48);
  CHECK(w0.adjustments == 1);
  const auto w1 = acc.window(1);
  CHECK(w1.bytes == 40);
  CHECK(w1.adjustments == 2);
  CHECK(w1.adjust_window_s == 20.0);
  CHECK(w1.adjustments_per_node_per_hour == doctest::Approx(2.0 / 2.0 / (20.0 / 3600.0)));
  const auto w2 = acc.window(2);
  CHECK(w2.live_nodes == 1);
  CHECK(w2.adjustments == 1);
  CHECK(w2.control_kbps_per_node == doctest::Approx(40 * 8 / 10.0 / 1000.0));
  CHECK(acc.total_messages() == 3);
  CHECK(acc.adjustments_between(0, from_seconds(10)) == 1);
}

TEST_CASE("log replay matches live columns") {
  ScenarioConfig cfg;
  cfg.n = 60;
  cfg.duration_s = 400;
  cfg.join_rate = 0.5;
  cfg.lifetime_param = 1.0 / 300.0;
  cfg.adjust_window_s = 120;
  Simulator sim(cfg);
  MemoryLogSink log;
  sim.add_sink(log);
  const auto res = sim.run();
  REQUIRE(res.snapshots.size() == 40);
  const auto w = replay_windows(log.records(), cfg.snapshot_period_s, cfg.adjust_window_s, res.snapshots.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const auto& s = res.snapshots[k];
    CHECK(s.time_s == doctest::Approx(cfg.snapshot_period_s * static_cast<double>(k + 1)));
    CHECK(s.live_nodes == w[k].live_nodes);
    CHECK(s.adjustments_per_node_per_hour == doctest::Approx(w[k].adjustments_per_node_per_hour));
    CHECK(s.control_kbps_per_node == doctest::Approx(w[k].control_kbps_per_node));
  }
}

TEST_CASE("csv layout") {
  MetricSnapshot s;
  s.time_s = 10;
  s.live_nodes = 3;
  s.joined_nodes = 2;
  s.ardp = std::nan("");
  s.clusters = 1;
  std::ostringstream out;
  write_snapshot_csv(out, std::span<const MetricSnapshot>(&s, 1));
  CHECK(out.str() == std::string(snapshot_csv_header()) +
                         "\n10.000000,3,2,1.000000,NA,0.000000,0.000000,0.000000,0.000000,0.000000,1\n");
}
