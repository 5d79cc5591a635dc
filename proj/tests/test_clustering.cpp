#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "lcc/clustering.hpp"

using namespace lcc;

namespace {

NodeId N(std::uint32_t v) { return NodeId(v); }

PriorityVector pv(int f, double inv_dl, double t, double inv_cd, bool migrated = false) {
  return PriorityVector{f, inv_dl, t, inv_cd, migrated};
}

std::vector<NodeId> cache_order(const ClusterView& v) {
  std::vector<NodeId> out;
  for (const auto& e : v.cache().entries()) out.push_back(e.node);
  return out;
}

}  // namespace

TEST_CASE("priority arithmetic") {
  const PriorityWeights w;
  CHECK(compute_priority({1, 0.5, 0.2, 0.1}, w) == doctest::Approx(0.4 + 0.15 + 0.04 + 0.01));
  CHECK(compute_priority({1, 0.5, 0.2, 0.1}, w) == doctest::Approx(0.60));
  CHECK(compute_priority({0.2, 1, 1, 1}, w) == doctest::Approx(0.68));

  PriorityWeights bad;
  bad.w = {0.4, 0.4, 0.1, 0.1};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.w = {0.4, 0.3, 0.2, 0.0};
  CHECK_THROWS_AS(compute_priority({1, 1, 1, 1}, bad), Error);
}

TEST_CASE("normalization") {
  const std::vector<PriorityVector> pvs{pv(2, 0.1, 10, 0.0), pv(4, 0.2, 30, 0.0), pv(8, 0.05, 20, 0.0)};
  const auto n = normalize(pvs);
  CHECK(n[0][0] == doctest::Approx(0.0));
  CHECK(n[1][0] == doctest::Approx(2.0 / 6.0));
  CHECK(n[2][0] == doctest::Approx(1.0));
  CHECK(n[1][1] == doctest::Approx(1.0));
  CHECK(n[2][1] == doctest::Approx(0.0));
  CHECK(n[0][2] == doctest::Approx(0.0));
  CHECK(n[2][2] == doctest::Approx(0.5));
  for (const auto& v : n) CHECK(v[3] == 0.0);

  const std::vector<PriorityVector> same{pv(3, 0.1, 5, 0.2), pv(3, 0.1, 5, 0.2)};
  const auto r = rank_priorities(same, PriorityWeights{});
  CHECK(r[0] == r[1]);

  const std::vector<PriorityVector> dom{pv(4, 0.2, 50, 0.3), pv(2, 0.1, 10, 0.1), pv(3, 0.15, 20, 0.2)};
  const auto rd = rank_priorities(dom, PriorityWeights{});
  CHECK(rd[0] > rd[2]);
  CHECK(rd[2] > rd[1]);
}

TEST_CASE("make_priority_vector") {
  const auto p = make_priority_vector(4, std::nullopt, 12.0, 20.0, false);
  CHECK(p.fanout_max == 4);
  CHECK(p.inv_delivery_latency == doctest::Approx(1.0));
  CHECK(p.inv_leader_distance == doctest::Approx(0.05));
  const auto q = make_priority_vector(1, 50.0, 0.0, std::nullopt, true);
  CHECK(q.inv_delivery_latency == doctest::Approx(0.02));
  CHECK(q.inv_leader_distance == 0.0);
  CHECK(q.migrated);
}

TEST_CASE("local cache order and pinning") {
  const ElectionParams params;
  LocalCache cache;
  std::vector<CacheEntry> entries{
      {N(1), 0, pv(8, 0.1, 300, 0.1), 0, false},
      {N(2), 0, pv(4, 0.1, 300, 0.1), 0, false},
      {N(3), 0, pv(2, 0.1, 300, 0.1), 0, false},
      {N(4), 0, pv(1, 0.1, 300, 0.1), 0, false},
  };
  cache.rebuild(entries, params.weights, params.stability_threshold_s);
  REQUIRE(cache.size() == 4);
  CHECK(cache.entries()[0].node == N(1));
  CHECK(cache.entries()[3].node == N(4));

  // A young join winner with the best PV never sits at the top.
  entries.push_back({N(5), 0, pv(16, 0.2, 10, 0.2), 0, true});
  cache.rebuild(entries, params.weights, params.stability_threshold_s);
  CHECK(cache.entries()[0].node == N(1));
  CHECK(cache.entries()[1].node == N(5));
  CHECK(*cache.position(N(2)) == 2);

  // Once old enough it competes normally.
  entries.back().pv.lifetime_s = 61;
  cache.rebuild(entries, params.weights, params.stability_threshold_s);
  CHECK(cache.entries()[0].node == N(5));

  // Ties fall to the lower id.
  std::vector<CacheEntry> ties{{N(9), 0, pv(2, 0.1, 5, 0.1), 0, false}, {N(3), 0, pv(2, 0.1, 5, 0.1), 0, false}};
  cache.rebuild(ties, params.weights, params.stability_threshold_s);
  CHECK(cache.entries()[0].node == N(3));
}

TEST_CASE("keep-alive handling") {
  const ElectionParams params;
  ClusterView view(N(2), ClusterId(7), N(1), 50.0, 0);
  on_keepalive(view, N(1), pv(4, 0.1, 100, 0.1), from_seconds(10), params);
  CHECK(view.leader_last_heard() == from_seconds(10));
  on_keepalive(view, N(3), pv(2, 0.1, 100, 0.1), from_seconds(11), params);
  CHECK(view.leader_last_heard() == from_seconds(10));
  CHECK(view.state() == ClusterState::kStabilized);
  on_keepalive(view, N(3), pv(2, 0.1, 100, 0.1, true), from_seconds(12), params);
  CHECK(view.migrated_set().contains(N(3)));
  CHECK(view.state() == ClusterState::kTemporary);
  CHECK(view.members().size() == 2);
}

TEST_CASE("PV overtaking against a pinned winner") {
  const ElectionParams params;
  ClusterView view(N(1), ClusterId(1), N(1), 50.0, 0);
  on_keepalive(view, N(1), pv(4, 0.1, 500, 0.1), 0, params);
  on_keepalive(view, N(2), pv(2, 0.1, 400, 0.1), 0, params);
  on_keepalive(view, N(3), pv(1, 0.1, 300, 0.1), 0, params);
  CHECK(cache_order(view) == std::vector<NodeId>{N(1), N(2), N(3)});
  // N(3) improves past N(2)
  on_keepalive(view, N(3), pv(3, 0.15, 420, 0.1), 0, params);
  CHECK(cache_order(view) == std::vector<NodeId>{N(1), N(3), N(2)});
  // A newcomer that ranks first at its joining is pinned second.
  on_keepalive(view, N(4), pv(16, 0.5, 1, 0.5), 0, params);
  CHECK(cache_order(view) == std::vector<NodeId>{N(1), N(4), N(3), N(2)});
  CHECK(view.members().at(N(4)).join_winner);
  // While pinned, a better established PV cannot pass it.
  on_keepalive(view, N(2), pv(8, 0.4, 600, 0.4), 0, params);
  CHECK(cache_order(view)[1] == N(4));
}

TEST_CASE("leader timeout promotes the next cache entry") {
  const ElectionParams params;
  auto make = [&](NodeId self) {
    ClusterView v(self, ClusterId(1), N(1), 50.0, 0);
    on_keepalive(v, N(1), pv(8, 0.1, 500, 0.1), 0, params);
    on_keepalive(v, N(2), pv(4, 0.1, 400, 0.1), 0, params);
    on_keepalive(v, N(3), pv(2, 0.1, 300, 0.1), 0, params);
    return v;
  };
  auto x = make(N(2));
  auto a = on_leader_timeout(x, from_seconds(15));
  CHECK(a.kind == PromotionAction::Kind::kSelfPromote);
  CHECK(x.is_leader());

  auto y = make(N(3));
  a = on_leader_timeout(y, from_seconds(15));
  CHECK(a.kind == PromotionAction::Kind::kAwaitLeader);
  CHECK(a.expected == N(2));
  // N(2) died too: second timeout promotes N(3)
  a = on_leader_timeout(y, from_seconds(30));
  CHECK(a.kind == PromotionAction::Kind::kSelfPromote);
  CHECK(y.leader() == N(3));

  ClusterView lonely(N(5), ClusterId(2), N(6), 50.0, 0);
  CHECK(on_leader_timeout(lonely, 0).kind == PromotionAction::Kind::kRelocate);
}

TEST_CASE("migration detection") {
  ClusterView v(N(2), ClusterId(1), N(1), 50.0, 0);
  CHECK(on_migration_detected(v, 60.0));
  CHECK(v.own_pv().migrated);
  CHECK(v.state() == ClusterState::kTemporary);
  CHECK(v.foreign_leaders().contains(N(1)));
  CHECK_FALSE(on_migration_detected(v, 70.0));
  CHECK(on_migration_detected(v, 40.0));
  CHECK_FALSE(v.own_pv().migrated);
  CHECK(v.state() == ClusterState::kStabilized);
  CHECK_FALSE(on_migration_detected(v, 45.0));
}

namespace {

// Reference rule: a node joins the first earlier leader whose scope holds
// it; a node no earlier leader holds leads its own cluster.
std::map<NodeId, NodeId> reference_assignment(const std::vector<NodeId>& ranked,
                                              const std::function<bool(NodeId, NodeId)>& in_scope,
                                              const std::set<NodeId>& dead) {
  std::map<NodeId, NodeId> leader_of;
  std::vector<NodeId> leaders;
  for (const NodeId n : ranked) {
    if (dead.contains(n)) continue;
    NodeId chosen = n;
    for (const NodeId l : leaders) {
      if (in_scope(n, l)) {
        chosen = l;
        break;
      }
    }
    if (chosen == n) leaders.push_back(n);
    leader_of[n] = chosen;
  }
  return leader_of;
}

}  // namespace

TEST_CASE("recovery hand traces") {
  const std::vector<NodeId> ranked{N(1), N(2), N(3)};
  auto all = plan_recovery(ranked, [](NodeId, NodeId) { return true; }, N(0));
  REQUIRE(all.clusters.size() == 1);
  CHECK(all.clusters[0].leader == N(1));
  CHECK(all.clusters[0].members == std::vector<NodeId>{N(2), N(3)});

  // a in scope of b only
  auto scope = [](NodeId x, NodeId y) {
    auto lo = std::min(x, y), hi = std::max(x, y);
    return lo == N(1) && hi == N(2);
  };
  auto split = plan_recovery(ranked, scope, N(0));
  REQUIRE(split.clusters.size() == 2);
  CHECK(split.clusters[0].leader == N(1));
  CHECK(split.clusters[0].members == std::vector<NodeId>{N(2)});
  CHECK(split.clusters[1].leader == N(3));
  CHECK(split.clusters[1].members.empty());
  const auto neg = std::count_if(split.messages.begin(), split.messages.end(), [](const RecoveryMessage& m) {
    return m.kind == RecoveryMessage::Kind::kNegativeAck && m.from == N(3) && m.to == N(1);
  });
  CHECK(neg == 1);

  const std::vector<NodeId> single{N(4)};
  auto one = plan_recovery(single, scope, N(0));
  REQUIRE(one.clusters.size() == 1);
  CHECK(one.clusters[0].leader == N(4));
}

TEST_CASE("recovery terminal states over every scope graph of up to 5 nodes") {
  int graphs = 0;
  for (std::uint32_t k = 1; k <= 5; ++k) {
    std::vector<NodeId> ranked;
    for (std::uint32_t i = 0; i < k; ++i) ranked.push_back(N(10 + i));
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::uint32_t i = 0; i < k; ++i) {
      for (std::uint32_t j = i + 1; j < k; ++j) pairs.emplace_back(i, j);
    }
    for (std::uint32_t mask = 0; mask < (1u << pairs.size()); ++mask) {
      for (std::uint32_t dead_mask = 0; dead_mask < (1u << k); dead_mask += (k == 5 ? 3 : 1)) {
        ++graphs;
        auto in_scope = [&](NodeId a, NodeId b) {
          auto i = a.value - 10, j = b.value - 10;
          if (i > j) std::swap(i, j);
          if (i == j) return true;
          for (std::size_t p = 0; p < pairs.size(); ++p) {
            if (pairs[p] == std::pair{i, j}) return ((mask >> p) & 1u) != 0;
          }
          return false;
        };
        std::set<NodeId> dead;
        for (std::uint32_t i = 0; i < k; ++i) {
          if ((dead_mask >> i) & 1u) dead.insert(ranked[i]);
        }
        const auto out = plan_recovery(
            ranked, in_scope, [&](NodeId n) { return !dead.contains(n); }, N(0));

        // every live node ends in exactly one cluster, members in their leader's scope
        std::map<NodeId, NodeId> leader_of;
        for (const auto& c : out.clusters) {
          REQUIRE_FALSE(dead.contains(c.leader));
          REQUIRE(leader_of.emplace(c.leader, c.leader).second);
          for (auto m : c.members) {
            REQUIRE(in_scope(m, c.leader));
            REQUIRE(leader_of.emplace(m, c.leader).second);
          }
        }
        REQUIRE(leader_of == reference_assignment(ranked, in_scope, dead));
        // at most one request per ordered pair
        std::set<std::pair<NodeId, NodeId>> requests;
        for (const auto& m : out.messages) {
          if (m.kind == RecoveryMessage::Kind::kRequest) REQUIRE(requests.emplace(m.from, m.to).second);
        }
        REQUIRE(requests.size() <= k * (k - 1) / 2);
        std::set<NodeId> skipped(out.skipped.begin(), out.skipped.end());
        REQUIRE(skipped == dead);
      }
    }
  }
  CHECK(graphs > 1000);
}

TEST_CASE("rank_migrated follows cache order") {
  const ElectionParams params;
  ClusterView v(N(9), ClusterId(1), N(1), 50.0, 0);
  on_keepalive(v, N(1), pv(8, 0.1, 500, 0.1), 0, params);
  on_keepalive(v, N(2), pv(1, 0.1, 400, 0.1, true), 0, params);
  on_keepalive(v, N(3), pv(4, 0.1, 300, 0.1, true), 0, params);
  v.mutable_migrated_set().insert(N(8));
  CHECK(rank_migrated(v) == std::vector<NodeId>{N(3), N(2), N(8)});
}

TEST_CASE("admission") {
  const std::vector<MemberCapacity> roomy{{N(1), 3, 3, 0}};
  CHECK(decide_admission(roomy).kind == AdmissionDecision::Kind::kAccept);

  const std::vector<MemberCapacity> saturated{{N(1), 1, 1, 0}, {N(2), 1, 1, 0}, {N(3), 1, 1, 0}};
  CHECK(decide_admission(saturated).kind == AdmissionDecision::Kind::kReject);

  const std::vector<MemberCapacity> with_edge{{N(1), 1, 1, 0}, {N(2), 0, 1, 1}, {N(3), 1, 1, 0}};
  const auto d = decide_admission(with_edge);
  CHECK(d.kind == AdmissionDecision::Kind::kReclaimEdge);
  CHECK(d.edge_node == N(2));
}

TEST_CASE("gossip view merge and bound") {
  GossipView a(N(0), 64);
  GossipView b(N(100), 64);
  for (std::uint32_t i = 1; i <= 3; ++i) a.touch(N(i), ClusterId(0), false, from_seconds(i));
  for (std::uint32_t i = 10; i < 14; ++i) b.touch(N(i), ClusterId(1), false, from_seconds(i));
  Rng rng(5);
  const auto to_b = a.sample(rng, 3, N(100));
  const auto to_a = b.sample(rng, 3, N(0));
  std::set<NodeId> expect_a, expect_b;
  for (const auto& e : a.entries()) expect_a.insert(e.node);
  for (const auto& e : b.entries()) expect_b.insert(e.node);
  for (const auto& e : to_a) expect_a.insert(e.node);
  for (const auto& e : to_b) expect_b.insert(e.node);
  b.merge(to_b, 0);
  a.merge(to_a, 0);
  std::set<NodeId> got_a, got_b;
  for (const auto& e : a.entries()) got_a.insert(e.node);
  for (const auto& e : b.entries()) got_b.insert(e.node);
  CHECK(got_a == expect_a);
  CHECK(got_b == expect_b);
  CHECK(a.size() == 6);
  CHECK(b.size() == 7);

  GossipView small(N(0), 3);
  for (std::uint32_t i = 1; i <= 5; ++i) small.touch(N(i), ClusterId(0), false, from_seconds(10 - i));
  CHECK(small.size() == 3);
  CHECK(small.contains(N(1)));
  CHECK_FALSE(small.contains(N(5)));
  // fresher information replaces older
  const std::vector<GossipEntry> fresh{{N(2), ClusterId(4), true, 3.0, from_seconds(100)}};
  small.merge(fresh, 0);
  CHECK(small.find(N(2))->leader);
  CHECK(small.find(N(2))->cluster == ClusterId(4));
  // self never enters
  const std::vector<GossipEntry> me{{N(0), ClusterId(0), false, -1, from_seconds(200)}};
  small.merge(me, 0);
  CHECK_FALSE(small.contains(N(0)));

  CHECK_FALSE(small.record_miss(N(1), 2));
  CHECK(small.record_miss(N(1), 2));
  CHECK_FALSE(small.contains(N(1)));
}

TEST_CASE("gossip round") {
  GossipView one(N(0), 64);
  Rng rng(1);
  CHECK_FALSE(gossip_round(one, rng, 8).has_value());
  one.touch(N(3), ClusterId(0), false, 0);
  const auto r = gossip_round(one, rng, 8);
  REQUIRE(r.has_value());
  CHECK(r->peer == N(3));
  CHECK(r->entries.empty());
}
