#include <doctest.h>

#include <map>

#include "lcc/meshtree.hpp"
#include "lcc/random.hpp"

using namespace lcc;

namespace {

NodeId N(std::uint32_t v) { return NodeId(v); }

}  // namespace

TEST_CASE("degree budget") {
  MeshOverlay m;
  m.add_node(N(0), 1, true);
  m.add_node(N(1), 1);
  m.add_node(N(2), 0);
  m.add_node(N(3), 2);
  CHECK(m.budget(N(0)) == 1);
  CHECK(m.budget(N(1)) == 2);
  CHECK(m.add_link(N(1), N(0), 10, N(1)));
  CHECK_FALSE(m.add_link(N(3), N(0), 10, N(3)));  // source full
  CHECK(m.add_link(N(2), N(1), 5, N(2)));
  CHECK_FALSE(m.add_link(N(3), N(2), 5, N(3)));   // fan-out 0 holds only its upstream
  CHECK_FALSE(m.add_link(N(1), N(2), 5, N(1)));   // duplicate
  CHECK(m.degree_used(N(1)) == 1);
  CHECK(m.degree_used(N(2)) == 0);
  CHECK(m.upstream(N(2)) == N(1));
  CHECK(m.is_backbone(N(1), N(2)));
  m.remove_node(N(1));
  CHECK(m.link_count(N(0)) == 0);
  CHECK(m.link_count(N(2)) == 0);
  CHECK_THROWS_AS(m.budget(N(1)), Error);
}

TEST_CASE("degree safety under random operations") {
  Rng rng(9);
  MeshOverlay m;
  const std::uint32_t n = 30;
  for (std::uint32_t i = 0; i < n; ++i) m.add_node(N(i), static_cast<int>(rng.below(4)), i == 0);
  for (int op = 0; op < 5000; ++op) {
    const NodeId a = N(static_cast<std::uint32_t>(rng.below(n)));
    const NodeId b = N(static_cast<std::uint32_t>(rng.below(n)));
    if (rng.bernoulli(0.7)) {
      m.add_link(a, b, rng.uniform(1, 50), rng.bernoulli(0.5) ? a : kNoNode);
    } else {
      m.remove_link(a, b);
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      REQUIRE(m.degree_used(N(i)) <= m.fanout_max(N(i)));
      for (const auto& adj : m.neighbors(N(i))) REQUIRE(m.linked(adj.node, N(i)));
    }
  }
}

TEST_CASE("path-vector route choice") {
  // a - b - c, costs 10 and 20, source a
  MeshOverlay m;
  for (std::uint32_t i = 0; i < 3; ++i) m.add_node(N(i), 4, i == 0);
  m.add_link(N(1), N(0), 10, N(1));
  m.add_link(N(2), N(1), 20, N(2));
  RoutingState a(N(0), true), b(N(1), false), c(N(2), false);
  CHECK(a.route().distance == 0);
  CHECK(a.route().path == std::vector<NodeId>{N(0)});
  b.on_advert(N(0), *a.advert());
  CHECK(b.recompute(m.neighbors(N(1))));
  c.on_advert(N(1), *b.advert());
  CHECK(c.recompute(m.neighbors(N(2))));
  CHECK(c.route().distance == doctest::Approx(30));
  CHECK(c.route().parent == N(1));
  CHECK(c.route().path == std::vector<NodeId>{N(0), N(1), N(2)});
  CHECK_FALSE(c.recompute(m.neighbors(N(2))));

  // an advert whose path holds the receiver is ignored
  b.on_advert(N(2), *c.advert());
  CHECK_FALSE(b.recompute(m.neighbors(N(1))));
  CHECK(b.route().parent == N(0));
  CHECK(b.children() == std::vector<NodeId>{N(2)});

  // losing the upstream partitions b and withdraws c's route via b
  b.on_neighbor_lost(N(0));
  CHECK(b.recompute(m.neighbors(N(1))));
  CHECK_FALSE(b.route().valid);
  CHECK_FALSE(b.advert().has_value());
}

TEST_CASE("route ties go to the lower neighbor") {
  std::vector<Adjacent> links{{N(5), {10, kNoNode}}, {N(3), {10, kNoNode}}};
  std::vector<NeighborAdvert> adv{{N(5), {5, {N(0), N(5)}}}, {N(3), {5, {N(0), N(3)}}}};
  CHECK(best_route(N(9), adv, links).parent == N(3));
  adv.push_back({N(7), {1, {N(0), N(7)}}});  // no link to 7
  CHECK(best_route(N(9), adv, links).parent == N(3));
}

TEST_CASE("sticky routing keeps its parent") {
  std::vector<Adjacent> links{{N(1), {10, kNoNode}}, {N(2), {1, kNoNode}}};
  RoutingState r(N(9), false);
  r.on_advert(N(1), {5, {N(0), N(1)}});
  CHECK(r.adopt(N(1), links));
  r.on_advert(N(2), {1, {N(0), N(2)}});
  CHECK_FALSE(r.recompute(links, true));
  CHECK(r.route().parent == N(1));
  CHECK(r.recompute(links, false));
  CHECK(r.route().parent == N(2));
}

TEST_CASE("refinement decisions") {
  const NodeId self = N(4);
  RefineCandidate good{N(2), 20, {N(0), N(2)}, 10};
  CHECK(evaluate_refinement(self, 50, true, good, 5) == RefineVerdict::kSwitch);
  RefineCandidate marginal{N(2), 38, {N(0), N(2)}, 10};
  CHECK(evaluate_refinement(self, 50, true, marginal, 5) == RefineVerdict::kNoImprovement);
  RefineCandidate descendant{N(6), 1, {N(0), N(4), N(6)}, 1};
  CHECK(evaluate_refinement(self, 50, true, descendant, 5) == RefineVerdict::kDescendant);
  CHECK(evaluate_refinement(self, 50, true, RefineCandidate{self, 0, {N(0)}, 0}, 5) == RefineVerdict::kSelf);
  CHECK(evaluate_refinement(self, 0, false, marginal, 5) == RefineVerdict::kSwitch);
}

TEST_CASE("worst redundant link skips backbone and tree edges") {
  MeshOverlay m;
  for (std::uint32_t i = 0; i < 5; ++i) m.add_node(N(i), 8, i == 0);
  m.add_link(N(1), N(0), 5, N(1));       // 1's upstream
  m.add_link(N(1), N(2), 40, kNoNode);   // mesh
  m.add_link(N(1), N(3), 60, kNoNode);   // mesh, but 3 is a child
  m.add_link(N(1), N(4), 30, kNoNode);   // mesh
  RoutingState r(N(1), false);
  r.on_advert(N(0), {0, {N(0)}});
  r.on_advert(N(3), {65, {N(0), N(1), N(3)}});
  r.recompute(m.neighbors(N(1)));
  CHECK(worst_redundant_link(m, r) == N(2));
  m.remove_link(N(1), N(2));
  CHECK(worst_redundant_link(m, r) == N(4));
  m.remove_link(N(1), N(4));
  CHECK_FALSE(worst_redundant_link(m, r).has_value());
}

TEST_CASE("delivery tree derivation") {
  //      0
  //     / \
  //    1   2
  //    |
  //    3        4 <-> 5 loop, 6 detached
  std::vector<NodeId> parent{kNoNode, N(0), N(0), N(1), N(5), N(4), kNoNode};
  std::vector<bool> present(7, true);
  auto tree = derive_delivery_tree(N(0), parent, present, [](NodeId, NodeId) { return true; });
  CHECK(tree.reachable[3]);
  CHECK_FALSE(tree.reachable[4]);
  CHECK(tree.cyclic == std::vector<NodeId>{N(4), N(5)});
  CHECK(tree.unreachable == std::vector<NodeId>{N(4), N(5), N(6)});
  auto cost = [](NodeId p, NodeId c) { return static_cast<double>(p.value + c.value); };
  CHECK(*tree.path_cost(N(3), cost) == doctest::Approx(1 + 4));

  // a missing link cuts the subtree
  auto cut = derive_delivery_tree(N(0), parent, present, [](NodeId p, NodeId c) { return !(p == N(0) && c == N(1)); });
  CHECK_FALSE(cut.reachable[1]);
  CHECK_FALSE(cut.reachable[3]);
  CHECK(cut.reachable[2]);
}

TEST_CASE("random parent forests are classified consistently") {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<NodeId> parent(n, kNoNode);
    for (std::size_t i = 1; i < n; ++i) {
      if (rng.bernoulli(0.9)) parent[i] = N(static_cast<std::uint32_t>(rng.below(n)));
    }
    std::vector<bool> present(n, true);
    auto tree = derive_delivery_tree(N(0), parent, present, [](NodeId, NodeId) { return true; });
    for (std::size_t i = 0; i < n; ++i) {
      // oracle: walk at most n steps
      std::size_t cur = i;
      bool reach = false;
      for (std::size_t s = 0; s <= n; ++s) {
        if (cur == 0) {
          reach = true;
          break;
        }
        if (!parent[cur].valid() || parent[cur].value == cur) break;
        cur = parent[cur].value;
      }
      CHECK(tree.reachable[i] == reach);
    }
  }
}

TEST_CASE("refinement converges to the shortest-path tree on small complete meshes") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint32_t n = 2 + static_cast<std::uint32_t>(rng.below(6));
    std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) w[i][j] = w[j][i] = rng.uniform(1, 100);
    }
    // Floyd-Warshall oracle
    auto sp = w;
    for (std::uint32_t k = 0; k < n; ++k) {
      for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < n; ++j) sp[i][j] = std::min(sp[i][j], sp[i][k] + sp[k][j]);
      }
    }

    MeshOverlay m;
    for (std::uint32_t i = 0; i < n; ++i) m.add_node(N(i), 64, i == 0);
    // random spanning tree as the initial backbone
    for (std::uint32_t i = 1; i < n; ++i) {
      const auto p = static_cast<std::uint32_t>(rng.below(i));
      m.add_link(N(i), N(p), w[i][p], N(i));
    }
    std::vector<RoutingState> rs;
    for (std::uint32_t i = 0; i < n; ++i) rs.emplace_back(N(i), i == 0);

    auto settle = [&] {
      for (int round = 0; round < 64; ++round) {
        bool changed = false;
        for (std::uint32_t i = 0; i < n; ++i) {
          for (const auto& adj : m.neighbors(N(i))) {
            if (auto adv = rs[adj.node.value].advert()) {
              rs[i].on_advert(adj.node, *adv);
            } else {
              rs[i].on_withdraw(adj.node);
            }
          }
          changed = rs[i].recompute(m.neighbors(N(i))) || changed;
        }
        if (!changed) return;
      }
      FAIL("routing did not settle");
    };
    settle();
    for (int round = 0; round < 50; ++round) {
      bool switched = false;
      for (std::uint32_t i = 1; i < n; ++i) {
        for (std::uint32_t c = 0; c < n; ++c) {
          const auto adv = rs[c].advert();
          if (c == i || !adv) continue;
          RefineCandidate cand{N(c), adv->distance, adv->path, w[i][c]};
          const double before = rs[i].route().distance;
          if (evaluate_refinement(N(i), before, rs[i].route().valid, cand, 0.0) != RefineVerdict::kSwitch) continue;
          if (!m.linked(N(i), N(c))) m.add_link(N(i), N(c), w[i][c], kNoNode);
          rs[i].on_advert(N(c), *adv);
          rs[i].recompute(m.neighbors(N(i)));
          CHECK(rs[i].route().distance <= before + 1e-9);
          switched = true;
          settle();
        }
      }
      if (!switched) break;
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      REQUIRE(rs[i].route().valid);
      CHECK(rs[i].route().distance == doctest::Approx(sp[0][i]));
    }
  }
}
