#include <doctest.h>

#include <algorithm>

#include "lcc/topology.hpp"

using namespace lcc;

TEST_CASE("generation is deterministic per seed") {
  for (auto model : {TopologyModel::kEuclidean2D, TopologyModel::kTransitStub}) {
    const auto a = Topology::generate(60, model, 7);
    const auto b = Topology::generate(60, model, 7);
    const auto c = Topology::generate(60, model, 8);
    bool differs = false;
    for (std::uint32_t i = 0; i < 60; ++i) {
      for (std::uint32_t j = 0; j < 60; ++j) {
        CHECK(a.rtt(NodeId(i), NodeId(j)) == b.rtt(NodeId(i), NodeId(j)));
        differs = differs || a.rtt(NodeId(i), NodeId(j)) != c.rtt(NodeId(i), NodeId(j));
      }
    }
    CHECK(differs);
  }
}

TEST_CASE("rtt is a symmetric positive distance") {
  for (auto model : {TopologyModel::kEuclidean2D, TopologyModel::kTransitStub}) {
    const auto t = Topology::generate(80, model, 3);
    for (std::uint32_t i = 0; i < 80; ++i) {
      CHECK(t.rtt(NodeId(i), NodeId(i)) == 0.0);
      for (std::uint32_t j = i + 1; j < 80; ++j) {
        CHECK(t.rtt(NodeId(i), NodeId(j)) > 0.0);
        CHECK(t.rtt(NodeId(i), NodeId(j)) == t.rtt(NodeId(j), NodeId(i)));
      }
    }
  }
}

TEST_CASE("euclidean median is scaled to 60 ms") {
  const auto t = Topology::generate(400, TopologyModel::kEuclidean2D, 11);
  CHECK(t.median_rtt() == doctest::Approx(60.0).epsilon(0.02));
}

TEST_CASE("hop paths exist only for transit-stub") {
  const auto e = Topology::generate(20, TopologyModel::kEuclidean2D, 1);
  CHECK_FALSE(e.has_hop_paths());
  CHECK_THROWS_AS(e.hop_path(NodeId(0), NodeId(1)), Error);

  const auto t = Topology::generate(100, TopologyModel::kTransitStub, 1);
  REQUIRE(t.has_hop_paths());
  for (std::uint32_t j = 1; j < 100; j += 7) {
    const auto p = t.hop_path(NodeId(0), NodeId(j));
    CHECK(p.size() >= 2);  // at least both access links
    for (auto l : p) CHECK(l < t.underlay_link_count());
    auto q = t.hop_path(NodeId(j), NodeId(0));
    std::sort(q.begin(), q.end());
    auto ps = p;
    std::sort(ps.begin(), ps.end());
    CHECK(ps == q);
  }
  CHECK(t.hop_path(NodeId(3), NodeId(3)).empty());
}

TEST_CASE("two hosts") {
  for (auto model : {TopologyModel::kEuclidean2D, TopologyModel::kTransitStub}) {
    const auto t = Topology::generate(2, model, 5);
    CHECK(t.size() == 2);
    CHECK(t.rtt(NodeId(0), NodeId(1)) > 0.0);
  }
}

TEST_CASE("matrix topology") {
  const auto t = Topology::from_matrix({{0, 10, 30}, {10, 0, 30}, {30, 30, 0}});
  CHECK(t.size() == 3);
  CHECK(t.rtt(NodeId(2), NodeId(1)) == 30.0);
  CHECK_FALSE(t.has_hop_paths());
  CHECK_THROWS_AS(t.rtt(NodeId(0), NodeId(3)), Error);
}

TEST_CASE("model names") {
  CHECK(parse_topology_model("euclidean2d") == TopologyModel::kEuclidean2D);
  CHECK(parse_topology_model(to_string(TopologyModel::kTransitStub)) == TopologyModel::kTransitStub);
  CHECK_THROWS_AS(parse_topology_model("waxman"), Error);
}
