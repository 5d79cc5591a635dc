#include <doctest.h>

#include "lcc/config.hpp"

using namespace lcc;

TEST_CASE("defaults") {
  const ScenarioConfig c;
  CHECK(c.protocol == Protocol::kLcc);
  CHECK(c.n == 100);
  CHECK(c.r_max_ms == 50.0);
  CHECK(c.alpha_ms == 4.0);
  CHECK(c.max_level == 9);
  CHECK(c.k_per_level == 8);
  CHECK(c.stop_c == 16);
  CHECK(c.rt_s == 30.0);
  CHECK(c.improvement_epsilon_ms == 5.0);
  CHECK(c.keepalive_s == 5.0);
  CHECK(c.leader_timeout_periods == 3);
  CHECK(c.gossip_s == 10.0);
  CHECK(c.gossip_g == 8);
  CHECK(c.view_bound == 64);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("parse with comments and overrides") {
  const auto c = ScenarioConfig::parse(R"(# flat baseline
protocol = flat
n = 250          # hosts
topology.model = transit_stub
seed = 42
r_max_ms = 100
flat.links = 4
fanout.distribution = 2:0.5,4:0.5
failures[0] = at=300 select=random_fraction(0.2) rejoin_at=400
failures[1] = at=350 select=nodes(3,5)
duration_s = 500
)");
  CHECK(c.protocol == Protocol::kFlat);
  CHECK(c.n == 250);
  CHECK(c.topology == TopologyModel::kTransitStub);
  CHECK(c.seed == 42);
  CHECK(c.r_max_ms == 100.0);
  CHECK(c.flat_links == 4);
  CHECK(c.fanout.buckets().size() == 2);
  REQUIRE(c.failures.size() == 2);
  CHECK(c.failures[0].at_s == 300.0);
  CHECK(c.failures[0].selector == FailureSpec::Selector::kRandomFraction);
  CHECK(c.failures[0].fraction == 0.2);
  CHECK(c.failures[0].rejoin_at_s == 400.0);
  CHECK(c.failures[1].nodes == std::vector<std::uint32_t>{3, 5});
  CHECK_FALSE(c.failures[1].rejoin_at_s.has_value());
}

TEST_CASE("text form round-trips") {
  ScenarioConfig c;
  c.set("recovery", "grandparent");
  c.set("locating.mode", "non_selective");
  c.set("churn.lifetime_param", "0.001");
  c.set("improvement_epsilon_ms", "2.5");
  c.set("failures[0]", "at=100 select=leaders_fraction(0.5)");
  const auto text = c.to_text();
  const auto back = ScenarioConfig::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.recovery == RecoveryScheme::kGrandparent);
  CHECK(back.locating_mode == LocatingMode::kNonSelective);
  CHECK(back.lifetime_param == 0.001);
  CHECK(back.improvement_epsilon_ms == 2.5);
  REQUIRE(back.failures.size() == 1);
  CHECK(back.failures[0].selector == FailureSpec::Selector::kLeadersFraction);
}

TEST_CASE("bad input is rejected") {
  const auto rejects = [](const char* text) {
    try {
      ScenarioConfig::parse(text);
    } catch (const Error& e) {
      return e.code() == ErrorCode::kInvalidConfiguration;
    }
    return false;
  };
  CHECK(rejects("no_such_key = 1"));
  CHECK(rejects("n = many"));
  CHECK(rejects("n = 0"));
  CHECK(rejects("protocol = tree"));
  CHECK(rejects("r_max_ms"));
  CHECK(rejects("r_max_ms ="));
  CHECK(rejects("alpha_ms = 0"));
  CHECK(rejects("gossip.g = 0"));
  CHECK(rejects("fanout.distribution = 1:0.5,x"));
  CHECK(rejects("failures[0] = at=10"));
  CHECK(rejects("failures[0] = at=10 select=everyone(1)"));
  CHECK(rejects("failures[0] = at=10 select=random_fraction(1.5)"));
  CHECK(rejects("duration_s = 60\nfailures[0] = at=100 select=random_fraction(0.1)"));
  CHECK(rejects("failures[0] = at=10 select=nodes(0)"));
  CHECK(rejects("n = 10\nfailures[0] = at=10 select=nodes(10)"));
  CHECK(rejects("failures[0] = at=10 select=nodes(2) rejoin_at=5"));
}

TEST_CASE("failure entry text") {
  const auto f = FailureSpec::parse("at=5400 select=random_fraction(0.2) rejoin_at=7200");
  CHECK(f.to_string() == "at=5400 select=random_fraction(0.2) rejoin_at=7200");
  CHECK(FailureSpec::parse(f.to_string()).fraction == 0.2);
  CHECK(FailureSpec::parse("select=nodes(1,2,3) at=1").nodes.size() == 3);
}

TEST_CASE("missing file") {
  CHECK_THROWS_AS(ScenarioConfig::load("/nonexistent/x.conf"), Error);
}
