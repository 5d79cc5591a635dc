#include <doctest.h>

#include "lcc/core.hpp"

using namespace lcc;

TEST_CASE("fanout is the floor of capacity over rate") {
  CHECK(fanout_from_capacity(560, 560) == 1);
  CHECK(fanout_from_capacity(0, 560) == 0);
  CHECK(fanout_from_capacity(1500, 560) == 2);
  CHECK(fanout_from_capacity(1119.9, 560) == 1);
  CHECK_THROWS_AS(fanout_from_capacity(560, 0), Error);
  try {
    fanout_from_capacity(1, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidConfiguration);
  }
}

TEST_CASE("fanout is monotone in capacity and antitone in rate") {
  for (int c = 0; c < 5000; c += 37) {
    CHECK(fanout_from_capacity(c, 300) <= fanout_from_capacity(c + 37, 300));
    CHECK(fanout_from_capacity(c, 300) >= fanout_from_capacity(c, 301));
  }
}

TEST_CASE("cluster overall capacity") {
  const std::vector<int> a{1, 1, 1};
  const std::vector<int> b{3};
  const std::vector<int> c{2, 4, 1, 1};
  CHECK(cluster_overall_capacity(a) == 0);
  CHECK(cluster_overall_capacity(b) == 2);
  CHECK(cluster_overall_capacity(c) == 4);
  CHECK_THROWS_AS(cluster_overall_capacity(std::vector<int>{}), Error);

  std::vector<int> grow{3, 2};
  const int base = cluster_overall_capacity(grow);
  grow.push_back(0);
  CHECK(cluster_overall_capacity(grow) == base - 1);
  grow.push_back(5);
  CHECK(cluster_overall_capacity(grow) == base - 1 + 4);
}

TEST_CASE("fanout distribution") {
  FanoutDistribution dist;
  CHECK(dist.sample(0.0) == 1);
  CHECK(dist.sample(0.19) == 1);
  CHECK(dist.sample(0.21) == 2);
  CHECK(dist.sample(0.61) == 4);
  CHECK(dist.sample(0.95) == 8);
  auto parsed = FanoutDistribution::parse("1:0.5,3:0.5");
  CHECK(parsed.sample(0.4) == 1);
  CHECK(parsed.sample(0.6) == 3);
  CHECK(FanoutDistribution::parse(parsed.to_string()).buckets().size() == 2);
  CHECK_THROWS_AS(FanoutDistribution::parse("1:x"), Error);
}

TEST_CASE("time conversions round trip") {
  CHECK(from_ms(1.5) == 1500);
  CHECK(from_seconds(2) == 2'000'000);
  CHECK(to_ms(from_ms(12.25)) == doctest::Approx(12.25));
}
