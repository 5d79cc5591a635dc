#include "lcc/topology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <fmt/format.h>

#include "lcc/random.hpp"

namespace lcc {

std::string_view to_string(TopologyModel model) {
  switch (model) {
    case TopologyModel::kEuclidean2D: return "euclidean2d";
    case TopologyModel::kTransitStub: return "transit_stub";
    case TopologyModel::kMatrix: return "matrix";
  }
  return "?";
}

TopologyModel parse_topology_model(std::string_view text) {
  if (text == "euclidean2d" || text == "Euclidean2D") return TopologyModel::kEuclidean2D;
  if (text == "transit_stub" || text == "TransitStub") return TopologyModel::kTransitStub;
  throw Error(ErrorCode::kInvalidConfiguration, fmt::format("unknown topology model '{}'", text));
}

namespace {

constexpr double kTargetMedianRtt = 60.0;
constexpr double kMinRtt = 0.01;
constexpr std::size_t kHostsPerStub = 25;
constexpr std::size_t kRoutersPerStub = 3;

struct Edge {
  std::uint32_t a, b;
  double w;
};

double median_of(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return (lo + hi) / 2.0;
}

}  // namespace

void Topology::check(NodeId a) const {
  if (!a.valid() || a.value >= n_) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("host {} outside topology of {}", a.value, n_));
  }
}

Topology Topology::from_matrix(std::vector<std::vector<Millis>> rtt) {
  Topology t;
  t.n_ = rtt.size();
  t.model_ = TopologyModel::kMatrix;
  if (t.n_ == 0) throw Error(ErrorCode::kInvalidArgument, "empty RTT matrix");
  t.matrix_.assign(t.n_ * t.n_, 0.0);
  for (std::size_t i = 0; i < t.n_; ++i) {
    if (rtt[i].size() != t.n_) throw Error(ErrorCode::kInvalidArgument, "RTT matrix is not square");
    for (std::size_t j = 0; j < t.n_; ++j) {
      if (i == j) continue;
      if (rtt[i][j] <= 0.0 || rtt[i][j] != rtt[j][i]) {
        throw Error(ErrorCode::kInvalidArgument, fmt::format("bad RTT entry ({}, {})", i, j));
      }
      t.matrix_[i * t.n_ + j] = rtt[i][j];
    }
  }
  return t;
}

Topology Topology::generate(std::size_t n, TopologyModel model, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "topology needs at least one host");
  Rng rng(seed ^ 0x70901064ull);
  Topology t;
  t.n_ = n;
  t.model_ = model;

  if (model == TopologyModel::kEuclidean2D) {
    t.x_.resize(n);
    t.y_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      t.x_[i] = rng.uniform01();
      t.y_[i] = rng.uniform01();
    }
    std::vector<double> d;
    if (n <= 3000) {
      d.reserve(n * (n - 1) / 2);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) d.push_back(std::hypot(t.x_[i] - t.x_[j], t.y_[i] - t.y_[j]));
    } else {
      d.reserve(1000000);
      while (d.size() < 1000000) {
        const auto i = rng.below(n), j = rng.below(n);
        if (i != j) d.push_back(std::hypot(t.x_[i] - t.x_[j], t.y_[i] - t.y_[j]));
      }
    }
    const double med = median_of(d);
    t.scale_ = med > 0.0 ? kTargetMedianRtt / med : 1.0;
    return t;
  }

  if (model != TopologyModel::kTransitStub) {
    throw Error(ErrorCode::kInvalidArgument, "matrix topologies come from from_matrix()");
  }

  const std::size_t stubs = std::max<std::size_t>(1, (n + kHostsPerStub - 1) / kHostsPerStub);
  const std::size_t transit = std::max<std::size_t>(2, (stubs + 3) / 4);
  const std::size_t routers = transit + stubs * kRoutersPerStub;
  std::vector<Edge> edges;

  // transit core: random tree plus a few chords
  for (std::size_t i = 1; i < transit; ++i) {
    edges.push_back({static_cast<std::uint32_t>(rng.below(i)), static_cast<std::uint32_t>(i), rng.uniform(20, 80)});
  }
  for (std::size_t i = 0; i < transit; ++i)
    for (std::size_t j = i + 1; j < transit; ++j) {
      const bool exists = std::any_of(edges.begin(), edges.end(), [&](const Edge& e) {
        return (e.a == i && e.b == j) || (e.a == j && e.b == i);
      });
      if (!exists && rng.bernoulli(0.3)) {
        edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), rng.uniform(20, 80)});
      }
    }
  // stubs: a small tree hanging off one transit router through its gateway
  for (std::size_t s = 0; s < stubs; ++s) {
    const auto base = static_cast<std::uint32_t>(transit + s * kRoutersPerStub);
    edges.push_back({static_cast<std::uint32_t>(rng.below(transit)), base, rng.uniform(10, 20)});
    for (std::uint32_t k = 1; k < kRoutersPerStub; ++k) {
      edges.push_back({base + static_cast<std::uint32_t>(rng.below(k)), base + k, rng.uniform(2, 10)});
    }
  }

  t.routers_ = routers;
  t.link_count_ = edges.size() + n;
  t.edge_id_.assign(routers * routers, -1);
  std::vector<std::vector<std::pair<std::uint32_t, double>>> adj(routers);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    adj[edges[e].a].push_back({edges[e].b, edges[e].w});
    adj[edges[e].b].push_back({edges[e].a, edges[e].w});
    t.edge_id_[edges[e].a * routers + edges[e].b] = static_cast<std::int32_t>(e);
    t.edge_id_[edges[e].b * routers + edges[e].a] = static_cast<std::int32_t>(e);
  }

  t.router_dist_.assign(routers * routers, std::numeric_limits<double>::infinity());
  t.next_hop_.assign(routers * routers, -1);
  using Item = std::pair<double, std::uint32_t>;
  for (std::uint32_t src = 0; src < routers; ++src) {
    double* dist = &t.router_dist_[src * routers];
    std::int32_t* first = &t.next_hop_[src * routers];
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[src] = 0.0;
    first[src] = static_cast<std::int32_t>(src);
    pq.push({0.0, src});
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      for (const auto& [v, w] : adj[u]) {
        const double nd = d + w;
        if (nd < dist[v]) {
          dist[v] = nd;
          first[v] = u == src ? static_cast<std::int32_t>(v) : first[u];
          pq.push({nd, v});
        }
      }
    }
  }

  t.host_router_.resize(n);
  t.access_.resize(n);
  for (std::size_t h = 0; h < n; ++h) {
    const std::size_t stub = rng.below(stubs);
    t.host_router_[h] = static_cast<std::uint32_t>(transit + stub * kRoutersPerStub + rng.below(kRoutersPerStub));
    t.access_[h] = rng.uniform(1, 5);
  }
  return t;
}

Millis Topology::rtt(NodeId a, NodeId b) const {
  check(a);
  check(b);
  if (a == b) return 0.0;
  switch (model_) {
    case TopologyModel::kEuclidean2D:
      return std::max(kMinRtt, scale_ * std::hypot(x_[a.value] - x_[b.value], y_[a.value] - y_[b.value]));
    case TopologyModel::kTransitStub:
      if (a.value > b.value) std::swap(a, b);
      return access_[a.value] + router_dist_[host_router_[a.value] * routers_ + host_router_[b.value]] +
             access_[b.value];
    case TopologyModel::kMatrix:
      return matrix_[a.value * n_ + b.value];
  }
  return 0.0;
}

std::vector<std::uint32_t> Topology::hop_path(NodeId a, NodeId b) const {
  if (!has_hop_paths()) {
    throw Error(ErrorCode::kNoHopPaths,
                fmt::format("topology model {} has no hop paths; stress needs transit_stub", to_string(model_)));
  }
  check(a);
  check(b);
  std::vector<std::uint32_t> out;
  if (a == b) return out;
  const std::size_t access_base = link_count_ - n_;
  out.push_back(static_cast<std::uint32_t>(access_base + a.value));
  std::uint32_t cur = host_router_[a.value];
  const std::uint32_t dst = host_router_[b.value];
  while (cur != dst) {
    const auto next = static_cast<std::uint32_t>(next_hop_[cur * routers_ + dst]);
    out.push_back(static_cast<std::uint32_t>(edge_id_[cur * routers_ + next]));
    cur = next;
  }
  out.push_back(static_cast<std::uint32_t>(access_base + b.value));
  return out;
}

Millis Topology::median_rtt() const {
  std::vector<double> d;
  d.reserve(n_ * (n_ - 1) / 2);
  for (std::uint32_t i = 0; i < n_; ++i)
    for (std::uint32_t j = i + 1; j < n_; ++j) d.push_back(rtt(NodeId(i), NodeId(j)));
  return median_of(d);
}

}  // namespace lcc
