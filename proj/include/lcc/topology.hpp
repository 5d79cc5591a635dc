#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "lcc/core.hpp"

namespace lcc {

enum class TopologyModel { kEuclidean2D, kTransitStub, kMatrix };

std::string_view to_string(TopologyModel model);
TopologyModel parse_topology_model(std::string_view text);

/// Underlay delay oracle. RTT between hosts is the shortest-path delay of
/// the underlying model.
class Topology {
 public:
  /// Deterministic for (n, model, seed). Euclidean2D scales uniform points
  /// so the median pairwise RTT is 60 ms; TransitStub builds a two-level
  /// router hierarchy (transit links 20-80 ms, intra-stub 2-10 ms).
  static Topology generate(std::size_t n, TopologyModel model, std::uint64_t seed);
  /// Explicit symmetric RTT matrix, for scripted scenarios.
  static Topology from_matrix(std::vector<std::vector<Millis>> rtt);

  std::size_t size() const { return n_; }
  TopologyModel model() const { return model_; }
  Millis rtt(NodeId a, NodeId b) const;

  bool has_hop_paths() const { return model_ == TopologyModel::kTransitStub; }
  /// Underlay link ids crossed between the hosts of a and b. Throws
  /// Error(kNoHopPaths) for models without router-level paths.
  std::vector<std::uint32_t> hop_path(NodeId a, NodeId b) const;
  std::size_t underlay_link_count() const { return link_count_; }

  /// Median over all host pairs.
  Millis median_rtt() const;

 private:
  Topology() = default;
  void check(NodeId a) const;

  std::size_t n_ = 0;
  TopologyModel model_ = TopologyModel::kMatrix;
  // Euclidean2D
  std::vector<double> x_, y_;
  double scale_ = 1.0;
  // TransitStub / matrix
  std::vector<double> matrix_;
  // TransitStub routing
  std::size_t routers_ = 0;
  std::vector<std::uint32_t> host_router_;
  std::vector<double> access_;
  std::vector<double> router_dist_;
  std::vector<std::int32_t> next_hop_;   // routers_ x routers_
  std::vector<std::int32_t> edge_id_;    // routers_ x routers_, -1 if no edge
  std::size_t link_count_ = 0;
};

}  // namespace lcc
