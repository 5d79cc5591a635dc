#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "lcc/core.hpp"

namespace lcc {

struct LinkInfo {
  Millis cost = 0.0;
  /// Node that created this link as its upstream (backbone) link, or kNoNode
  /// for a redundant mesh link.
  NodeId owner;
};

struct Adjacent {
  NodeId node;
  LinkInfo link;
};

/// Undirected degree-bounded mesh shared by the top level and the clusters.
/// Every non-source node may hold fanout_max + 1 links: one upstream link
/// plus fanout_max downstream or mesh links. The source holds fanout_max.
class MeshOverlay {
 public:
  void add_node(NodeId n, int fanout_max, bool is_source = false);
  /// Removes the node and every link touching it.
  void remove_node(NodeId n);
  bool contains(NodeId n) const;

  int fanout_max(NodeId n) const { return slot(n).fanout_max; }
  bool is_source(NodeId n) const { return slot(n).is_source; }
  int budget(NodeId n) const;
  std::size_t link_count(NodeId n) const { return slot(n).links.size(); }
  /// Links counted against fanout_max.
  int degree_used(NodeId n) const;
  bool has_spare(NodeId n, int reserved = 0) const;

  /// Adds a link on both sides. Returns false (and changes nothing) when
  /// either side has no spare degree or the link exists.
  bool add_link(NodeId a, NodeId b, Millis cost, NodeId owner);
  void remove_link(NodeId a, NodeId b);
  /// Forgets b on a's side only; used when a detects b's crash.
  void remove_half(NodeId a, NodeId b);

  bool linked(NodeId a, NodeId b) const;
  const LinkInfo* link(NodeId a, NodeId b) const;
  void set_owner(NodeId a, NodeId b, NodeId owner);
  bool is_backbone(NodeId a, NodeId b) const;
  /// The link n owns as its upstream, if any.
  std::optional<NodeId> upstream(NodeId n) const;
  const std::vector<Adjacent>& neighbors(NodeId n) const { return slot(n).links; }

  /// All node ids present, ascending.
  std::vector<NodeId> nodes() const;

 private:
  struct Slot {
    bool present = false;
    bool is_source = false;
    int fanout_max = 0;
    std::vector<Adjacent> links;
  };
  const Slot& slot(NodeId n) const;
  Slot& slot(NodeId n);
  void add_half(NodeId a, NodeId b, const LinkInfo& info);

  std::vector<Slot> slots_;
};

/// Route announcement: distance to the source and the path from the source
/// down to and including the advertiser.
struct Advert {
  Millis distance = 0.0;
  std::vector<NodeId> path;
};

struct Route {
  bool valid = false;
  NodeId parent;
  Millis distance = 0.0;
  /// Source ... parent, self.
  std::vector<NodeId> path;

  friend bool operator==(const Route&, const Route&) = default;
};

struct NeighborAdvert {
  NodeId neighbor;
  Advert advert;
};

/// Path-vector choice: the neighbor minimizing advertised distance plus link
/// cost, ties to the lower id, skipping paths through self or through
/// neighbors without a link. An empty result means partitioned.
Route best_route(NodeId self, const std::vector<NeighborAdvert>& adverts, const std::vector<Adjacent>& links);

/// One node's routing table.
class RoutingState {
 public:
  RoutingState() = default;
  RoutingState(NodeId self, bool is_source);

  NodeId self() const { return self_; }
  bool is_source() const { return is_source_; }
  const Route& route() const { return route_; }
  const std::vector<NeighborAdvert>& adverts() const { return adverts_; }
  const Advert* advert_of(NodeId neighbor) const;

  /// Stores a neighbor's advert. One whose path holds self is kept (it marks
  /// a child) but never chosen.
  void on_advert(NodeId from, Advert advert);
  void on_withdraw(NodeId from);
  /// Drops the neighbor and every stored advert whose path crosses it.
  void on_neighbor_lost(NodeId lost);
  /// Drops only this neighbor's advert (graceful link drop).
  void forget(NodeId neighbor);

  /// Recomputes the route. With `sticky`, only the current parent is
  /// considered while its advert stays valid. Returns true if it changed.
  bool recompute(const std::vector<Adjacent>& links, bool sticky = false);
  /// Forces the parent to `neighbor` when its advert is usable.
  bool adopt(NodeId neighbor, const std::vector<Adjacent>& links);
  /// Routes strictly through `parent`, or becomes partitioned when it is
  /// absent or its advert is unusable. Returns true if the route changed.
  bool follow(std::optional<NodeId> parent, const std::vector<Adjacent>& links);

  /// What this node announces, or nullopt when partitioned.
  std::optional<Advert> advert() const;
  /// Neighbors whose stored path lists self as their parent.
  std::vector<NodeId> children() const;
  bool path_contains(NodeId n) const;

 private:
  NodeId self_;
  bool is_source_ = false;
  std::vector<NeighborAdvert> adverts_;
  Route route_;
};

struct RefineCandidate {
  NodeId node;
  Millis root_distance = 0.0;
  std::vector<NodeId> path;  // candidate's path, ending with the candidate
  Millis link_cost = 0.0;
};

enum class RefineVerdict { kNoImprovement, kDescendant, kSelf, kSwitch };

/// A candidate is taken only when it is not a descendant (self not on its
/// path) and improves the root distance by more than epsilon.
RefineVerdict evaluate_refinement(NodeId self, Millis current_distance, bool routed, const RefineCandidate& c,
                                  Millis epsilon);

/// The highest-cost link of n that is neither anybody's upstream nor a tree
/// edge in n's routing view. Ties go to the lower neighbor id.
std::optional<NodeId> worst_redundant_link(const MeshOverlay& overlay, const RoutingState& routing);

/// Parent-pointer forest over dense node ids.
struct DeliveryTree {
  NodeId source;
  std::vector<NodeId> parent;     // kNoNode for source, absent or detached
  std::vector<bool> present;
  std::vector<bool> reachable;    // has a parent chain to the source
  std::vector<NodeId> unreachable;
  /// Nodes whose parent chain loops.
  std::vector<NodeId> cyclic;

  bool valid() const { return cyclic.empty(); }
  /// Sum of `cost(parent, child)` along the chain, or nullopt.
  template <typename Cost>
  std::optional<Millis> path_cost(NodeId n, const Cost& cost) const {
    if (!reachable.at(n.value)) return std::nullopt;
    Millis total = 0.0;
    for (NodeId cur = n; cur != source; cur = parent[cur.value]) total += cost(parent[cur.value], cur);
    return total;
  }
};

/// Builds the tree from per-node parent choices. `parent_of[i]` is the
/// chosen parent of node i (kNoNode when none); a choice only counts when
/// `edge_ok(parent, child)` holds (live parent, link present).
template <typename EdgeOk>
DeliveryTree derive_delivery_tree(NodeId source, const std::vector<NodeId>& parent_of,
                                  const std::vector<bool>& present, const EdgeOk& edge_ok) {
  const std::size_t n = parent_of.size();
  DeliveryTree tree;
  tree.source = source;
  tree.parent.assign(n, kNoNode);
  tree.present = present;
  tree.reachable.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (!present[i] || NodeId(static_cast<std::uint32_t>(i)) == source) continue;
    const NodeId p = parent_of[i];
    if (p.valid() && p.value < n && present[p.value] && edge_ok(p, NodeId(static_cast<std::uint32_t>(i)))) {
      tree.parent[i] = p;
    }
  }
  // 0 unvisited, 1 on stack, 2 done
  std::vector<char> state(n, 0);
  if (source.value < n && present[source.value]) {
    tree.reachable[source.value] = true;
    state[source.value] = 2;
  }
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < n; ++i) {
    if (!present[i] || state[i] == 2) continue;
    stack.clear();
    std::size_t cur = i;
    bool looped = false;
    while (true) {
      if (state[cur] == 2) break;
      if (state[cur] == 1) {
        looped = true;
        break;
      }
      state[cur] = 1;
      stack.push_back(cur);
      const NodeId p = tree.parent[cur];
      if (!p.valid()) break;
      cur = p.value;
    }
    const bool ok = !looped && state[cur] == 2 && tree.reachable[cur];
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
      state[*it] = 2;
      tree.reachable[*it] = ok;
      if (looped) tree.cyclic.push_back(NodeId(static_cast<std::uint32_t>(*it)));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (present[i] && !tree.reachable[i]) tree.unreachable.push_back(NodeId(static_cast<std::uint32_t>(i)));
  }
  std::sort(tree.cyclic.begin(), tree.cyclic.end());
  return tree;
}

}  // namespace lcc
