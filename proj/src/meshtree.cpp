#include "lcc/meshtree.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace lcc {

const MeshOverlay::Slot& MeshOverlay::slot(NodeId n) const {
  if (n.value >= slots_.size() || !slots_[n.value].present) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("node {} is not in the mesh", n.value));
  }
  return slots_[n.value];
}

MeshOverlay::Slot& MeshOverlay::slot(NodeId n) {
  return const_cast<Slot&>(static_cast<const MeshOverlay&>(*this).slot(n));
}

void MeshOverlay::add_node(NodeId n, int fanout_max, bool is_source) {
  if (fanout_max < 0) throw Error(ErrorCode::kInvalidArgument, "negative fanout");
  if (n.value >= slots_.size()) slots_.resize(n.value + 1);
  auto& s = slots_[n.value];
  if (s.present) throw Error(ErrorCode::kInvalidArgument, fmt::format("node {} already in the mesh", n.value));
  s = Slot{true, is_source, fanout_max, {}};
}

void MeshOverlay::remove_node(NodeId n) {
  if (!contains(n)) return;
  for (const auto& adj : slots_[n.value].links) {
    if (contains(adj.node)) std::erase_if(slots_[adj.node.value].links, [n](const Adjacent& a) { return a.node == n; });
  }
  slots_[n.value] = Slot{};
}

bool MeshOverlay::contains(NodeId n) const { return n.value < slots_.size() && slots_[n.value].present; }

int MeshOverlay::budget(NodeId n) const {
  const auto& s = slot(n);
  return s.fanout_max + (s.is_source ? 0 : 1);
}

int MeshOverlay::degree_used(NodeId n) const {
  const auto& s = slot(n);
  const int links = static_cast<int>(s.links.size());
  return std::max(0, links - (s.is_source ? 0 : 1));
}

bool MeshOverlay::has_spare(NodeId n, int reserved) const {
  return static_cast<int>(link_count(n)) + reserved < budget(n);
}

void MeshOverlay::add_half(NodeId a, NodeId b, const LinkInfo& info) { slot(a).links.push_back(Adjacent{b, info}); }

bool MeshOverlay::add_link(NodeId a, NodeId b, Millis cost, NodeId owner) {
  if (a == b || linked(a, b) || !has_spare(a) || !has_spare(b)) return false;
  const LinkInfo info{cost, owner};
  add_half(a, b, info);
  add_half(b, a, info);
  return true;
}

void MeshOverlay::remove_link(NodeId a, NodeId b) {
  remove_half(a, b);
  remove_half(b, a);
}

void MeshOverlay::remove_half(NodeId a, NodeId b) {
  if (!contains(a)) return;
  std::erase_if(slots_[a.value].links, [b](const Adjacent& x) { return x.node == b; });
}

const LinkInfo* MeshOverlay::link(NodeId a, NodeId b) const {
  if (!contains(a)) return nullptr;
  for (const auto& adj : slots_[a.value].links) {
    if (adj.node == b) return &adj.link;
  }
  return nullptr;
}

bool MeshOverlay::linked(NodeId a, NodeId b) const { return link(a, b) != nullptr; }

void MeshOverlay::set_owner(NodeId a, NodeId b, NodeId owner) {
  for (auto [x, y] : {std::pair{a, b}, std::pair{b, a}}) {
    if (!contains(x)) continue;
    for (auto& adj : slots_[x.value].links) {
      if (adj.node == y) adj.link.owner = owner;
    }
  }
}

bool MeshOverlay::is_backbone(NodeId a, NodeId b) const {
  const auto* l = link(a, b);
  return l && l->owner.valid();
}

std::optional<NodeId> MeshOverlay::upstream(NodeId n) const {
  for (const auto& adj : slot(n).links) {
    if (adj.link.owner == n) return adj.node;
  }
  return std::nullopt;
}

std::vector<NodeId> MeshOverlay::nodes() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].present) out.push_back(NodeId(static_cast<std::uint32_t>(i)));
  }
  return out;
}

namespace {

bool contains_node(const std::vector<NodeId>& path, NodeId n) {
  return std::find(path.begin(), path.end(), n) != path.end();
}

const Adjacent* find_link(const std::vector<Adjacent>& links, NodeId n) {
  for (const auto& l : links) {
    if (l.node == n) return &l;
  }
  return nullptr;
}

Route route_via(NodeId self, NodeId neighbor, const Advert& advert, Millis cost) {
  Route r;
  r.valid = true;
  r.parent = neighbor;
  r.distance = advert.distance + cost;
  r.path = advert.path;
  r.path.push_back(self);
  return r;
}

}  // namespace

Route best_route(NodeId self, const std::vector<NeighborAdvert>& adverts, const std::vector<Adjacent>& links) {
  const NeighborAdvert* best = nullptr;
  Millis best_distance = 0.0;
  Millis best_cost = 0.0;
  for (const auto& na : adverts) {
    if (na.advert.path.empty() || contains_node(na.advert.path, self)) continue;
    const auto* l = find_link(links, na.neighbor);
    if (!l) continue;
    const Millis d = na.advert.distance + l->link.cost;
    if (!best || d < best_distance || (d == best_distance && na.neighbor < best->neighbor)) {
      best = &na;
      best_distance = d;
      best_cost = l->link.cost;
    }
  }
  if (!best) return Route{};
  return route_via(self, best->neighbor, best->advert, best_cost);
}

RoutingState::RoutingState(NodeId self, bool is_source) : self_(self), is_source_(is_source) {
  if (is_source) route_ = Route{true, kNoNode, 0.0, {self}};
}

const Advert* RoutingState::advert_of(NodeId neighbor) const {
  for (const auto& na : adverts_) {
    if (na.neighbor == neighbor) return &na.advert;
  }
  return nullptr;
}

void RoutingState::on_advert(NodeId from, Advert advert) {
  for (auto& na : adverts_) {
    if (na.neighbor == from) {
      na.advert = std::move(advert);
      return;
    }
  }
  adverts_.push_back(NeighborAdvert{from, std::move(advert)});
}

void RoutingState::on_withdraw(NodeId from) { on_advert(from, Advert{}); }

void RoutingState::on_neighbor_lost(NodeId lost) {
  std::erase_if(adverts_, [lost](const NeighborAdvert& na) { return na.neighbor == lost; });
  for (auto& na : adverts_) {
    if (contains_node(na.advert.path, lost)) na.advert.path.clear();
  }
}

void RoutingState::forget(NodeId neighbor) {
  std::erase_if(adverts_, [neighbor](const NeighborAdvert& na) { return na.neighbor == neighbor; });
}

bool RoutingState::recompute(const std::vector<Adjacent>& links, bool sticky) {
  if (is_source_) return false;
  Route next;
  if (sticky && route_.valid) {
    const auto* adv = advert_of(route_.parent);
    const auto* l = find_link(links, route_.parent);
    if (adv && l && !adv->path.empty() && !contains_node(adv->path, self_)) {
      next = route_via(self_, route_.parent, *adv, l->link.cost);
    }
  } else if (!sticky) {
    next = best_route(self_, adverts_, links);
  }
  if (next == route_) return false;
  route_ = std::move(next);
  return true;
}

bool RoutingState::adopt(NodeId neighbor, const std::vector<Adjacent>& links) {
  const auto* adv = advert_of(neighbor);
  const auto* l = find_link(links, neighbor);
  if (!adv || !l || adv->path.empty() || contains_node(adv->path, self_)) return false;
  Route next = route_via(self_, neighbor, *adv, l->link.cost);
  if (next == route_) return false;
  route_ = std::move(next);
  return true;
}

bool RoutingState::follow(std::optional<NodeId> parent, const std::vector<Adjacent>& links) {
  if (is_source_) return false;
  if (parent && adopt(*parent, links)) return true;
  if (parent && route_.valid && route_.parent == *parent) {
    const auto* adv = advert_of(*parent);
    if (adv && !adv->path.empty() && !contains_node(adv->path, self_) && find_link(links, *parent)) return false;
  }
  if (!route_.valid) return false;
  route_ = Route{};
  return true;
}

std::optional<Advert> RoutingState::advert() const {
  if (!route_.valid) return std::nullopt;
  return Advert{route_.distance, route_.path};
}

std::vector<NodeId> RoutingState::children() const {
  std::vector<NodeId> out;
  for (const auto& na : adverts_) {
    const auto& p = na.advert.path;
    if (p.size() >= 2 && p[p.size() - 2] == self_) out.push_back(na.neighbor);
  }
  return out;
}

bool RoutingState::path_contains(NodeId n) const { return contains_node(route_.path, n); }

RefineVerdict evaluate_refinement(NodeId self, Millis current_distance, bool routed, const RefineCandidate& c,
                                  Millis epsilon) {
  if (c.node == self) return RefineVerdict::kSelf;
  if (c.path.empty() || contains_node(c.path, self)) return RefineVerdict::kDescendant;
  const Millis offered = c.root_distance + c.link_cost;
  if (!routed || offered < current_distance - epsilon) return RefineVerdict::kSwitch;
  return RefineVerdict::kNoImprovement;
}

std::optional<NodeId> worst_redundant_link(const MeshOverlay& overlay, const RoutingState& routing) {
  const NodeId self = routing.self();
  const auto children = routing.children();
  const Adjacent* worst = nullptr;
  for (const auto& adj : overlay.neighbors(self)) {
    if (adj.link.owner.valid()) continue;
    if (routing.route().valid && adj.node == routing.route().parent) continue;
    if (std::find(children.begin(), children.end(), adj.node) != children.end()) continue;
    if (!worst || adj.link.cost > worst->link.cost ||
        (adj.link.cost == worst->link.cost && adj.node < worst->node)) {
      worst = &adj;
    }
  }
  if (!worst) return std::nullopt;
  return worst->node;
}

}  // namespace lcc
