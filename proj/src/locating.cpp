#include "lcc/locating.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace lcc {

RingLevels::RingLevels(Millis alpha, int max_level) : alpha_(alpha), max_level_(max_level) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::kInvalidConfiguration, "ring alpha must be positive");
  if (max_level < 1) throw Error(ErrorCode::kInvalidConfiguration, "ring max_level must be >= 1");
  radii_.reserve(static_cast<std::size_t>(max_level) + 2);
  radii_.push_back(0.0);
  for (int i = 1; i <= max_level + 1; ++i) radii_.push_back(alpha * std::exp(static_cast<double>(i - 1)));
}

Millis RingLevels::radius(int level) const { return radii_.at(static_cast<std::size_t>(level)); }

int RingLevels::assign_level(Millis d) const {
  if (!(d >= 0.0)) throw Error(ErrorCode::kInvalidArgument, fmt::format("negative distance {}", d));
  // radii_[0..max_level] are the inner bounds of the addressable levels.
  const auto first = radii_.begin();
  const auto last = first + max_level_ + 1;
  const auto it = std::upper_bound(first, last, d);
  return static_cast<int>(it - first) - 1;
}

Millis selection_threshold(Millis d, int level, const RingLevels& rings) {
  return std::abs(d - rings.radius(level)) * d / rings.radius(level + 1);
}

DistanceMatrix::DistanceMatrix(int level, std::vector<NodeId> index)
    : level_(level), index_(std::move(index)), entries_(index_.size() * index_.size(), kInfDiscard) {
  for (std::size_t j = 0; j < index_.size(); ++j) entries_[j * index_.size() + j] = 0.0;
}

void DistanceMatrix::set(std::size_t j, std::size_t k, Millis d) {
  const auto n = index_.size();
  entries_.at(j * n + k) = d;
  entries_.at(k * n + j) = d;
}

std::vector<NodeId> select_representatives(const DistanceMatrix& matrix, Millis d, const RingLevels& rings,
                                           const IndexChooser& choose) {
  const std::size_t n = matrix.size();
  std::vector<NodeId> representatives;
  if (n == 0) return representatives;

  const Millis gamma = selection_threshold(d, rings.assign_level(d), rings);
  std::vector<bool> removed(n, false);
  std::vector<bool> chosen(n, false);
  std::vector<std::size_t> pool;
  pool.reserve(n);
  for (;;) {
    pool.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (!removed[i] && !chosen[i]) pool.push_back(i);
    }
    if (pool.empty()) break;
    const std::size_t j = pool[choose(pool.size()) % pool.size()];
    for (const std::size_t i : pool) {
      if (i != j && matrix.at(j, i) < gamma) removed[i] = true;
    }
    chosen[j] = true;
    representatives.push_back(matrix.index()[j]);
  }
  return representatives;
}

std::vector<NodeId> select_representatives(const DistanceMatrix& matrix, Millis d, const RingLevels& rings,
                                           Rng& rng) {
  return select_representatives(matrix, d, rings, [&rng](std::size_t n) { return rng.below(n); });
}

LocatingSystem::LocatingSystem(NodeId owner, RingLevels rings, std::size_t k_per_level, SimTime refresh_protect,
                               std::size_t learned_capacity)
    : owner_(owner),
      rings_(rings),
      k_per_level_(k_per_level),
      refresh_protect_(refresh_protect),
      learned_capacity_(learned_capacity),
      levels_(static_cast<std::size_t>(rings.max_level()) + 1) {
  if (k_per_level == 0) throw Error(ErrorCode::kInvalidConfiguration, "k_per_level must be positive");
}

bool LocatingSystem::observe(NodeId leader, Millis d, SimTime now) {
  if (leader == owner_) return false;
  forget(leader);
  auto& level = levels_[static_cast<std::size_t>(rings_.assign_level(d))];
  if (level.size() >= k_per_level_) {
    auto stalest = std::min_element(level.begin(), level.end(), [](const RingMember& a, const RingMember& b) {
      return a.refreshed != b.refreshed ? a.refreshed < b.refreshed : a.id < b.id;
    });
    if (now - stalest->refreshed <= refresh_protect_) return false;
    level.erase(stalest);
  }
  level.push_back(RingMember{leader, d, now});
  return true;
}

void LocatingSystem::forget(NodeId leader) {
  for (auto& level : levels_) {
    const auto it = std::find_if(level.begin(), level.end(), [leader](const RingMember& m) { return m.id == leader; });
    if (it != level.end()) {
      level.erase(it);
      return;
    }
  }
}

bool LocatingSystem::contains(NodeId leader) const { return distance_to(leader).has_value(); }

std::optional<Millis> LocatingSystem::distance_to(NodeId leader) const {
  for (const auto& level : levels_) {
    for (const auto& m : level) {
      if (m.id == leader) return m.distance;
    }
  }
  return std::nullopt;
}

std::vector<RingMember> LocatingSystem::near_level(int i) const {
  std::vector<RingMember> out;
  for (int l = std::max(0, i - 1); l <= std::min(rings_.max_level(), i + 1); ++l) {
    const auto& level = levels_[static_cast<std::size_t>(l)];
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

std::vector<RingMember> LocatingSystem::members() const {
  std::vector<RingMember> out;
  for (const auto& level : levels_) out.insert(out.end(), level.begin(), level.end());
  return out;
}

std::size_t LocatingSystem::size() const {
  std::size_t n = 0;
  for (const auto& level : levels_) n += level.size();
  return n;
}

std::uint64_t LocatingSystem::pair_key(NodeId a, NodeId b) {
  if (b < a) std::swap(a, b);
  return (static_cast<std::uint64_t>(a.value) << 32) | b.value;
}

void LocatingSystem::learn(NodeId a, NodeId b, Millis d) {
  if (a == b) return;
  const auto key = pair_key(a, b);
  auto [it, inserted] = learned_.try_emplace(key, static_cast<float>(d));
  if (!inserted) {
    it->second = static_cast<float>(d);
    return;
  }
  learned_order_.push_back(key);
  while (learned_.size() > learned_capacity_) {
    learned_.erase(learned_order_.front());
    learned_order_.pop_front();
  }
}

std::optional<Millis> LocatingSystem::learned(NodeId a, NodeId b) const {
  if (a == b) return 0.0;
  const auto it = learned_.find(pair_key(a, b));
  if (it == learned_.end()) return std::nullopt;
  return static_cast<Millis>(it->second);
}

DistanceMatrix LocatingSystem::matrix(int level) const {
  const auto members = near_level(level);
  std::vector<NodeId> index;
  index.reserve(members.size());
  for (const auto& m : members) index.push_back(m.id);
  DistanceMatrix out(level, std::move(index));
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t k = j + 1; k < out.size(); ++k) {
      if (const auto d = learned(out.index()[j], out.index()[k])) out.set(j, k, *d);
    }
  }
  return out;
}

bool candidate_less(const Candidate& a, const Candidate& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.node < b.node;
}

std::vector<NodeId> choose_queried_nodes(const LocatingSystem& state, NodeId newcomer, Millis d_requested,
                                         LocatingMode mode, Rng& rng) {
  const int level = state.rings().assign_level(d_requested);
  auto members = state.near_level(level);
  std::erase_if(members, [newcomer](const RingMember& m) { return m.id == newcomer; });
  std::vector<NodeId> ids;
  ids.reserve(members.size());
  for (const auto& m : members) ids.push_back(m.id);
  if (mode == LocatingMode::kNonSelective || ids.empty()) return ids;

  DistanceMatrix matrix(level, ids);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    for (std::size_t k = j + 1; k < ids.size(); ++k) {
      if (const auto d = state.learned(ids[j], ids[k])) matrix.set(j, k, *d);
    }
  }
  return select_representatives(matrix, d_requested, state.rings(), rng);
}

std::vector<Candidate> filter_candidates(std::span<const Candidate> probe_results, Millis d_requested) {
  std::vector<Candidate> out;
  for (const auto& c : probe_results) {
    if (c.distance < d_requested) out.push_back(c);
  }
  std::sort(out.begin(), out.end(), candidate_less);
  return out;
}

void record_probe_results(LocatingSystem& state, NodeId newcomer, Millis d_requested,
                          std::span<const Candidate> probe_results) {
  state.learn(state.owner(), newcomer, d_requested);
  for (const auto& c : probe_results) state.learn(c.node, newcomer, c.distance);
}

std::vector<Candidate> handle_localization_request(LocatingSystem& state, bool is_leader, NodeId newcomer,
                                                   Millis d_requested, LocatingMode mode, Rng& rng,
                                                   const ProbeFn& probe) {
  if (!is_leader) {
    throw Error(ErrorCode::kNotALeader, fmt::format("node {} is not a cluster leader", state.owner().value));
  }
  const auto queried = choose_queried_nodes(state, newcomer, d_requested, mode, rng);
  std::vector<Candidate> results;
  results.reserve(queried.size());
  for (const NodeId q : queried) {
    if (const auto d = probe(q, newcomer)) results.push_back(Candidate{q, *d});
  }
  record_probe_results(state, newcomer, d_requested, results);
  return filter_candidates(results, d_requested);
}

LocateSession::LocateSession(NodeId newcomer, LocateConfig config) : newcomer_(newcomer), config_(config) {
  if (config_.stop_c < 1) throw Error(ErrorCode::kInvalidConfiguration, "stop criterion C must be >= 1");
  if (!(config_.r_max >= 0.0)) throw Error(ErrorCode::kInvalidConfiguration, "R_max must be non-negative");
}

LocateSession::Step LocateSession::on_boot_measured(NodeId boot, Millis d) {
  known_.push_back(Candidate{boot, d});
  if (d <= config_.r_max) return finish(LocatingOutcome::Kind::kJoinClusters);
  requested_.push_back(Candidate{boot, d});
  outcome_.requested_count = 1;
  return SendRequest{boot, d};
}

void LocateSession::merge(std::span<const Candidate> candidates) {
  for (const auto& c : candidates) {
    if (c.node == newcomer_ || std::find(refused_.begin(), refused_.end(), c.node) != refused_.end()) continue;
    const bool seen = std::any_of(known_.begin(), known_.end(), [&c](const Candidate& k) { return k.node == c.node; });
    if (seen) continue;
    known_.push_back(c);
    working_.push_back(c);
  }
  std::sort(working_.begin(), working_.end(), candidate_less);
}

LocateSession::Step LocateSession::on_candidates(NodeId requested, std::span<const Candidate> candidates) {
  (void)requested;
  response_sizes_.push_back(candidates.size());
  merge(candidates);
  return advance();
}

LocateSession::Step LocateSession::on_request_failed(NodeId requested) {
  response_sizes_.push_back(0);
  std::erase_if(known_, [requested](const Candidate& c) { return c.node == requested; });
  return advance();
}

LocateSession::Step LocateSession::on_join_rejected(std::span<const NodeId> refused) {
  const int requested = outcome_.requested_count;
  outcome_ = LocatingOutcome{};
  outcome_.requested_count = requested;
  std::optional<Candidate> ask;
  for (const NodeId r : refused) {
    refused_.push_back(r);
    const auto it = std::find_if(known_.begin(), known_.end(), [r](const Candidate& c) { return c.node == r; });
    if (it == known_.end()) continue;
    const bool asked = std::any_of(requested_.begin(), requested_.end(), [r](const Candidate& c) { return c.node == r; });
    if (!asked && !ask) ask = *it;
    known_.erase(it);
  }
  std::erase_if(working_, [this](const Candidate& c) {
    return std::find(refused_.begin(), refused_.end(), c.node) != refused_.end();
  });
  if (ask && outcome_.requested_count < config_.stop_c) {
    requested_.push_back(*ask);
    ++outcome_.requested_count;
    return SendRequest{ask->node, ask->distance};
  }
  return advance();
}

LocateSession::Step LocateSession::on_reboot(NodeId boot, Millis d) {
  const int requested = outcome_.requested_count;
  outcome_ = LocatingOutcome{};
  outcome_.requested_count = requested;
  const bool refused = std::find(refused_.begin(), refused_.end(), boot) != refused_.end();
  const bool seen = std::any_of(known_.begin(), known_.end(), [boot](const Candidate& c) { return c.node == boot; });
  if (refused || seen || boot == newcomer_) return advance();
  known_.push_back(Candidate{boot, d});
  if (d <= config_.r_max || outcome_.requested_count >= config_.stop_c) return advance();
  requested_.push_back(Candidate{boot, d});
  ++outcome_.requested_count;
  return SendRequest{boot, d};
}

LocateSession::Step LocateSession::advance() {
  const bool in_scope = std::any_of(known_.begin(), known_.end(),
                                    [this](const Candidate& c) { return c.distance <= config_.r_max; });
  if (in_scope) return finish(LocatingOutcome::Kind::kJoinClusters);
  if (outcome_.requested_count >= config_.stop_c || working_.empty()) {
    return finish(LocatingOutcome::Kind::kCreateOwnCluster);
  }
  const Candidate next = working_.front();
  working_.erase(working_.begin());
  requested_.push_back(next);
  ++outcome_.requested_count;
  return SendRequest{next.node, next.distance};
}

LocateSession::Step LocateSession::finish(LocatingOutcome::Kind kind) {
  outcome_.kind = kind;
  outcome_.known = known_;
  std::sort(outcome_.known.begin(), outcome_.known.end(), candidate_less);
  outcome_.leaders.clear();
  if (kind == LocatingOutcome::Kind::kJoinClusters) {
    for (const auto& c : outcome_.known) {
      if (c.distance <= config_.r_max) outcome_.leaders.push_back(c);
    }
  }
  return Done{};
}

LocatingOutcome locate(NodeId newcomer, LocatingNetwork& network, const LocateConfig& config, Rng& rng) {
  LocateSession session(newcomer, config);
  SimTime elapsed = 0;
  int probes = 0;

  std::optional<std::pair<NodeId, Millis>> boot;
  for (int attempt = 0; attempt <= config.bootstrap_retries && !boot; ++attempt) {
    const auto pick = network.rendezvous(rng);
    if (!pick) continue;
    ++probes;
    if (const auto d = network.measure(newcomer, *pick)) {
      elapsed += from_ms(*d);
      boot = std::make_pair(*pick, *d);
    }
  }
  if (!boot) {
    throw Error(ErrorCode::kBootstrapFailed, fmt::format("newcomer {} found no live boot node", newcomer.value));
  }

  auto step = session.on_boot_measured(boot->first, boot->second);
  while (const auto* send = std::get_if<LocateSession::SendRequest>(&step)) {
    elapsed += from_ms(send->distance);
    try {
      const auto candidates = network.request(send->to, newcomer, send->distance, probes);
      step = session.on_candidates(send->to, candidates);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotALeader) throw;
      step = session.on_request_failed(send->to);
    }
  }
  auto outcome = session.outcome();
  outcome.elapsed = elapsed;
  outcome.probes_sent = probes;
  return outcome;
}

}  // namespace lcc
