#include "lcc/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace lcc {

std::string_view to_string(Protocol p) { return p == Protocol::kLcc ? "lcc" : "flat"; }
std::string_view to_string(RecoveryScheme r) { return r == RecoveryScheme::kLcc ? "lcc" : "grandparent"; }

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidConfiguration, what); }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(fmt::format("{}: '{}' is not a number", key, v));
  return out;
}

std::int64_t to_int(std::string_view key, std::string_view v) {
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(fmt::format("{}: '{}' is not an integer", key, v));
  return out;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

FailureSpec FailureSpec::parse(std::string_view text) {
  FailureSpec f;
  bool have_at = false, have_select = false;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) bad(fmt::format("failure entry: expected key=value, got '{}'", tok));
    const std::string_view k = std::string_view(tok).substr(0, eq);
    const std::string_view v = std::string_view(tok).substr(eq + 1);
    if (k == "at") {
      f.at_s = to_double("failure at", v);
      have_at = true;
    } else if (k == "rejoin_at") {
      f.rejoin_at_s = to_double("failure rejoin_at", v);
    } else if (k == "select") {
      const auto open = v.find('(');
      if (open == std::string_view::npos || v.back() != ')') bad(fmt::format("failure select: bad selector '{}'", v));
      const auto name = v.substr(0, open);
      const auto arg = v.substr(open + 1, v.size() - open - 2);
      if (name == "random_fraction" || name == "leaders_fraction") {
        f.selector = name == "random_fraction" ? Selector::kRandomFraction : Selector::kLeadersFraction;
        f.fraction = to_double("failure fraction", arg);
      } else if (name == "nodes") {
        f.selector = Selector::kNodes;
        std::size_t pos = 0;
        while (pos <= arg.size() && !arg.empty()) {
          const auto comma = arg.find(',', pos);
          const auto item = trim(arg.substr(pos, comma == std::string_view::npos ? arg.npos : comma - pos));
          const auto id = to_int("failure node", item);
          if (id < 0) bad("failure node ids must be non-negative");
          f.nodes.push_back(static_cast<std::uint32_t>(id));
          if (comma == std::string_view::npos) break;
          pos = comma + 1;
        }
      } else {
        bad(fmt::format("failure select: unknown selector '{}'", name));
      }
      have_select = true;
    } else {
      bad(fmt::format("failure entry: unknown field '{}'", k));
    }
  }
  if (!have_at || !have_select) bad("failure entry needs at= and select=");
  return f;
}

std::string FailureSpec::to_string() const {
  std::string sel;
  switch (selector) {
    case Selector::kRandomFraction: sel = fmt::format("random_fraction({})", fraction); break;
    case Selector::kLeadersFraction: sel = fmt::format("leaders_fraction({})", fraction); break;
    case Selector::kNodes: sel = fmt::format("nodes({})", fmt::join(nodes, ",")); break;
  }
  std::string out = fmt::format("at={} select={}", at_s, sel);
  if (rejoin_at_s) out += fmt::format(" rejoin_at={}", *rejoin_at_s);
  return out;
}

void ScenarioConfig::set(std::string_view key, std::string_view value) {
  const auto d = [&] { return to_double(key, value); };
  const auto i = [&] { return static_cast<int>(to_int(key, value)); };
  if (key == "protocol") {
    if (value == "lcc") protocol = Protocol::kLcc;
    else if (value == "flat") protocol = Protocol::kFlat;
    else bad(fmt::format("protocol: expected lcc or flat, got '{}'", value));
  } else if (key == "recovery") {
    if (value == "lcc") recovery = RecoveryScheme::kLcc;
    else if (value == "grandparent") recovery = RecoveryScheme::kGrandparent;
    else bad(fmt::format("recovery: expected lcc or grandparent, got '{}'", value));
  } else if (key == "n") {
    const auto v = to_int(key, value);
    if (v < 0) bad("n must be positive");
    n = static_cast<std::size_t>(v);
  } else if (key == "topology.model") {
    topology = parse_topology_model(value);
  } else if (key == "seed") {
    const auto v = to_int(key, value);
    if (v < 0) bad("seed must be non-negative");
    seed = static_cast<std::uint64_t>(v);
  } else if (key == "r_max_ms") {
    r_max_ms = d();
  } else if (key == "alpha_ms") {
    alpha_ms = d();
  } else if (key == "max_level") {
    max_level = i();
  } else if (key == "k_per_level") {
    k_per_level = i();
  } else if (key == "stop_c") {
    stop_c = i();
  } else if (key == "locating.mode") {
    if (value == "selective") locating_mode = LocatingMode::kSelective;
    else if (value == "non_selective") locating_mode = LocatingMode::kNonSelective;
    else bad(fmt::format("locating.mode: expected selective or non_selective, got '{}'", value));
  } else if (key == "rt_s") {
    rt_s = d();
  } else if (key == "improvement_epsilon_ms") {
    improvement_epsilon_ms = d();
  } else if (key == "flat.links") {
    flat_links = i();
  } else if (key == "advert_interval_s") {
    advert_interval_s = d();
  } else if (key == "failure_detect_s") {
    failure_detect_s = d();
  } else if (key == "source_fanout") {
    source_fanout = i();
  } else if (key == "fanout.distribution") {
    try {
      fanout = FanoutDistribution::parse(value);
    } catch (const Error& e) {
      bad(fmt::format("fanout.distribution: {}", e.what()));
    }
  } else if (key == "keepalive_s") {
    keepalive_s = d();
  } else if (key == "leader_timeout_periods") {
    leader_timeout_periods = i();
  } else if (key == "gossip_s") {
    gossip_s = d();
  } else if (key == "gossip.g") {
    gossip_g = i();
  } else if (key == "gossip.view_bound") {
    view_bound = i();
  } else if (key == "stability_s") {
    stability_s = d();
  } else if (key == "edge_cap") {
    edge_cap = i();
  } else if (key == "churn.join_rate") {
    join_rate = d();
  } else if (key == "churn.lifetime_param") {
    lifetime_param = d();
  } else if (key.starts_with("failures[") && key.ends_with("]")) {
    failures.push_back(FailureSpec::parse(value));
  } else if (key == "duration_s") {
    duration_s = d();
  } else if (key == "metrics.snapshot_period_s") {
    snapshot_period_s = d();
  } else if (key == "metrics.adjust_window_s") {
    adjust_window_s = d();
  } else if (key == "metrics.recovery_horizon_s") {
    recovery_horizon_s = d();
  } else {
    bad(fmt::format("unknown key '{}'", key));
  }
}

void ScenarioConfig::validate() const {
  if (n == 0) bad("n must be at least 1");
  if (!(r_max_ms >= 0.0)) bad("r_max_ms must be non-negative");
  if (!(alpha_ms > 0.0)) bad("alpha_ms must be positive");
  if (max_level < 1) bad("max_level must be at least 1");
  if (k_per_level < 1) bad("k_per_level must be at least 1");
  if (stop_c < 1) bad("stop_c must be at least 1");
  if (!(rt_s > 0.0)) bad("rt_s must be positive");
  if (improvement_epsilon_ms < 0.0) bad("improvement_epsilon_ms must be non-negative");
  if (flat_links < 1) bad("flat.links must be at least 1");
  if (advert_interval_s < 0.0) bad("advert_interval_s must be non-negative");
  if (!(failure_detect_s > 0.0)) bad("failure_detect_s must be positive");
  if (source_fanout < 1) bad("source_fanout must be at least 1");
  if (!(keepalive_s > 0.0)) bad("keepalive_s must be positive");
  if (leader_timeout_periods < 1) bad("leader_timeout_periods must be at least 1");
  if (!(gossip_s > 0.0)) bad("gossip_s must be positive");
  if (gossip_g < 1) bad("gossip.g must be at least 1");
  if (view_bound < 1) bad("gossip.view_bound must be at least 1");
  if (stability_s < 0.0) bad("stability_s must be non-negative");
  if (edge_cap < 1) bad("edge_cap must be at least 1");
  if (!(join_rate > 0.0)) bad("churn.join_rate must be positive");
  if (lifetime_param < 0.0) bad("churn.lifetime_param must be non-negative");
  if (duration_s < 0.0) bad("duration_s must be non-negative");
  if (!(snapshot_period_s > 0.0)) bad("metrics.snapshot_period_s must be positive");
  if (!(adjust_window_s > 0.0)) bad("metrics.adjust_window_s must be positive");
  if (!(recovery_horizon_s > 0.0)) bad("metrics.recovery_horizon_s must be positive");
  for (const auto& f : failures) {
    if (f.at_s < 0.0 || f.at_s > duration_s) bad(fmt::format("failure at={} outside the run horizon", f.at_s));
    if (f.selector != FailureSpec::Selector::kNodes && (f.fraction < 0.0 || f.fraction > 1.0)) {
      bad("failure fraction must be within [0, 1]");
    }
    for (auto id : f.nodes) {
      if (id == 0) bad("node 0 hosts the source and cannot fail");
      if (id >= n) bad(fmt::format("failure node {} outside 0..{}", id, n - 1));
    }
    if (f.rejoin_at_s && *f.rejoin_at_s < f.at_s) bad("rejoin_at must not precede at");
  }
}

ScenarioConfig ScenarioConfig::parse(std::string_view text) {
  ScenarioConfig c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) bad(fmt::format("line {}: expected key = value", line_no));
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) bad(fmt::format("line {}: empty key or value", line_no));
      try {
        c.set(key, value);
      } catch (const Error& e) {
        bad(fmt::format("line {}: {}", line_no, e.what()));
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad(fmt::format("cannot open config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const Error& e) {
    bad(fmt::format("{}: {}", path, e.what()));
  }
}

std::string ScenarioConfig::to_text() const {
  std::string out;
  const auto kv = [&](std::string_view k, const std::string& v) { out += fmt::format("{} = {}\n", k, v); };
  kv("protocol", std::string(to_string(protocol)));
  kv("recovery", std::string(to_string(recovery)));
  kv("n", std::to_string(n));
  kv("topology.model", std::string(lcc::to_string(topology)));
  kv("seed", std::to_string(seed));
  kv("r_max_ms", fmt_double(r_max_ms));
  kv("alpha_ms", fmt_double(alpha_ms));
  kv("max_level", std::to_string(max_level));
  kv("k_per_level", std::to_string(k_per_level));
  kv("stop_c", std::to_string(stop_c));
  kv("locating.mode", locating_mode == LocatingMode::kSelective ? "selective" : "non_selective");
  kv("rt_s", fmt_double(rt_s));
  kv("improvement_epsilon_ms", fmt_double(improvement_epsilon_ms));
  kv("flat.links", std::to_string(flat_links));
  kv("advert_interval_s", fmt_double(advert_interval_s));
  kv("failure_detect_s", fmt_double(failure_detect_s));
  kv("source_fanout", std::to_string(source_fanout));
  kv("fanout.distribution", fanout.to_string());
  kv("keepalive_s", fmt_double(keepalive_s));
  kv("leader_timeout_periods", std::to_string(leader_timeout_periods));
  kv("gossip_s", fmt_double(gossip_s));
  kv("gossip.g", std::to_string(gossip_g));
  kv("gossip.view_bound", std::to_string(view_bound));
  kv("stability_s", fmt_double(stability_s));
  kv("edge_cap", std::to_string(edge_cap));
  kv("churn.join_rate", fmt_double(join_rate));
  kv("churn.lifetime_param", fmt_double(lifetime_param));
  for (std::size_t k = 0; k < failures.size(); ++k) kv(fmt::format("failures[{}]", k), failures[k].to_string());
  kv("duration_s", fmt_double(duration_s));
  kv("metrics.snapshot_period_s", fmt_double(snapshot_period_s));
  kv("metrics.adjust_window_s", fmt_double(adjust_window_s));
  kv("metrics.recovery_horizon_s", fmt_double(recovery_horizon_s));
  return out;
}

}  // namespace lcc
