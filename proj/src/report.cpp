#include "lcc/report.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <thread>

#include <fmt/format.h>

namespace lcc {

namespace {

std::string num(double v) { return std::isnan(v) ? "NA" : fmt::format("{:.6f}", v); }

std::string cell(double v, int prec) { return std::isnan(v) ? "NA" : fmt::format("{:.{}f}", v, prec); }

double conv_value(const RunSummary& s) {
  return s.convergence.converged ? s.convergence.time_s : std::numeric_limits<double>::quiet_NaN();
}

std::uint64_t parse_seed(std::string_view s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("bad seed '{}'", s));
  }
  return v;
}

double mean_of(const std::vector<RunSummary>& rows, double (*get)(const RunSummary&)) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    const double v = get(r);
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

}  // namespace

RunSummary summarize(const ScenarioConfig& cfg, const RunResult& res) {
  RunSummary s;
  s.seed = cfg.seed;
  s.convergence = convergence_time(res.snapshots, res.last_join_s);
  if (!res.snapshots.empty()) {
    const auto& last = res.snapshots.back();
    s.ardp = last.ardp;
    s.ardp_trimmed = last.ardp_trimmed;
    s.connected_fraction = last.connected_fraction;
    s.stress_mean = last.stress_mean;
    s.stress_max = last.stress_max;
    s.adjust_rate = last.adjustments_per_node_per_hour;
    s.clusters = last.clusters;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& snap : res.snapshots) {
      if (snap.time_s <= res.last_join_s) continue;
      sum += snap.control_kbps_per_node;
      ++n;
    }
    s.control_kbps = n == 0 ? last.control_kbps_per_node : sum / static_cast<double>(n);
  }
  std::size_t correct = 0, within = 0;
  double requested = 0.0, probe = 0.0;
  for (const auto& l : res.locates) {
    if (!l.completed) continue;
    ++s.locates;
    correct += l.correct;
    within += l.requested <= 15;
    requested += l.requested;
    probe += static_cast<double>(l.probe_bytes);
  }
  if (s.locates > 0) {
    const auto n = static_cast<double>(s.locates);
    s.locate_accuracy = static_cast<double>(correct) / n;
    s.within_15_requested = static_cast<double>(within) / n;
    s.mean_requested = requested / n;
    s.mean_join_probe_bytes = probe / n;
  }
  std::vector<double> resumes;
  for (const auto& r : res.recoveries) {
    resumes.insert(resumes.end(), r.resume_s.begin(), r.resume_s.end());
    s.recovery_censored += r.censored;
  }
  const auto rs = summarize_recovery(resumes, s.recovery_censored);
  s.recovery_affected = rs.affected;
  s.recovery_mean_s = rs.mean_s;
  s.invariant_violations = res.invariant_violations;
  s.leaderless_members = res.leaderless_members;
  return s;
}

std::string_view summary_csv_header() {
  return "seed,converged,convergence_s,ardp,ardp_trimmed,connected_fraction,stress_mean,stress_max,"
         "adjust_per_node_hour,control_kbps_per_node,clusters,locates,locate_accuracy,mean_requested,"
         "within_15_requested,join_probe_bytes,recovery_affected,recovery_censored,recovery_mean_s,"
         "invariant_violations";
}

std::string summary_csv_row(const RunSummary& s) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", s.seed,
                     s.convergence.converged ? 1 : 0, num(conv_value(s)), num(s.ardp), num(s.ardp_trimmed),
                     num(s.connected_fraction), num(s.stress_mean), num(s.stress_max), num(s.adjust_rate),
                     num(s.control_kbps), s.clusters, s.locates, num(s.locate_accuracy), num(s.mean_requested),
                     num(s.within_15_requested), num(s.mean_join_probe_bytes), s.recovery_affected,
                     s.recovery_censored, num(s.recovery_mean_s), s.invariant_violations);
}

std::string summary_csv_mean_row(const std::vector<RunSummary>& rows) {
  const auto m = [&](double (*get)(const RunSummary&)) { return num(mean_of(rows, get)); };
  std::size_t converged = 0, violations = 0;
  for (const auto& r : rows) {
    converged += r.convergence.converged;
    violations += r.invariant_violations;
  }
  return fmt::format(
      "mean,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
      num(rows.empty() ? 0.0 : static_cast<double>(converged) / static_cast<double>(rows.size())),
      m([](const RunSummary& s) { return conv_value(s); }), m([](const RunSummary& s) { return s.ardp; }),
      m([](const RunSummary& s) { return s.ardp_trimmed; }),
      m([](const RunSummary& s) { return s.connected_fraction; }),
      m([](const RunSummary& s) { return s.stress_mean; }), m([](const RunSummary& s) { return s.stress_max; }),
      m([](const RunSummary& s) { return s.adjust_rate; }), m([](const RunSummary& s) { return s.control_kbps; }),
      m([](const RunSummary& s) { return static_cast<double>(s.clusters); }),
      m([](const RunSummary& s) { return static_cast<double>(s.locates); }),
      m([](const RunSummary& s) { return s.locate_accuracy; }),
      m([](const RunSummary& s) { return s.mean_requested; }),
      m([](const RunSummary& s) { return s.within_15_requested; }),
      m([](const RunSummary& s) { return s.mean_join_probe_bytes; }),
      m([](const RunSummary& s) { return static_cast<double>(s.recovery_affected); }),
      m([](const RunSummary& s) { return static_cast<double>(s.recovery_censored); }),
      m([](const RunSummary& s) { return s.recovery_mean_s; }), violations);
}

SeedRange parse_seed_range(std::string_view text) {
  SeedRange r;
  const auto dots = text.find("..");
  if (dots == std::string_view::npos) {
    r.first = r.last = parse_seed(text);
  } else {
    r.first = parse_seed(text.substr(0, dots));
    r.last = parse_seed(text.substr(dots + 2));
  }
  if (r.last < r.first) throw Error(ErrorCode::kInvalidArgument, fmt::format("empty seed range '{}'", text));
  return r;
}

std::vector<RunSummary> run_seeds(const ScenarioConfig& cfg, SeedRange seeds, unsigned jobs) {
  const std::size_t count = seeds.last - seeds.first + 1;
  std::vector<RunSummary> out(count);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      auto c = cfg;
      c.seed = seeds.first + i;
      Simulator sim(c);
      out[i] = summarize(c, sim.run());
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
  std::vector<std::jthread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  return out;
}

std::string compare_table(std::string_view name_a, const std::vector<RunSummary>& a, std::string_view name_b,
                          const std::vector<RunSummary>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kInvalidArgument, "compare needs the same seeds on both sides");
  std::string out = fmt::format("A = {}\nB = {}\n", name_a, name_b);
  out += fmt::format("{:>6} {:>10} {:>10} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8}\n", "seed", "conv_s.A", "conv_s.B",
                     "ardp.A", "ardp.B", "adjust.A", "adjust.B", "kbps.A", "kbps.B");
  const auto row = [&](std::string label, double ca, double cb, double da, double db, double ja, double jb,
                       double ka, double kb) {
    out += fmt::format("{:>6} {:>10} {:>10} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8}\n", label, cell(ca, 1), cell(cb, 1),
                       cell(da, 3), cell(db, 3), cell(ja, 2), cell(jb, 2), cell(ka, 3), cell(kb, 3));
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    row(std::to_string(a[i].seed), conv_value(a[i]), conv_value(b[i]), a[i].ardp, b[i].ardp, a[i].adjust_rate,
        b[i].adjust_rate, a[i].control_kbps, b[i].control_kbps);
  }
  row("mean", mean_of(a, conv_value), mean_of(b, conv_value), mean_of(a, [](const RunSummary& s) { return s.ardp; }),
      mean_of(b, [](const RunSummary& s) { return s.ardp; }),
      mean_of(a, [](const RunSummary& s) { return s.adjust_rate; }),
      mean_of(b, [](const RunSummary& s) { return s.adjust_rate; }),
      mean_of(a, [](const RunSummary& s) { return s.control_kbps; }),
      mean_of(b, [](const RunSummary& s) { return s.control_kbps; }));
  std::size_t a_first = 0, b_first = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ca = conv_value(a[i]), cb = conv_value(b[i]);
    if (!std::isnan(ca) && (std::isnan(cb) || ca < cb)) ++a_first;
    if (!std::isnan(cb) && (std::isnan(ca) || cb < ca)) ++b_first;
  }
  out += fmt::format("converged first: A on {} seed(s), B on {} seed(s)\n", a_first, b_first);
  return out;
}

}  // namespace lcc
