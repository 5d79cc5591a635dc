#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lcc/config.hpp"
#include "lcc/metrics.hpp"
#include "lcc/simulator.hpp"

namespace lcc {

/// Per-run figures used by sweeps, comparisons and the acceptance runner.
struct RunSummary {
  std::uint64_t seed = 0;
  Convergence convergence;
  double ardp = 0.0;
  double ardp_trimmed = 0.0;
  double connected_fraction = 0.0;
  double stress_mean = 0.0;
  double stress_max = 0.0;
  double adjust_rate = 0.0;   // last snapshot's window
  double control_kbps = 0.0;  // mean over snapshots after the last join
  std::size_t clusters = 0;
  std::size_t locates = 0;
  double locate_accuracy = 0.0;
  double mean_requested = 0.0;
  double within_15_requested = 0.0;
  double mean_join_probe_bytes = 0.0;
  std::size_t recovery_affected = 0;
  std::size_t recovery_censored = 0;
  double recovery_mean_s = 0.0;
  std::size_t invariant_violations = 0;
  std::size_t leaderless_members = 0;
};

RunSummary summarize(const ScenarioConfig& cfg, const RunResult& res);

std::string_view summary_csv_header();
std::string summary_csv_row(const RunSummary& s);
/// Row of column means labelled "mean".
std::string summary_csv_mean_row(const std::vector<RunSummary>& rows);

struct SeedRange {
  std::uint64_t first = 1;
  std::uint64_t last = 1;
};
/// "a..b" or a single seed.
SeedRange parse_seed_range(std::string_view text);

/// Runs the scenario once per seed, up to `jobs` runs at a time. Results come
/// back in seed order.
std::vector<RunSummary> run_seeds(const ScenarioConfig& cfg, SeedRange seeds, unsigned jobs);

/// Paired-seed table: convergence, ARDP, adjustment and overhead per side.
std::string compare_table(std::string_view name_a, const std::vector<RunSummary>& a, std::string_view name_b,
                          const std::vector<RunSummary>& b);

}  // namespace lcc
