#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lcc/config.hpp"
#include "lcc/report.hpp"
#include "lcc/simulator.hpp"

using namespace lcc;

namespace {

ScenarioConfig load_with(const std::string& path, const std::vector<std::string>& sets) {
  auto cfg = ScenarioConfig::load(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kInvalidConfiguration, fmt::format("--set expects key=value, got '{}'", kv));
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidArgument, fmt::format("cannot write '{}'", path));
  return out;
}

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

int cmd_run(const std::string& path, const std::vector<std::string>& sets, std::string prefix, bool no_log) {
  const auto cfg = load_with(path, sets);
  if (prefix.empty()) prefix = std::filesystem::path(path).stem().string();
  Simulator sim(cfg);
  std::ofstream log_file;
  std::unique_ptr<StreamLogSink> sink;
  if (!no_log) {
    log_file = open_out(prefix + ".log");
    sink = std::make_unique<StreamLogSink>(log_file);
    sim.add_sink(*sink);
  }
  const auto res = sim.run();
  auto csv = open_out(prefix + ".csv");
  write_snapshot_csv(csv, res.snapshots);
  const auto s = summarize(cfg, res);
  fmt::print("{}\n{}\n", summary_csv_header(), summary_csv_row(s));
  for (const auto& w : res.warnings) fmt::print(stderr, "warning: {}\n", w);
  for (const auto& v : res.violation_samples) fmt::print(stderr, "invariant: {}\n", v);
  return 0;
}

int cmd_sweep(const std::string& path, const std::vector<std::string>& sets, const std::string& seeds,
              unsigned jobs, const std::string& out_path) {
  const auto cfg = load_with(path, sets);
  const auto rows = run_seeds(cfg, parse_seed_range(seeds), jobs);
  std::string text = std::string(summary_csv_header()) + "\n";
  for (const auto& r : rows) text += summary_csv_row(r) + "\n";
  text += summary_csv_mean_row(rows) + "\n";
  if (out_path.empty() || out_path == "-") {
    fmt::print("{}", text);
  } else {
    open_out(out_path) << text;
  }
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b, const std::vector<std::string>& sets,
                const std::string& seeds, unsigned jobs) {
  const auto ca = load_with(a, sets);
  const auto cb = load_with(b, sets);
  const auto range = parse_seed_range(seeds);
  const auto ra = run_seeds(ca, range, jobs);
  const auto rb = run_seeds(cb, range, jobs);
  fmt::print("{}", compare_table(std::filesystem::path(a).filename().string(), ra,
                                 std::filesystem::path(b).filename().string(), rb));
  return 0;
}

int cmd_validate(const std::string& path, const std::vector<std::string>& sets) {
  const auto cfg = load_with(path, sets);
  fmt::print("ok: {} (protocol={} n={} model={} duration_s={})\n", path, to_string(cfg.protocol), cfg.n,
             to_string(cfg.topology), cfg.duration_s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LCC overlay multicast simulator"};
  app.require_subcommand(1);
  std::vector<std::string> sets;
  std::string config, config_b, prefix, seeds = "1..5", out_path;
  unsigned jobs = default_jobs();
  bool no_log = false;

  auto* run = app.add_subcommand("run", "run one scenario; writes <prefix>.csv and <prefix>.log");
  run->add_option("config", config, "scenario config")->required();
  run->add_option("--out", prefix, "output prefix (default: config file stem)");
  run->add_flag("--no-log", no_log, "skip the event log");

  auto* sweep = app.add_subcommand("sweep", "run a seed range; one summary row per seed plus a mean row");
  sweep->add_option("config", config, "scenario config")->required();
  sweep->add_option("--seeds", seeds, "seed range a..b")->required();
  sweep->add_option("--jobs,-j", jobs, "parallel runs");
  sweep->add_option("--out", out_path, "summary CSV path (default stdout)");

  auto* compare = app.add_subcommand("compare", "paired-seed comparison of two scenarios");
  compare->add_option("config_a", config, "first scenario")->required();
  compare->add_option("config_b", config_b, "second scenario")->required();
  compare->add_option("--seeds", seeds, "seed range a..b (default 1..5)");
  compare->add_option("--jobs,-j", jobs, "parallel runs");

  auto* validate = app.add_subcommand("validate", "check a config and exit");
  validate->add_option("config", config, "scenario config")->required();

  for (auto* sub : {run, sweep, compare, validate}) {
    sub->add_option("--set", sets, "override key=value (repeatable)");
  }

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, sets, prefix, no_log);
    if (*sweep) return cmd_sweep(config, sets, seeds, jobs, out_path);
    if (*compare) return cmd_compare(config, config_b, sets, seeds, jobs);
    if (*validate) return cmd_validate(config, sets);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
