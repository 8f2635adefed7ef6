#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hwplan/bilevel.hpp"
#include "hwplan/episode.hpp"
#include "hwplan/planners.hpp"
#include "hwplan/sim.hpp"

namespace hwplan {

/// Planner settings as a JSON object; keys not present keep the values of `base`.
PlannerConfig planner_config_from_json(const std::string& text, const PlannerConfig& base = {});
std::string planner_config_to_json(const PlannerConfig& config);

struct PlannerEntry {
  std::string name;  // label in the metrics table
  std::string kind;  // see planner_kinds()
  PlannerConfig config;
};

struct BenchmarkSuite {
  std::vector<ScenarioConfig> scenarios;
  std::vector<PlannerEntry> planners;
  int episodes_per_cell = 50;
  std::uint64_t base_seed = 0;  // episode e of every cell uses seed base_seed + e
  int replan_stride = 5;
  int threads = 1;

  void validate() const;
  std::vector<std::uint64_t> seeds() const;
};

/// {"episodes_per_cell", "base_seed", "replan_stride", "threads",
///  "planner_defaults": {...}, "scenarios": [...], "planners": [{"name", "kind", "config"}]}
/// A scenario entry is either an inline object or a scenario file path,
/// relative to `base_dir`.
BenchmarkSuite suite_from_json(const std::string& text, const std::string& base_dir = "");
std::string suite_to_json(const BenchmarkSuite& suite);
BenchmarkSuite load_suite(const std::string& path);

struct EpisodeSummary {
  std::string planner;
  std::string scenario;
  std::uint64_t seed = 0;
  bool collision = false;
  bool lane_departure = false;
  bool failed = false;
  bool numerical_failure = false;
  std::string failure;
  int steps = 0;
  double mean_speed = 0.0;
  double solve_time = 0.0;  // summed over replans
  int replans = 0;
};

EpisodeSummary summarize(const EpisodeLog& log);

struct MetricsRow {
  std::string planner;
  std::string scenario;
  int episodes = 0;
  int collisions = 0;
  double collision_rate = 0.0;  // collisions / episodes
  int collision_free = 0;
  double mean_speed = 0.0;      // over collision-free, non-failed episodes
  double mean_solve_time = 0.0; // seconds per replan
  int failures = 0;
  int numerical_failures = 0;
  int lane_departures = 0;
};

/// Aggregates the episodes of one (planner, scenario) cell.
MetricsRow aggregate(const std::string& planner, const std::string& scenario,
                     const std::vector<EpisodeSummary>& episodes);

struct SuiteResult {
  std::vector<MetricsRow> rows;          // planner-major, in suite order
  std::vector<EpisodeSummary> episodes;  // same order, seeds ascending inside a cell
  std::vector<std::uint64_t> seeds;
  bool any_numerical_failure = false;
};

/// Called after each finished episode with (done, total); may run on worker threads.
using ProgressFn = std::function<void(int, int)>;

/// Runs every (planner, scenario, seed) episode on a pool of `suite.threads`
/// workers, each episode with its own planner instance, then reduces in suite
/// order so the result does not depend on completion order. When
/// `log_sink` is set it receives every finished episode log.
SuiteResult run_suite(const BenchmarkSuite& suite, const ProgressFn& progress = {},
                      const std::function<void(const EpisodeLog&)>& log_sink = {});

/// Deterministic metrics table. Wall-clock columns go to the timing table.
void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out);
void write_solve_times_csv(const std::vector<MetricsRow>& rows, std::ostream& out);
void write_episodes_csv(const std::vector<EpisodeSummary>& episodes, std::ostream& out);
inline constexpr const char* kMetricsHeader =
    "planner,scenario,episodes,collisions,collision_rate,collision_free,mean_speed,failures,"
    "numerical_failures,lane_departures";

/// FNV-1a 64-bit digest, hex encoded.
std::string content_hash(const std::string& text);

/// Run manifest: config hash, seed list, planner and scenario names, versions.
std::string run_manifest(const BenchmarkSuite& suite, const SuiteResult& result);

/// Static obstacle straddling the ego lane 50 m ahead on a straight 2-lane road;
/// the ego starts at 20 m/s.
struct TraceScene {
  BiLevelProblem problem;
  SamplingDistribution initial;
  BehaviorLayout layout;
};
TraceScene canonical_static_scene();

std::vector<IterationDiagnostics> emit_convergence_trace(const TraceScene& scene, const PolynomialBasis& basis,
                                                         const TrackingGains& gains, BiLevelConfig config);
void write_trace_csv(const std::vector<IterationDiagnostics>& trace, std::ostream& out);
/// Elite trajectory envelopes, one row per (iteration, sample time).
void write_envelopes_csv(const std::vector<IterationDiagnostics>& trace, const PolynomialBasis& basis,
                         std::ostream& out);

struct TimingRow {
  int batch_size = 0;
  int iterations = 0;
  int repeats = 0;
  double mean_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  double seconds_per_iteration = 0.0;  // mean / iterations
  long factorizations_per_solve = 0;   // KKT factorizations during one solver lifetime
};

/// Times full solves of the canonical scene for each (batch size, iteration count).
std::vector<TimingRow> emit_timing(const std::vector<int>& batch_sizes, const std::vector<int>& iterations,
                                   int repeats, const BiLevelConfig& base);
void write_timing_csv(const std::vector<TimingRow>& rows, std::ostream& out);

}  // namespace hwplan
