#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hwplan/planners.hpp"
#include "hwplan/sim.hpp"

namespace hwplan {

struct StepRecord {
  int step = 0;  // index of the state after this step
  double time = 0.0;
  Controls controls;  // applied during the step
  VehicleState ego;
  std::vector<VehicleState> neighbors;
  bool replanned = false;
};

struct ReplanRecord {
  int step = 0;
  PlanDiagnostics diag;
};

struct EpisodeLog {
  std::string scenario;
  std::string planner;
  std::uint64_t seed = 0;
  int replan_stride = 5;
  std::vector<StepRecord> steps;
  std::vector<ReplanRecord> replans;

  bool collision = false;
  int collision_step = -1;
  int collided_with = -1;
  bool lane_departure = false;
  int departure_step = -1;
  bool failed = false;             // the planner threw
  bool numerical_failure = false;  // ... with NumericalFailure
  std::string failure;
  std::string termination;         // collision, road_end, length, planner_failure

  double mean_speed() const;
  double total_solve_time() const;
};

/// Runs one episode. The planner is reset with the scenario seed, replans every
/// `replan_stride` steps and the first `replan_stride` controls of each plan
/// are executed open loop.
EpisodeLog run_episode(const ScenarioConfig& scenario, Planner& planner, int replan_stride = 5);

/// One JSON record per line: a header, one record per step (with the replan
/// diagnostics on steps that replanned) and a summary. Wall-clock solve times
/// are only written when `include_timing` is set, so that the default output
/// is reproducible byte for byte.
void write_episode_log(const EpisodeLog& log, std::ostream& out, bool include_timing = false);
EpisodeLog read_episode_log(std::istream& in);

/// Plot data: one CSV row per vehicle per step (id 0 is the ego).
void write_trajectory_csv(const EpisodeLog& log, std::ostream& out);

}  // namespace hwplan
