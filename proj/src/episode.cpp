#include "hwplan/episode.hpp"

#include <istream>
#include <ostream>

#include "hwplan/errors.hpp"
#include "json.hpp"

namespace hwplan {

using json = nlohmann::json;

double EpisodeLog::mean_speed() const {
  if (steps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : steps) sum += s.ego.v;
  return sum / static_cast<double>(steps.size());
}

double EpisodeLog::total_solve_time() const {
  double sum = 0.0;
  for (const auto& r : replans) sum += r.diag.solve_time;
  return sum;
}

EpisodeLog run_episode(const ScenarioConfig& scenario, Planner& planner, int replan_stride) {
  if (replan_stride < 1) throw InvalidArgument("replan_stride must be at least 1");
  World world = make_world(scenario);
  EpisodeLog log;
  log.scenario = scenario.name;
  log.planner = planner.name();
  log.seed = scenario.seed;
  log.replan_stride = replan_stride;
  log.termination = "length";
  planner.reset(scenario.seed);

  std::vector<Controls> plan_controls;
  Controls last;
  for (int k = 0; k < scenario.episode_length; ++k) {
    const int offset = k % replan_stride;
    const bool replan = offset == 0;
    if (replan) {
      PlanningInput in;
      in.observation = observe(world);
      in.last_controls = last;
      in.road = world.road;
      in.ego_station = world.ego.x;
      in.dt = scenario.dt;
      in.control_steps = replan_stride;
      try {
        Plan p = planner.plan(in);
        if (static_cast<int>(p.controls.size()) < replan_stride) {
          throw StructureError("planner returned fewer controls than the replan stride");
        }
        plan_controls = std::move(p.controls);
        log.replans.push_back({k, std::move(p.diag)});
      } catch (const NumericalFailure& e) {
        log.failed = log.numerical_failure = true;
        log.failure = e.what();
      } catch (const std::exception& e) {
        log.failed = true;
        log.failure = e.what();
      }
      if (log.failed) {
        log.termination = "planner_failure";
        break;
      }
    }
    last = plan_controls[static_cast<std::size_t>(offset)];
    const StepEvents ev = step_world(world, last, scenario.dt);

    StepRecord rec;
    rec.step = world.step;
    rec.time = world.time;
    rec.controls = last;
    rec.ego = world.ego;
    rec.replanned = replan;
    rec.neighbors.reserve(world.neighbors.size());
    for (const auto& n : world.neighbors) rec.neighbors.push_back(n.state);
    log.steps.push_back(std::move(rec));

    if (ev.lane_departure && !log.lane_departure) {
      log.lane_departure = true;
      log.departure_step = world.step;
    }
    if (ev.collision) {
      log.collision = true;
      log.collision_step = world.step;
      log.collided_with = ev.collided_with;
      log.termination = "collision";
      break;
    }
    if (world.ego.x >= world.road.length) {
      log.termination = "road_end";
      break;
    }
  }
  return log;
}

namespace {

json vehicle_json(const VehicleState& s) {
  return json::array({s.x, s.y, s.psi, s.v, s.lane});
}

VehicleState vehicle_from(const json& j) {
  VehicleState s;
  s.x = j.at(0).get<double>();
  s.y = j.at(1).get<double>();
  s.psi = j.at(2).get<double>();
  s.v = j.at(3).get<double>();
  s.lane = j.at(4).get<int>();
  return s;
}

}  // namespace

void write_episode_log(const EpisodeLog& log, std::ostream& out, bool include_timing) {
  json header = {{"type", "header"},
                 {"scenario", log.scenario},
                 {"planner", log.planner},
                 {"seed", log.seed},
                 {"replan_stride", log.replan_stride},
                 {"vehicle_fields", {"x", "y", "psi", "v", "lane"}}};
  out << header.dump() << '\n';
  std::size_t r = 0;
  for (const auto& s : log.steps) {
    json j = {{"type", "step"},
              {"step", s.step},
              {"time", s.time},
              {"accel", s.controls.accel},
              {"steer", s.controls.steer},
              {"ego", vehicle_json(s.ego)}};
    json nb = json::array();
    for (const auto& n : s.neighbors) nb.push_back(vehicle_json(n));
    j["neighbors"] = std::move(nb);
    // Replans happen at the step that starts from the previous record's state.
    if (s.replanned && r < log.replans.size() && log.replans[r].step == s.step - 1) {
      const PlanDiagnostics& d = log.replans[r].diag;
      json p = {{"upper_cost", d.upper_cost},
                {"residual", d.residual},
                {"samples", d.samples},
                {"iterations", d.iterations},
                {"obstacles", d.num_obstacles},
                {"degraded", d.degraded},
                {"braking_fallback", d.braking_fallback},
                {"best_p", std::vector<double>(d.best_p.data(), d.best_p.data() + d.best_p.size())}};
      if (include_timing) p["solve_time"] = d.solve_time;
      j["plan"] = std::move(p);
      ++r;
    }
    out << j.dump() << '\n';
  }
  json summary = {{"type", "summary"},
                  {"steps", log.steps.size()},
                  {"collision", log.collision},
                  {"collision_step", log.collision_step},
                  {"collided_with", log.collided_with},
                  {"lane_departure", log.lane_departure},
                  {"departure_step", log.departure_step},
                  {"failed", log.failed},
                  {"numerical_failure", log.numerical_failure},
                  {"failure", log.failure},
                  {"termination", log.termination},
                  {"mean_speed", log.mean_speed()}};
  out << summary.dump() << '\n';
}

EpisodeLog read_episode_log(std::istream& in) {
  EpisodeLog log;
  std::string line;
  int line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        log.scenario = j.at("scenario").get<std::string>();
        log.planner = j.at("planner").get<std::string>();
        log.seed = j.at("seed").get<std::uint64_t>();
        log.replan_stride = j.at("replan_stride").get<int>();
      } else if (type == "step") {
        StepRecord s;
        s.step = j.at("step").get<int>();
        s.time = j.at("time").get<double>();
        s.controls.accel = j.at("accel").get<double>();
        s.controls.steer = j.at("steer").get<double>();
        s.ego = vehicle_from(j.at("ego"));
        for (const auto& n : j.at("neighbors")) s.neighbors.push_back(vehicle_from(n));
        if (j.contains("plan")) {
          s.replanned = true;
          const json& p = j.at("plan");
          ReplanRecord rr;
          rr.step = s.step - 1;
          rr.diag.upper_cost = p.at("upper_cost").get<double>();
          rr.diag.residual = p.at("residual").get<double>();
          rr.diag.samples = p.at("samples").get<int>();
          rr.diag.iterations = p.at("iterations").get<int>();
          rr.diag.num_obstacles = p.at("obstacles").get<int>();
          rr.diag.degraded = p.at("degraded").get<bool>();
          rr.diag.braking_fallback = p.at("braking_fallback").get<bool>();
          const auto bp = p.at("best_p").get<std::vector<double>>();
          rr.diag.best_p = Eigen::Map<const Eigen::VectorXd>(bp.data(), static_cast<Eigen::Index>(bp.size()));
          if (p.contains("solve_time")) rr.diag.solve_time = p.at("solve_time").get<double>();
          log.replans.push_back(std::move(rr));
        }
        log.steps.push_back(std::move(s));
      } else if (type == "summary") {
        log.collision = j.at("collision").get<bool>();
        log.collision_step = j.at("collision_step").get<int>();
        log.collided_with = j.at("collided_with").get<int>();
        log.lane_departure = j.at("lane_departure").get<bool>();
        log.departure_step = j.at("departure_step").get<int>();
        log.failed = j.at("failed").get<bool>();
        log.numerical_failure = j.at("numerical_failure").get<bool>();
        log.failure = j.at("failure").get<std::string>();
        log.termination = j.at("termination").get<std::string>();
      } else {
        throw InvalidArgument("unknown record type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument("episode log line " + std::to_string(line_no) + ": " + e.what());
  }
  return log;
}

void write_trajectory_csv(const EpisodeLog& log, std::ostream& out) {
  out << "step,time,id,x,y,psi,v,lane\n";
  auto row = [&](const StepRecord& s, int id, const VehicleState& v) {
    json vals = {s.step, s.time, id, v.x, v.y, v.psi, v.v, v.lane};
    for (std::size_t i = 0; i < vals.size(); ++i) out << (i ? "," : "") << vals[i].dump();
    out << '\n';
  };
  for (const auto& s : log.steps) {
    row(s, 0, s.ego);
    for (std::size_t i = 0; i < s.neighbors.size(); ++i) row(s, static_cast<int>(i) + 1, s.neighbors[i]);
  }
}

}  // namespace hwplan
