#include <cmath>
#include <sstream>

#include "doctest.h"
#include "hwplan/episode.hpp"
#include "hwplan/errors.hpp"
#include "hwplan/planners.hpp"

using namespace hwplan;

namespace {

PlanningInput input_for(const World& w, int steps = 5) {
  PlanningInput in;
  in.observation = observe(w);
  in.road = w.road;
  in.ego_station = w.ego.x;
  in.control_steps = steps;
  return in;
}

Neighbor neighbor_at(double x, int lane, double v, const RoadSpec& road) {
  Neighbor n;
  n.state.x = x;
  n.state.y = road.lane_center(lane);
  n.state.v = v;
  n.state.lane = lane;
  n.desired_speed = std::max(v, 1.0);
  n.target_lane = lane;
  return n;
}

World ego_world(int lanes, double speed) {
  World w;
  w.road.lane_count = lanes;
  w.ego.v = speed;
  return w;
}

PlannerConfig light_config() {
  PlannerConfig c;
  c.batch_size = 100;
  c.constraint_elite = 15;
  c.elite = 5;
  c.iterations = 3;
  return c;
}

SampledTrajectory plan_path(const Plan& p, const PlannerConfig& c) {
  return eval_trajectory(build_basis(c.order, c.num_samples, c.horizon, c.basis_family), p.xi);
}

}  // namespace

TEST_CASE("every planner kind is constructible and validated") {
  const PlannerConfig c = light_config();
  for (const std::string& kind : planner_kinds()) {
    auto p = make_planner(kind, c);
    CHECK(p->name() == kind);
  }
  CHECK_THROWS_AS(make_planner("nope", c), InvalidArgument);
  PlannerConfig bad = c;
  bad.elite = 20;
  CHECK_THROWS_AS(make_planner("mpc-bilevel", bad), InvalidArgument);
  bad = c;
  bad.v_max = -1.0;
  CHECK_THROWS_AS(make_planner("mpc-random", bad), InvalidArgument);
}

TEST_CASE("observation decodes into the ego-relative problem") {
  World w = ego_world(3, 22.0);
  w.ego.y = 4.0;
  w.neighbors.push_back(neighbor_at(40.0, 1, 18.0, w.road));
  const PlannerConfig c = light_config();
  const PolynomialBasis b = build_basis(c.order, c.num_samples, c.horizon);
  const PlanningProblem pp = build_problem(input_for(w), c, b);
  CHECK(pp.ego_lane == 1);
  CHECK(pp.ego_y == doctest::Approx(4.0));
  CHECK(pp.speed == doctest::Approx(22.0));
  CHECK(pp.num_real_obstacles == 1);
  REQUIRE(static_cast<int>(pp.problem.constraints.obstacles.size()) == c.max_obstacles);
  const ObstacleTrack& o = pp.problem.constraints.obstacles[0];
  CHECK(o.x[0] == doctest::Approx(40.0));
  CHECK(o.x[49] == doctest::Approx(40.0 + 18.0 * b.times[49]));
  CHECK(o.y[10] == doctest::Approx(4.0));
  CHECK(pp.problem.constraints.lane_lb == doctest::Approx(-1.0));
  CHECK(pp.problem.constraints.lane_ub == doctest::Approx(9.0));
  for (std::size_t k = 1; k < pp.problem.constraints.obstacles.size(); ++k) {
    CHECK(pp.problem.constraints.obstacles[k].x[0] >= kSentinelRange);
  }
}

TEST_CASE("grid enumeration order and size") {
  GridSpec g;
  g.values = {{1.0, 2.0}, {10.0, 20.0, 30.0}};
  const Eigen::MatrixXd e = g.enumerate();
  CHECK(g.size() == 6);
  CHECK(e(0, 0) == 1.0);
  CHECK(e(1, 0) == 10.0);
  CHECK(e(1, 1) == 20.0);
  CHECK(e(0, 3) == 2.0);
  CHECK(e(1, 5) == 30.0);

  const PlannerConfig c = light_config();
  RoadSpec road;
  road.lane_count = 3;
  const GridSpec d = default_grid(BehaviorLayout{4, false}, road, 1, c);
  CHECK(d.size() == 3u * 3u * 81u);
  PlannerConfig tiny = c;
  tiny.grid_cap = 10;
  auto grid = make_planner("mpc-grid", tiny);
  grid->reset(0);
  CHECK_THROWS_AS(grid->plan(input_for(ego_world(3, 20.0))), InvalidArgument);
}

TEST_CASE("bi-level on an empty road keeps its lane near the speed limit") {
  ScenarioConfig s;
  s.vehicle_count = 0;
  s.ego_speed = 25.0;
  s.episode_length = 60;
  auto p = make_planner("mpc-bilevel", light_config());
  const EpisodeLog log = run_episode(s, *p);
  REQUIRE_FALSE(log.failed);
  CHECK_FALSE(log.collision);
  CHECK_FALSE(log.lane_departure);
  // Sampled set-points leave a small lateral ripple around the lane center.
  double max_dev = 0.0;
  for (const auto& st : log.steps) max_dev = std::max(max_dev, std::abs(st.ego.y));
  CHECK(max_dev < 0.5 * s.road.lane_width);
  CHECK(std::abs(log.steps.back().ego.y) <= 0.5);
  CHECK(log.steps.back().ego.v >= 0.9 * 30.0);
  CHECK(log.steps.back().ego.v <= 30.0 + 0.5);
}

TEST_CASE("bi-level passes a slow leader through the free lane") {
  World w = ego_world(2, 25.0);
  w.neighbors.push_back(neighbor_at(35.0, 0, 10.0, w.road));
  const PlannerConfig c = light_config();
  int toward = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = make_planner("mpc-bilevel", c);
    p->reset(seed);
    const Plan plan = p->plan(input_for(w));
    const SampledTrajectory s = plan_path(plan, c);
    if (s.y.head(15).maxCoeff() > 2.0) ++toward;
  }
  MESSAGE("seeds using the free lane: " << toward << "/20");
  CHECK(toward >= 16);
}

TEST_CASE("bi-level planning is deterministic per seed") {
  ScenarioConfig s;
  s.vehicle_count = 10;
  s.density = 2.0;
  s.seed = 3;
  s.episode_length = 30;
  auto a = make_planner("mpc-bilevel", light_config());
  auto b = make_planner("mpc-bilevel", light_config());
  std::ostringstream la, lb;
  write_episode_log(run_episode(s, *a), la);
  write_episode_log(run_episode(s, *b), lb);
  CHECK(la.str() == lb.str());
  std::ostringstream again;
  write_episode_log(run_episode(s, *a), again);
  CHECK(again.str() == la.str());
}

TEST_CASE("mean warm start changes only the replans after the first") {
  World w = ego_world(2, 22.0);
  w.neighbors.push_back(neighbor_at(40.0, 0, 15.0, w.road));
  PlannerConfig warm = light_config();
  warm.warm_start_mean = true;
  auto a = make_planner("mpc-bilevel", light_config());
  auto b = make_planner("mpc-bilevel", warm);
  a->reset(4);
  b->reset(4);
  const Plan a1 = a->plan(input_for(w)), b1 = b->plan(input_for(w));
  CHECK(a1.diag.best_p == b1.diag.best_p);
  const Plan a2 = a->plan(input_for(w)), b2 = b->plan(input_for(w));
  CHECK(a2.diag.best_p != b2.diag.best_p);
}

TEST_CASE("vanilla keeps its lane on an empty road") {
  const PlannerConfig c = light_config();
  auto p = make_planner("mpc-vanilla", c);
  p->reset(0);
  World w = ego_world(3, 25.0);
  w.ego.y = 4.0;
  const Plan plan = p->plan(input_for(w));
  const SampledTrajectory s = plan_path(plan, c);
  CHECK((s.y.array() - 4.0).abs().maxCoeff() <= 0.05);
  CHECK(s.xdot[49] >= 28.0);
  CHECK(plan.diag.samples == 1);
}

TEST_CASE("vanilla reports an infeasible plan through a stopped vehicle") {
  PlannerConfig c = light_config();
  World w = ego_world(1, 20.0);
  w.neighbors.push_back(neighbor_at(80.0, 0, 0.0, w.road));
  auto p = make_planner("mpc-vanilla", c);
  p->reset(0);
  const Plan plan = p->plan(input_for(w));
  const SampledTrajectory s = plan_path(plan, c);
  CHECK(s.x.maxCoeff() > 80.0);
  CHECK(plan.diag.residual > 1.0);
  CHECK(plan.diag.num_obstacles == 1);
}

TEST_CASE("behind a slow leader on one lane, bi-level collides less than vanilla") {
  ScenarioConfig s;
  s.road.lane_count = 1;
  s.base_spacing = 50.0;
  s.neighbor_speed = 8.0;
  s.speed_spread = 0.0;
  s.vehicle_count = 3;
  s.episode_length = 80;
  int bilevel = 0, vanilla = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    auto b = make_planner("mpc-bilevel", light_config());
    auto v = make_planner("mpc-vanilla", light_config());
    bilevel += run_episode(s, *b).collision;
    vanilla += run_episode(s, *v).collision;
  }
  MESSAGE("collisions bi-level " << bilevel << "/5, vanilla " << vanilla << "/5");
  CHECK(vanilla == 5);
  CHECK(bilevel < vanilla);
}

TEST_CASE("one-point grid equals vanilla at that point") {
  PlannerConfig c = light_config();
  c.grid_speed_fractions = {0.8};
  c.vanilla_speed = 0.8 * c.v_max;
  World w = ego_world(1, 20.0);
  w.neighbors.push_back(neighbor_at(60.0, 0, 15.0, w.road));
  auto grid = make_planner("mpc-grid", c);
  auto vanilla = make_planner("mpc-vanilla", c);
  grid->reset(0);
  vanilla->reset(0);
  const Plan a = grid->plan(input_for(w)), b = vanilla->plan(input_for(w));
  CHECK(a.diag.samples == 1);
  CHECK(a.xi.cx == b.xi.cx);
  CHECK(a.xi.cy == b.xi.cy);
  CHECK(a.diag.best_p == b.diag.best_p);
}

TEST_CASE("random sampling equals a single bi-level iteration on the same stream") {
  PlannerConfig c = light_config();
  World w = ego_world(2, 22.0);
  w.neighbors.push_back(neighbor_at(40.0, 0, 15.0, w.road));
  c.iterations = 1;
  auto random = make_planner("mpc-random", light_config());
  auto single = make_planner("mpc-bilevel", c);
  for (std::uint64_t seed : {0u, 5u, 9u}) {
    random->reset(seed);
    single->reset(seed);
    const Plan a = random->plan(input_for(w)), b = single->plan(input_for(w));
    CHECK(a.xi.cx == b.xi.cx);
    CHECK(a.xi.cy == b.xi.cy);
    CHECK(a.diag.iterations == 1);
  }
}

TEST_CASE("goal set-points fix the terminal lateral state") {
  PlannerConfig c = light_config();
  const PolynomialBasis basis = build_basis(c.order, c.num_samples, c.horizon);
  const BehaviorLayout layout{c.segments, true};
  BiLevelSolver solver(basis, c.gains, layout, c.bilevel_config());
  World w = ego_world(2, 20.0);
  const PlanningProblem pp = build_problem(input_for(w), c, basis);
  Eigen::VectorXd p(layout.dim());
  for (int s = 0; s < c.segments; ++s) {
    p[layout.lateral_offset(s)] = 4.0;
    p[layout.velocity_offset(s)] = 20.0;
  }
  p[layout.goal_offset()] = 200.0;
  p[layout.goal_offset() + 1] = 4.0;
  const auto records = solver.evaluate(pp.problem, p);
  const SampledTrajectory s = eval_trajectory(basis, records[0].xi);
  CHECK(std::abs(s.y[49] - 4.0) <= 0.1);
  CHECK(std::abs(s.ydot[49]) <= 0.05);
  CHECK(std::abs(s.x[49] - 200.0) <= 0.1);

  auto goal = make_planner("batch-mpc-goal", c);
  goal->reset(1);
  const Plan plan = goal->plan(input_for(w));
  const SampledTrajectory g = plan_path(plan, c);
  const double yf = plan.diag.best_p[layout.goal_offset() + 1];
  CHECK(std::abs(g.y[49] - yf) <= 0.1);
  CHECK(std::abs(g.ydot[49]) <= 0.05);
}

TEST_CASE("controls respect actuator limits for every planner") {
  PlannerConfig c = light_config();
  ScenarioConfig s;
  s.road.lane_count = 3;
  s.vehicle_count = 12;
  s.density = 2.5;
  s.seed = 11;
  const World w = make_world(s);
  const double steer_max = std::atan(c.kappa_max * c.wheelbase);
  for (const std::string& kind : planner_kinds()) {
    auto p = make_planner(kind, c);
    p->reset(2);
    PlanningInput in = input_for(w, 5);
    in.last_controls = Controls{1.0, 0.05};
    const Plan plan = p->plan(in);
    REQUIRE(plan.controls.size() >= 5u);
    for (const Controls& u : plan.controls) {
      CHECK(std::abs(u.accel) <= c.a_max);
      CHECK(std::abs(u.steer) <= steer_max);
    }
  }
}

TEST_CASE("grid and random carry nothing between replans") {
  const PlannerConfig c = light_config();
  World w1 = ego_world(2, 22.0), w2 = ego_world(2, 18.0);
  w1.neighbors.push_back(neighbor_at(30.0, 0, 10.0, w1.road));
  w2.neighbors.push_back(neighbor_at(50.0, 1, 25.0, w2.road));
  for (const char* kind : {"mpc-grid", "mpc-random"}) {
    auto a = make_planner(kind, c);
    auto b = make_planner(kind, c);
    a->reset(4);
    b->reset(4);
    a->plan(input_for(w1));
    b->plan(input_for(w2));
    const Plan pa = a->plan(input_for(w2)), pb = b->plan(input_for(w2));
    CHECK(pa.xi.cx == pb.xi.cx);
    CHECK(pa.xi.cy == pb.xi.cy);
  }
  auto g = make_planner("mpc-grid", c);
  g->reset(0);
  const Plan first = g->plan(input_for(w1));
  g->plan(input_for(w2));
  CHECK(g->plan(input_for(w1)).xi.cx == first.xi.cx);
}

TEST_CASE("full throttle is constant") {
  auto p = make_planner("full-throttle", light_config());
  p->reset(0);
  const Plan plan = p->plan(input_for(ego_world(2, 10.0), 7));
  REQUIRE(plan.controls.size() == 7u);
  for (const Controls& u : plan.controls) {
    CHECK(u.accel == 4.0);
    CHECK(u.steer == 0.0);
  }
}
