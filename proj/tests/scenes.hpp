#pragma once

#include <random>

#include "hwplan/batch_qp.hpp"
#include "hwplan/planners.hpp"
#include "hwplan/projection.hpp"

namespace testing_support {

// Straight 2-lane road (lane centers 0 and 4), 1 to 4 constant-velocity
// neighbors, and a batch of QP outputs for Gaussian set-points around the ego.
struct ProjectionScene {
  hwplan::ConstraintSpec spec;
  hwplan::InitialState b0;
  hwplan::QPRightHandSideBatch rhs;
  hwplan::QPSolutionBatch qp;
};

inline ProjectionScene projection_scene(std::uint64_t seed, const hwplan::QPStructure& structure, int batch,
                                        int num_obstacles) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const hwplan::PolynomialBasis& basis = structure.basis();
  ProjectionScene s;
  const double ego_y = u(rng) < 0.5 ? 0.0 : 4.0;
  s.b0.y = ego_y;
  s.b0.vx = 15.0 + 10.0 * u(rng);
  s.spec.lane_lb = -1.0;
  s.spec.lane_ub = 5.0;
  s.spec.ellipse_a = 7.07;
  s.spec.ellipse_b = 2.83;
  for (int k = 0; k < num_obstacles; ++k) {
    hwplan::ObstacleTrack o;
    const double x0 = 30.0 + 90.0 * u(rng);
    const double v = 10.0 + 15.0 * u(rng);
    const double y = u(rng) < 0.5 ? 0.0 : 4.0;
    o.x = (x0 + v * basis.times.array()).matrix();
    o.y = Eigen::VectorXd::Constant(basis.num_samples(), y);
    s.spec.obstacles.push_back(o);
  }
  const hwplan::BehaviorLayout layout{4, false};
  Eigen::MatrixXd p(layout.dim(), batch);
  for (int j = 0; j < batch; ++j) {
    for (int q = 0; q < layout.segments; ++q) {
      p(layout.lateral_offset(q), j) = ego_y + 1.5 * g(rng);
      p(layout.velocity_offset(q), j) = s.b0.vx + 3.0 * g(rng);
    }
  }
  s.rhs = hwplan::assemble_rhs(structure, layout, p, s.b0);
  s.qp = hwplan::solve_batch(structure, s.rhs);
  return s;
}

// First replan of a simulated episode on a straight 2-lane road: the k
// nearest vehicles become obstacle tracks and the batch is drawn from the
// planner's initial distribution, so the scene is exactly what a planner sees.
struct TrafficScene {
  hwplan::PlanningProblem problem;
  hwplan::QPRightHandSideBatch rhs;
  hwplan::QPSolutionBatch qp;
};

inline TrafficScene traffic_projection_scene(std::uint64_t seed, const hwplan::QPStructure& structure, int batch,
                                             int num_obstacles) {
  hwplan::ScenarioConfig sc;
  sc.road.lane_count = 2;
  sc.density = 1.0 + 0.75 * static_cast<double>((seed / 4) % 3);
  sc.seed = seed;
  sc.ego_lane = static_cast<int>(seed % 2);
  const hwplan::World world = hwplan::make_world(sc);
  hwplan::PlannerConfig pc;
  pc.max_obstacles = num_obstacles;
  hwplan::PlanningInput in;
  in.observation = hwplan::observe(world);
  in.road = world.road;
  in.ego_station = world.ego.x;
  TrafficScene s;
  s.problem = hwplan::build_problem(in, pc, structure.basis());
  const hwplan::BehaviorLayout layout{4, false};
  const hwplan::SamplingDistribution d =
      hwplan::initial_distribution(layout, world.road.lane_center(s.problem.ego_lane), s.problem.speed, pc);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd p(layout.dim(), batch);
  for (int j = 0; j < batch; ++j) {
    for (int i = 0; i < layout.dim(); ++i) p(i, j) = d.mean[i] + std::sqrt(d.cov(i, i)) * g(rng);
  }
  s.rhs = hwplan::assemble_rhs(structure, layout, p, s.problem.problem.b0);
  s.qp = hwplan::solve_batch(structure, s.rhs);
  return s;
}

}  // namespace testing_support
