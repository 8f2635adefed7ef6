#include "hwplan/planners.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "hwplan/errors.hpp"

namespace hwplan {

BiLevelConfig PlannerConfig::bilevel_config() const {
  BiLevelConfig c;
  c.batch_size = batch_size;
  c.constraint_elite = constraint_elite;
  c.elite = elite;
  c.iterations = iterations;
  c.learning_rate = learning_rate;
  c.gamma = gamma;
  c.residual_weight = residual_weight;
  c.cov_floor = cov_floor;
  c.seed = seed;
  c.projection = projection;
  return c;
}

void PlannerConfig::validate() const {
  bilevel_config().validate();
  if (segments < 1) throw InvalidArgument("segments must be at least 1");
  if (max_obstacles < 0) throw InvalidArgument("max_obstacles must be non-negative");
  if (!(lane_weight >= 0.0)) throw InvalidArgument("lane_weight must be non-negative");
  if (!(lateral_std > 0.0) || !(velocity_std > 0.0)) throw InvalidArgument("sampling spreads must be positive");
  if (!(v_max > v_min)) throw InvalidArgument("v_max must exceed v_min");
  if (!(wheelbase > 0.0)) throw InvalidArgument("wheelbase must be positive");
  if (grid_speed_fractions.empty()) throw InvalidArgument("grid_speed_fractions is empty");
  if (grid_cap < 1) throw InvalidArgument("grid_cap must be at least 1");
}

PlanningProblem build_problem(const PlanningInput& in, const PlannerConfig& config,
                              const PolynomialBasis& basis) {
  if (in.observation.size() != kObservationSize) throw InvalidArgument("observation has wrong size");
  const Eigen::VectorXd& o = in.observation;
  const RoadSpec& road = in.road;
  PlanningProblem pp;
  const double psi = o[0];
  const double vx = o[1], vy = o[2];
  pp.speed = std::hypot(vx, vy);
  pp.ego_y = road.right_edge() + o[kObservationSize - 1];
  pp.ego_lane = road.nearest_lane(pp.ego_y);

  const double kappa = std::tan(in.last_controls.steer) / config.wheelbase;
  const double a_lon = in.last_controls.accel;
  const double a_lat = pp.speed * pp.speed * kappa;
  InitialState& b0 = pp.problem.b0;
  b0.x = 0.0;
  b0.y = pp.ego_y;
  b0.vx = vx;
  b0.vy = vy;
  b0.ax = a_lon * std::cos(psi) - a_lat * std::sin(psi);
  b0.ay = a_lon * std::sin(psi) + a_lat * std::cos(psi);
  pp.problem.v_max = config.v_max;
  pp.problem.lane_centering.weight = config.lane_weight;
  for (int l = 0; l < road.lane_count; ++l) pp.problem.lane_centering.centers.push_back(road.lane_center(l));

  ConstraintSpec& spec = pp.problem.constraints;
  spec.ellipse_a = config.ellipse_a;
  spec.ellipse_b = config.ellipse_b;
  spec.v_min = config.v_min;
  spec.v_max = config.v_max;
  spec.a_max = config.a_max;
  spec.kappa_max = config.kappa_max;
  spec.c_max = config.c_max;
  spec.lane_lb = road.lane_center(0) - config.lane_margin;
  spec.lane_ub = road.lane_center(road.lane_count - 1) + config.lane_margin;
  spec.road.kappa = road.curvature.kappa;
  for (double s : road.curvature.stations) spec.road.stations.push_back(s - in.ego_station);

  const Eigen::VectorXd& t = basis.times;
  for (int slot = 0; slot < kObservedNeighbors && pp.num_real_obstacles < config.max_obstacles; ++slot) {
    const Eigen::Index base = 3 + slot * kNeighborFields;
    if (o[base] >= kSentinelRange) break;
    const double ovx = vx + o[base + 2], ovy = vy + o[base + 3];
    ObstacleTrack track;
    track.x = o[base] + ovx * t.array();
    track.y = (pp.ego_y + o[base + 1] + ovy * t.array()).cwiseMax(road.right_edge()).cwiseMin(road.left_edge());
    spec.obstacles.push_back(std::move(track));
    ++pp.num_real_obstacles;
  }
  // Fixed obstacle count keeps one projector factorization per planner.
  while (static_cast<int>(spec.obstacles.size()) < config.max_obstacles) {
    ObstacleTrack far;
    far.x = Eigen::VectorXd::Constant(t.size(), kSentinelRange);
    far.y = Eigen::VectorXd::Constant(t.size(), pp.ego_y);
    spec.obstacles.push_back(std::move(far));
  }
  return pp;
}

SamplingDistribution initial_distribution(const BehaviorLayout& layout, double lane_y, double speed,
                                          const PlannerConfig& config) {
  SamplingDistribution d;
  d.mean = Eigen::VectorXd::Zero(layout.dim());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(layout.dim());
  for (int s = 0; s < layout.segments; ++s) {
    d.mean[layout.lateral_offset(s)] = lane_y;
    d.mean[layout.velocity_offset(s)] = speed;
    var[layout.lateral_offset(s)] = config.lateral_std * config.lateral_std;
    var[layout.velocity_offset(s)] = config.velocity_std * config.velocity_std;
  }
  if (layout.use_goal) {
    d.mean[layout.goal_offset()] = speed * config.horizon;
    d.mean[layout.goal_offset() + 1] = lane_y;
    var[layout.goal_offset()] = std::pow(config.velocity_std * config.horizon, 2);
    var[layout.goal_offset() + 1] = config.lateral_std * config.lateral_std;
  }
  d.cov = var.asDiagonal();
  return d;
}

std::vector<Controls> controls_from_plan(const PolynomialBasis& control_basis, const TrajectoryCoeffs& xi,
                                         const PlannerConfig& config, bool* braking_fallback) {
  std::vector<Controls> out(static_cast<std::size_t>(control_basis.num_samples()));
  const double steer_max = std::atan(config.kappa_max * config.wheelbase);
  try {
    const FlatControls fc = flat_to_controls(control_basis, xi, config.wheelbase);
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k].accel = std::clamp(fc.acceleration[static_cast<Eigen::Index>(k)], -config.a_max, config.a_max);
      out[k].steer = std::clamp(fc.steering[static_cast<Eigen::Index>(k)], -steer_max, steer_max);
    }
    if (braking_fallback) *braking_fallback = false;
  } catch (const SpeedSingularity&) {
    // The plan comes to a stop inside the control window: brake straight.
    for (auto& c : out) c = Controls{-config.a_max, 0.0};
    if (braking_fallback) *braking_fallback = true;
  }
  return out;
}

std::size_t GridSpec::size() const {
  if (values.empty()) return 0;
  std::size_t n = 1;
  for (const auto& v : values) n *= v.size();
  return n;
}

Eigen::MatrixXd GridSpec::enumerate() const {
  const std::size_t n = size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(n));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t rest = col;
    for (std::size_t d = values.size(); d-- > 0;) {
      out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(col)) = values[d][rest % values[d].size()];
      rest /= values[d].size();
    }
  }
  return out;
}

GridSpec default_grid(const BehaviorLayout& layout, const RoadSpec& road, int ego_lane,
                      const PlannerConfig& config) {
  GridSpec g;
  g.values.resize(static_cast<std::size_t>(layout.dim()));
  std::vector<double> lanes;
  for (int l = std::max(0, ego_lane - 1); l <= std::min(road.lane_count - 1, ego_lane + 1); ++l) {
    lanes.push_back(road.lane_center(l));
  }
  for (int s = 0; s < layout.segments; ++s) {
    auto& lat = g.values[static_cast<std::size_t>(layout.lateral_offset(s))];
    if (2 * s < layout.segments) {
      lat = {road.lane_center(ego_lane)};
    } else {
      lat = lanes;
    }
    auto& vel = g.values[static_cast<std::size_t>(layout.velocity_offset(s))];
    for (double f : config.grid_speed_fractions) vel.push_back(f * config.v_max);
  }
  return g;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Shared machinery: one basis, one solver (QP factorization and projector
// cache) per planner instance.
class SamplingPlanner : public Planner {
 public:
  SamplingPlanner(const PlannerConfig& config, BehaviorLayout layout, BiLevelConfig solver_config,
                  std::uint64_t salt)
      : config_(config),
        layout_(layout),
        salt_(salt),
        basis_(build_basis(config.order, config.num_samples, config.horizon, config.basis_family)),
        solver_(basis_, config.gains, layout, solver_config) {}

  void reset(std::uint64_t seed) override {
    solver_.reseed(mix_seed(config_.seed ^ seed, salt_));
    on_reset();
  }

  Plan plan(const PlanningInput& input) override {
    const auto t0 = Clock::now();
    const PlanningProblem pp = build_problem(input, config_, basis_);
    Plan out = plan_problem(pp, input);
    Eigen::VectorXd times(input.control_steps);
    for (int k = 0; k < input.control_steps; ++k) times[k] = k * input.dt;
    if (control_basis_.num_samples() != input.control_steps || control_basis_.times != times) {
      control_basis_ = build_basis_at(config_.order, config_.horizon, times, config_.basis_family);
    }
    out.controls = controls_from_plan(control_basis_, out.xi, config_, &out.diag.braking_fallback);
    out.diag.num_obstacles = pp.num_real_obstacles;
    out.diag.solve_time = seconds_since(t0);
    return out;
  }

 protected:
  virtual void on_reset() {}
  virtual Plan plan_problem(const PlanningProblem& pp, const PlanningInput& input) = 0;

  // Evaluates fixed samples and returns the lowest augmented cost among the
  // lowest-residual fraction, as one iteration of the bi-level loop would.
  Plan best_of(const PlanningProblem& pp, const Eigen::MatrixXd& params) {
    std::vector<EliteRecord> records = solver_.evaluate(pp.problem, params);
    const int total = static_cast<int>(records.size());
    const int n = std::clamp(static_cast<int>(std::lround(static_cast<double>(total) *
                                                          config_.constraint_elite / config_.batch_size)),
                             1, total);
    const EliteSelection sel = select_elites(records, n, 1);
    const EliteRecord& best = records[static_cast<std::size_t>(sel.elite.front())];
    Plan p;
    p.xi = best.xi;
    p.diag.upper_cost = best.upper_cost;
    p.diag.residual = best.residual;
    p.diag.samples = total;
    p.diag.iterations = 1;
    p.diag.best_p = best.p;
    return p;
  }

  Plan from_result(const BiLevelResult& r) const {
    Plan p;
    p.xi = r.xi;
    p.diag.upper_cost = r.upper_cost;
    p.diag.residual = r.residual;
    p.diag.samples = solver_.config().batch_size * static_cast<int>(r.iterations.size());
    p.diag.iterations = static_cast<int>(r.iterations.size());
    p.diag.degraded = r.degraded;
    p.diag.best_p = r.best_p_vector;
    return p;
  }

  PlannerConfig config_;
  BehaviorLayout layout_;
  std::uint64_t salt_;
  PolynomialBasis basis_;
  PolynomialBasis control_basis_;
  BiLevelSolver solver_;
};

class MpcBiLevel : public SamplingPlanner {
 public:
  explicit MpcBiLevel(const PlannerConfig& c)
      : SamplingPlanner(c, BehaviorLayout{c.segments, false}, c.bilevel_config(), 1) {
    if (!c.warm_start_file.empty()) samples_ = std::make_unique<FileSampleSource>(c.warm_start_file);
  }
  std::string name() const override { return "mpc-bilevel"; }

 protected:
  void on_reset() override { previous_.reset(); }

  Plan plan_problem(const PlanningProblem& pp, const PlanningInput& in) override {
    SamplingDistribution dist =
        initial_distribution(layout_, in.road.lane_center(pp.ego_lane), pp.speed, config_);
    if (config_.warm_start_mean && previous_) {
      dist.mean = *previous_;
      const auto& spec = pp.problem.constraints;
      for (int s = 0; s < layout_.segments; ++s) {
        double& y = dist.mean[layout_.lateral_offset(s)];
        y = in.road.lane_center(in.road.nearest_lane(std::clamp(y, spec.lane_lb, spec.lane_ub)));
      }
    }
    const BiLevelResult r = solver_.solve(pp.problem, dist, samples_.get());
    previous_ = r.best_p_vector;
    return from_result(r);
  }

 private:
  std::unique_ptr<FileSampleSource> samples_;
  std::optional<Eigen::VectorXd> previous_;
};

class MpcRandom : public SamplingPlanner {
 public:
  // Same stream as the bi-level planner: its first draw is this planner's whole batch.
  explicit MpcRandom(const PlannerConfig& c) : SamplingPlanner(c, BehaviorLayout{c.segments, false}, one_iteration(c), 1) {}
  std::string name() const override { return "mpc-random"; }

  static BiLevelConfig one_iteration(const PlannerConfig& c) {
    BiLevelConfig b = c.bilevel_config();
    b.iterations = 1;
    return b;
  }

 protected:
  Plan plan_problem(const PlanningProblem& pp, const PlanningInput& in) override {
    const SamplingDistribution dist =
        initial_distribution(layout_, in.road.lane_center(pp.ego_lane), pp.speed, config_);
    return from_result(solver_.solve(pp.problem, dist));
  }
};

class MpcVanilla : public SamplingPlanner {
 public:
  explicit MpcVanilla(const PlannerConfig& c)
      : SamplingPlanner(c, BehaviorLayout{c.segments, false}, single(c), 3) {}
  std::string name() const override { return "mpc-vanilla"; }

  static BiLevelConfig single(const PlannerConfig& c) {
    BiLevelConfig b = c.bilevel_config();
    b.batch_size = b.constraint_elite = b.elite = b.iterations = 1;
    return b;
  }

 protected:
  Plan plan_problem(const PlanningProblem& pp, const PlanningInput& in) override {
    Eigen::VectorXd p(layout_.dim());
    for (int s = 0; s < layout_.segments; ++s) {
      p[layout_.lateral_offset(s)] = in.road.lane_center(pp.ego_lane);
      p[layout_.velocity_offset(s)] = config_.vanilla_speed;
    }
    return best_of(pp, p);
  }
};

class MpcGrid : public SamplingPlanner {
 public:
  explicit MpcGrid(const PlannerConfig& c) : SamplingPlanner(c, BehaviorLayout{c.segments, false}, c.bilevel_config(), 4) {}
  std::string name() const override { return "mpc-grid"; }

 protected:
  Plan plan_problem(const PlanningProblem& pp, const PlanningInput& in) override {
    const GridSpec grid = default_grid(layout_, in.road, pp.ego_lane, config_);
    if (grid.size() > static_cast<std::size_t>(config_.grid_cap)) {
      throw InvalidArgument("grid has " + std::to_string(grid.size()) + " points, above grid_cap");
    }
    return best_of(pp, grid.enumerate());
  }
};

class BatchMpcGoal : public SamplingPlanner {
 public:
  explicit BatchMpcGoal(const PlannerConfig& c) : SamplingPlanner(c, BehaviorLayout{c.segments, true}, c.bilevel_config(), 5) {}
  std::string name() const override { return "batch-mpc-goal"; }

 protected:
  Plan plan_problem(const PlanningProblem& pp, const PlanningInput& in) override {
    const SamplingDistribution dist =
        initial_distribution(layout_, in.road.lane_center(pp.ego_lane), pp.speed, config_);
    // Only the goal is sampled; the tracking set-points follow from it.
    Eigen::MatrixXd params = solver_.sample(dist, config_.batch_size);
    const auto& spec = pp.problem.constraints;
    for (Eigen::Index j = 0; j < params.cols(); ++j) {
      double& xf = params(layout_.goal_offset(), j);
      double& yf = params(layout_.goal_offset() + 1, j);
      xf = std::max(xf, 0.0);
      yf = std::clamp(yf, spec.lane_lb, spec.lane_ub);
      for (int s = 0; s < layout_.segments; ++s) {
        params(layout_.lateral_offset(s), j) = yf;
        params(layout_.velocity_offset(s), j) = xf / config_.horizon;
      }
    }
    return best_of(pp, params);
  }
};

class FullThrottle : public Planner {
 public:
  explicit FullThrottle(const PlannerConfig& c) : accel_(c.a_max) {}
  std::string name() const override { return "full-throttle"; }
  void reset(std::uint64_t) override {}
  Plan plan(const PlanningInput& in) override {
    Plan p;
    p.controls.assign(static_cast<std::size_t>(in.control_steps), Controls{accel_, 0.0});
    return p;
  }

 private:
  double accel_;
};

}  // namespace

std::vector<std::string> planner_kinds() {
  return {"mpc-bilevel", "mpc-vanilla", "mpc-grid", "mpc-random", "batch-mpc-goal", "full-throttle"};
}

std::unique_ptr<Planner> make_planner(const std::string& kind, const PlannerConfig& config) {
  config.validate();
  if (kind == "mpc-bilevel") return std::make_unique<MpcBiLevel>(config);
  if (kind == "mpc-vanilla") return std::make_unique<MpcVanilla>(config);
  if (kind == "mpc-grid") return std::make_unique<MpcGrid>(config);
  if (kind == "mpc-random") return std::make_unique<MpcRandom>(config);
  if (kind == "batch-mpc-goal") return std::make_unique<BatchMpcGoal>(config);
  if (kind == "full-throttle") return std::make_unique<FullThrottle>(config);
  throw InvalidArgument("unknown planner kind '" + kind + "'");
}

}  // namespace hwplan
