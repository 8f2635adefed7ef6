#include "hwplan/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "hwplan/errors.hpp"
#include "json.hpp"
#include "json_util.hpp"

namespace hwplan {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double wrap_angle(double a) { return std::remainder(a, 2.0 * M_PI); }

}  // namespace

int RoadSpec::nearest_lane(double y) const {
  const int lane = static_cast<int>(std::lround(y / lane_width));
  return std::clamp(lane, 0, lane_count - 1);
}

void RoadSpec::validate() const {
  if (lane_count < 1) throw InvalidArgument("lane_count must be at least 1");
  if (!(lane_width > 0.0)) throw InvalidArgument("lane_width must be positive");
  if (!(length > 0.0)) throw InvalidArgument("road length must be positive");
  if (curvature.stations.size() != curvature.kappa.size()) {
    throw InvalidArgument("curvature table columns differ in length");
  }
}

void ScenarioConfig::validate() const {
  road.validate();
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (!(density > 0.0)) throw InvalidArgument("density must be positive");
  if (!(base_spacing > 0.0)) throw InvalidArgument("base_spacing must be positive");
  if (vehicle_count < 0) throw InvalidArgument("vehicle_count must be non-negative");
  if (episode_length < 1) throw InvalidArgument("episode_length must be at least 1");
  if (ego_lane < 0 || ego_lane >= road.lane_count) throw InvalidArgument("ego_lane outside the road");
  if (!(ego_speed >= 0.0) || !(neighbor_speed > 0.0)) throw InvalidArgument("speeds must be positive");
  if (!(speed_spread >= 0.0 && speed_spread < 1.0)) throw InvalidArgument("speed_spread must lie in [0, 1)");
  if (!(ego_wheelbase > 0.0)) throw InvalidArgument("ego_wheelbase must be positive");
  if (!(road.lane_width > 2.0)) throw InvalidArgument("lane_width must exceed the vehicle width");
}

using detail::reject_unknown;
using detail::take;

ScenarioConfig scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("scenario config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("scenario config must be a JSON object");
  reject_unknown(j,
                 {"name", "road", "density", "base_spacing", "vehicle_count", "seed", "episode_length",
                  "dt", "ego_lane", "ego_speed", "ego_wheelbase", "neighbor_speed", "speed_spread",
                  "idm", "mobil"},
                 "scenario");
  ScenarioConfig c;
  try {
    take(j, "name", c.name);
    if (j.contains("road")) {
      const json& r = j.at("road");
      reject_unknown(r, {"lane_count", "lane_width", "length", "curvature"}, "road");
      take(r, "lane_count", c.road.lane_count);
      take(r, "lane_width", c.road.lane_width);
      take(r, "length", c.road.length);
      if (r.contains("curvature")) {
        const json& k = r.at("curvature");
        reject_unknown(k, {"stations", "kappa"}, "curvature");
        take(k, "stations", c.road.curvature.stations);
        take(k, "kappa", c.road.curvature.kappa);
      }
    }
    take(j, "density", c.density);
    take(j, "base_spacing", c.base_spacing);
    take(j, "vehicle_count", c.vehicle_count);
    take(j, "seed", c.seed);
    take(j, "episode_length", c.episode_length);
    take(j, "dt", c.dt);
    take(j, "ego_lane", c.ego_lane);
    take(j, "ego_speed", c.ego_speed);
    take(j, "ego_wheelbase", c.ego_wheelbase);
    take(j, "neighbor_speed", c.neighbor_speed);
    take(j, "speed_spread", c.speed_spread);
    if (j.contains("idm")) {
      const json& p = j.at("idm");
      reject_unknown(p, {"time_headway", "min_gap", "max_accel", "comfort_decel", "exponent", "hard_decel"},
                     "idm");
      take(p, "time_headway", c.idm.time_headway);
      take(p, "min_gap", c.idm.min_gap);
      take(p, "max_accel", c.idm.max_accel);
      take(p, "comfort_decel", c.idm.comfort_decel);
      take(p, "exponent", c.idm.exponent);
      take(p, "hard_decel", c.idm.hard_decel);
    }
    if (j.contains("mobil")) {
      const json& p = j.at("mobil");
      reject_unknown(p, {"politeness", "safe_decel", "threshold", "lateral_speed", "cooldown"}, "mobil");
      take(p, "politeness", c.mobil.politeness);
      take(p, "safe_decel", c.mobil.safe_decel);
      take(p, "threshold", c.mobil.threshold);
      take(p, "lateral_speed", c.mobil.lateral_speed);
      take(p, "cooldown", c.mobil.cooldown);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad scenario field type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string scenario_to_json(const ScenarioConfig& c) {
  json j;
  j["name"] = c.name;
  j["road"] = {{"lane_count", c.road.lane_count},
               {"lane_width", c.road.lane_width},
               {"length", c.road.length},
               {"curvature", {{"stations", c.road.curvature.stations}, {"kappa", c.road.curvature.kappa}}}};
  j["density"] = c.density;
  j["base_spacing"] = c.base_spacing;
  j["vehicle_count"] = c.vehicle_count;
  j["seed"] = c.seed;
  j["episode_length"] = c.episode_length;
  j["dt"] = c.dt;
  j["ego_lane"] = c.ego_lane;
  j["ego_speed"] = c.ego_speed;
  j["ego_wheelbase"] = c.ego_wheelbase;
  j["neighbor_speed"] = c.neighbor_speed;
  j["speed_spread"] = c.speed_spread;
  j["idm"] = {{"time_headway", c.idm.time_headway}, {"min_gap", c.idm.min_gap},
              {"max_accel", c.idm.max_accel},       {"comfort_decel", c.idm.comfort_decel},
              {"exponent", c.idm.exponent},         {"hard_decel", c.idm.hard_decel}};
  j["mobil"] = {{"politeness", c.mobil.politeness}, {"safe_decel", c.mobil.safe_decel},
                {"threshold", c.mobil.threshold},   {"lateral_speed", c.mobil.lateral_speed},
                {"cooldown", c.mobil.cooldown}};
  return j.dump(2);
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

World make_world(const ScenarioConfig& config) {
  config.validate();
  World w;
  w.road = config.road;
  w.idm = config.idm;
  w.mobil = config.mobil;
  w.ego_wheelbase = config.ego_wheelbase;
  w.ego.y = config.road.lane_center(config.ego_lane);
  w.ego.v = config.ego_speed;
  w.ego.lane = config.ego_lane;

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> jitter(0.75, 1.25);
  std::uniform_real_distribution<double> spread(-config.speed_spread, config.speed_spread);
  std::uniform_int_distribution<int> pick_lane(0, config.road.lane_count - 1);

  const double spacing = config.base_spacing / config.density;
  constexpr double kMinLaneGap = 12.0;   // center to center within a lane
  constexpr double kEgoClearance = 25.0; // first vehicle ahead in the ego lane
  std::vector<double> lane_last(static_cast<std::size_t>(config.road.lane_count), -kInf);
  lane_last[static_cast<std::size_t>(config.ego_lane)] = w.ego.x + kEgoClearance - kMinLaneGap;
  double cursor = w.ego.x;
  for (int k = 0; k < config.vehicle_count; ++k) {
    cursor += spacing * jitter(rng);
    const int lane = pick_lane(rng);
    const double desired = config.neighbor_speed * (1.0 + spread(rng));
    double& last = lane_last[static_cast<std::size_t>(lane)];
    Neighbor n;
    n.state.x = std::max(cursor, last + kMinLaneGap);
    n.state.y = config.road.lane_center(lane);
    n.state.v = desired;
    n.state.lane = lane;
    n.desired_speed = desired;
    n.target_lane = lane;
    last = n.state.x;
    w.neighbors.push_back(n);
  }
  return w;
}

double idm_accel(double gap, double v, double approach_rate, double desired_speed,
                 const IdmParams& p) {
  if (!(gap > 0.0)) return -p.hard_decel;
  const double free = 1.0 - std::pow(std::max(v, 0.0) / desired_speed, p.exponent);
  const double s_star =
      p.min_gap + v * p.time_headway + v * approach_rate / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
  const double interact = std::isinf(gap) ? 0.0 : (s_star / gap) * (s_star / gap);
  return std::clamp(p.max_accel * (free - interact), -p.hard_decel, p.max_accel);
}

const VehicleState& vehicle_state(const World& world, int id) {
  return id == 0 ? world.ego : world.neighbors[static_cast<std::size_t>(id - 1)].state;
}

int vehicle_lane(const World& world, int id) {
  return id == 0 ? world.road.nearest_lane(world.ego.y)
                 : world.neighbors[static_cast<std::size_t>(id - 1)].target_lane;
}

bool occupies_lane(const World& world, int id, int lane) {
  if (vehicle_lane(world, id) == lane) return true;
  const VehicleState& s = vehicle_state(world, id);
  return std::abs(s.y - world.road.lane_center(lane)) < 0.5 * (world.road.lane_width + s.width);
}

LaneQuery query_lane(const World& world, int lane, double x, double length, int exclude_id) {
  LaneQuery q;
  double best_ahead = kInf, best_behind = kInf;
  const int count = static_cast<int>(world.neighbors.size()) + 1;
  for (int id = 0; id < count; ++id) {
    if (id == exclude_id || !occupies_lane(world, id, lane)) continue;
    const VehicleState& s = vehicle_state(world, id);
    const double dx = s.x - x;
    const double half = 0.5 * (length + s.length);
    if (dx >= 0.0) {
      if (dx < best_ahead) {
        best_ahead = dx;
        q.leader = id;
        q.leader_gap = dx - half;
      }
    } else if (-dx < best_behind) {
      best_behind = -dx;
      q.follower = id;
      q.follower_gap = -dx - half;
    }
  }
  return q;
}

namespace {

double desired_speed_of(const World& world, int id) {
  return id == 0 ? world.ego_desired_speed : world.neighbors[static_cast<std::size_t>(id - 1)].desired_speed;
}

// IDM acceleration of `id` if `leader` (or nobody, -1) were directly ahead with `gap`.
double accel_behind(const World& world, int id, int leader, double gap) {
  const VehicleState& s = vehicle_state(world, id);
  if (leader < 0) return idm_accel(kInf, s.v, 0.0, desired_speed_of(world, id), world.idm);
  return idm_accel(gap, s.v, s.v - vehicle_state(world, leader).v, desired_speed_of(world, id), world.idm);
}

double gap_between(const VehicleState& follower, const VehicleState& leader) {
  return leader.x - follower.x - 0.5 * (leader.length + follower.length);
}

}  // namespace

LaneChangeDecision mobil_lane_change(const World& world, int index, int target_lane,
                                     const MobilParams& params) {
  if (target_lane < 0 || target_lane >= world.road.lane_count) {
    throw InvalidArgument("candidate lane does not exist");
  }
  LaneChangeDecision d;
  const int id = index + 1;
  const VehicleState& me = vehicle_state(world, id);
  const int lane = vehicle_lane(world, id);

  const LaneQuery here = query_lane(world, lane, me.x, me.length, id);
  const LaneQuery there = query_lane(world, target_lane, me.x, me.length, id);
  if ((there.leader >= 0 && there.leader_gap <= 0.0) || (there.follower >= 0 && there.follower_gap <= 0.0)) {
    return d;  // no room to merge
  }

  const double a_me = accel_behind(world, id, here.leader, here.leader_gap);
  const double a_me_new = accel_behind(world, id, there.leader, there.leader_gap);

  double gain_new_follower = 0.0;
  d.new_follower_accel = 0.0;
  if (there.follower >= 0) {
    const VehicleState& f = vehicle_state(world, there.follower);
    const double before = accel_behind(world, there.follower, there.leader,
                                       there.leader >= 0 ? gap_between(f, vehicle_state(world, there.leader)) : kInf);
    d.new_follower_accel = accel_behind(world, there.follower, id, there.follower_gap);
    gain_new_follower = d.new_follower_accel - before;
  }
  d.safe = d.new_follower_accel >= -params.safe_decel;

  double gain_old_follower = 0.0;
  if (here.follower >= 0) {
    const VehicleState& f = vehicle_state(world, here.follower);
    const double before = accel_behind(world, here.follower, id, here.follower_gap);
    const double after = accel_behind(world, here.follower, here.leader,
                                      here.leader >= 0 ? gap_between(f, vehicle_state(world, here.leader)) : kInf);
    gain_old_follower = after - before;
  }
  d.incentive = a_me_new - a_me + params.politeness * (gain_new_follower + gain_old_follower);
  d.change = d.safe && d.incentive > params.threshold;
  return d;
}

VehicleState bicycle_step(const VehicleState& s, const Controls& u, double wheelbase, double dt) {
  using State = Eigen::Vector4d;  // x, y, psi, v
  const double turn = std::tan(u.steer) / wheelbase;
  auto f = [&](const State& z) {
    return State(z[3] * std::cos(z[2]), z[3] * std::sin(z[2]), z[3] * turn, u.accel);
  };
  const State z0(s.x, s.y, s.psi, s.v);
  const State k1 = f(z0);
  const State k2 = f(z0 + 0.5 * dt * k1);
  const State k3 = f(z0 + 0.5 * dt * k2);
  const State k4 = f(z0 + dt * k3);
  const State z = z0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  VehicleState out = s;
  out.x = z[0];
  out.y = z[1];
  out.psi = wrap_angle(z[2]);
  out.v = std::max(0.0, z[3]);
  return out;
}

bool rectangles_overlap(const VehicleState& a, const VehicleState& b) {
  const Eigen::Vector2d ca(a.x, a.y), cb(b.x, b.y);
  const Eigen::Vector2d axes[4] = {{std::cos(a.psi), std::sin(a.psi)},
                                   {-std::sin(a.psi), std::cos(a.psi)},
                                   {std::cos(b.psi), std::sin(b.psi)},
                                   {-std::sin(b.psi), std::cos(b.psi)}};
  const Eigen::Vector2d d = cb - ca;
  for (const Eigen::Vector2d& n : axes) {
    const double ra = 0.5 * a.length * std::abs(axes[0].dot(n)) + 0.5 * a.width * std::abs(axes[1].dot(n));
    const double rb = 0.5 * b.length * std::abs(axes[2].dot(n)) + 0.5 * b.width * std::abs(axes[3].dot(n));
    if (std::abs(d.dot(n)) > ra + rb) return false;
  }
  return true;
}

StepEvents step_world(World& world, const Controls& ego_controls, double dt) {
  const std::size_t n = world.neighbors.size();
  std::vector<int> target(n);
  std::vector<double> accel(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Neighbor& nb = world.neighbors[i];
    int lane = nb.target_lane;
    const bool settled = std::abs(nb.state.y - world.road.lane_center(lane)) < 0.2;
    if (settled && nb.cooldown <= 0.0) {
      double best = -kInf;
      for (int cand : {lane - 1, lane + 1}) {
        if (cand < 0 || cand >= world.road.lane_count) continue;
        const LaneChangeDecision d = mobil_lane_change(world, static_cast<int>(i), cand, world.mobil);
        if (d.change && d.incentive > best) {
          best = d.incentive;
          lane = cand;
        }
      }
    }
    target[i] = lane;
    const int id = static_cast<int>(i) + 1;
    const LaneQuery q = query_lane(world, lane, nb.state.x, nb.state.length, id);
    accel[i] = accel_behind(world, id, q.leader, q.leader_gap);
  }

  world.ego = bicycle_step(world.ego, ego_controls, world.ego_wheelbase, dt);
  world.ego.lane = world.road.nearest_lane(world.ego.y);

  for (std::size_t i = 0; i < n; ++i) {
    Neighbor& nb = world.neighbors[i];
    VehicleState& s = nb.state;
    if (target[i] != nb.target_lane) {
      nb.target_lane = target[i];
      nb.cooldown = world.mobil.cooldown;
    } else {
      nb.cooldown = std::max(0.0, nb.cooldown - dt);
    }
    const double a = accel[i];
    if (s.v + a * dt < 0.0) {
      s.x += -s.v * s.v / (2.0 * a);
      s.v = 0.0;
    } else {
      s.x += s.v * dt + 0.5 * a * dt * dt;
      s.v += a * dt;
    }
    const double vy = std::clamp(world.road.lane_center(nb.target_lane) - s.y, -world.mobil.lateral_speed,
                                 world.mobil.lateral_speed);
    s.y += vy * dt;
    s.psi = s.v > 0.0 ? std::atan2(vy, s.v) : 0.0;
    s.lane = nb.target_lane;
  }
  world.step += 1;
  world.time += dt;

  StepEvents ev;
  for (std::size_t i = 0; i < n; ++i) {
    if (rectangles_overlap(world.ego, world.neighbors[i].state)) {
      ev.collision = true;
      ev.collided_with = static_cast<int>(i);
      break;
    }
  }
  // Departure: the ego center leaves the paved surface.
  ev.lane_departure = world.ego.y < world.road.right_edge() || world.ego.y > world.road.left_edge();
  return ev;
}

Eigen::VectorXd observe(const World& world) {
  Eigen::VectorXd o = Eigen::VectorXd::Zero(kObservationSize);
  const VehicleState& e = world.ego;
  o[0] = e.psi;
  o[1] = e.v * std::cos(e.psi);
  o[2] = e.v * std::sin(e.psi);

  std::vector<std::size_t> order(world.neighbors.size());
  std::vector<double> dist(world.neighbors.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const VehicleState& s = world.neighbors[i].state;
    dist[i] = std::hypot(s.x - e.x, s.y - e.y);
  }
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  for (int slot = 0; slot < kObservedNeighbors; ++slot) {
    const Eigen::Index base = 3 + slot * kNeighborFields;
    if (static_cast<std::size_t>(slot) >= order.size()) {
      o[base] = kSentinelRange;
      continue;
    }
    const VehicleState& s = world.neighbors[order[static_cast<std::size_t>(slot)]].state;
    o[base] = s.x - e.x;
    o[base + 1] = s.y - e.y;
    o[base + 2] = s.v * std::cos(s.psi) - o[1];
    o[base + 3] = s.v * std::sin(s.psi) - o[2];
    o[base + 4] = wrap_angle(s.psi - e.psi);
  }
  o[kObservationSize - 2] = world.road.left_edge() - e.y;
  o[kObservationSize - 1] = e.y - world.road.right_edge();
  return o;
}

}  // namespace hwplan
