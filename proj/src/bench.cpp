#include "hwplan/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hwplan/errors.hpp"
#include "json.hpp"
#include "json_util.hpp"

namespace hwplan {

using json = nlohmann::json;
using detail::reject_unknown;
using detail::take;

namespace {

std::string family_name(BasisFamily f) { return f == BasisFamily::Legendre ? "legendre" : "monomial"; }

BasisFamily family_from(const std::string& s) {
  if (s == "legendre") return BasisFamily::Legendre;
  if (s == "monomial") return BasisFamily::Monomial;
  throw InvalidArgument("unknown basis family '" + s + "'");
}

json parse_object(const std::string& text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string(what) + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument(std::string(what) + " must be a JSON object");
  return j;
}

void apply_planner_json(const json& j, PlannerConfig& c) {
  reject_unknown(j,
                 {"order", "num_samples", "horizon", "basis", "gains", "segments", "batch_size",
                  "constraint_elite", "elite", "iterations", "learning_rate", "gamma", "residual_weight",
                  "cov_floor", "projection", "v_max", "v_min", "a_max", "kappa_max", "c_max", "ellipse_a",
                  "ellipse_b", "lane_margin", "max_obstacles", "lane_weight", "lateral_std", "velocity_std", "warm_start_mean",
                  "warm_start_file", "wheelbase", "seed", "vanilla_speed", "grid_speed_fractions", "grid_cap"},
                 "planner config");
  try {
    take(j, "order", c.order);
    take(j, "num_samples", c.num_samples);
    take(j, "horizon", c.horizon);
    if (j.contains("basis")) c.basis_family = family_from(j.at("basis").get<std::string>());
    if (j.contains("gains")) {
      const json& g = j.at("gains");
      reject_unknown(g, {"kp", "kv", "k_vel", "w_smooth", "w_offset", "w_velocity"}, "gains");
      take(g, "kp", c.gains.kp);
      take(g, "kv", c.gains.kv);
      take(g, "k_vel", c.gains.k_vel);
      take(g, "w_smooth", c.gains.w_smooth);
      take(g, "w_offset", c.gains.w_offset);
      take(g, "w_velocity", c.gains.w_velocity);
    }
    take(j, "segments", c.segments);
    take(j, "batch_size", c.batch_size);
    take(j, "constraint_elite", c.constraint_elite);
    take(j, "elite", c.elite);
    take(j, "iterations", c.iterations);
    take(j, "learning_rate", c.learning_rate);
    take(j, "gamma", c.gamma);
    take(j, "residual_weight", c.residual_weight);
    take(j, "cov_floor", c.cov_floor);
    if (j.contains("projection")) {
      const json& p = j.at("projection");
      reject_unknown(p, {"rho", "multiplier_step", "max_iters", "tolerance"}, "projection");
      take(p, "rho", c.projection.rho);
      take(p, "multiplier_step", c.projection.multiplier_step);
      take(p, "max_iters", c.projection.max_iters);
      take(p, "tolerance", c.projection.tolerance);
    }
    take(j, "v_max", c.v_max);
    take(j, "v_min", c.v_min);
    take(j, "a_max", c.a_max);
    take(j, "kappa_max", c.kappa_max);
    take(j, "c_max", c.c_max);
    take(j, "ellipse_a", c.ellipse_a);
    take(j, "ellipse_b", c.ellipse_b);
    take(j, "lane_margin", c.lane_margin);
    take(j, "max_obstacles", c.max_obstacles);
    take(j, "lane_weight", c.lane_weight);
    take(j, "lateral_std", c.lateral_std);
    take(j, "velocity_std", c.velocity_std);
    take(j, "warm_start_mean", c.warm_start_mean);
    take(j, "warm_start_file", c.warm_start_file);
    take(j, "wheelbase", c.wheelbase);
    take(j, "seed", c.seed);
    take(j, "vanilla_speed", c.vanilla_speed);
    take(j, "grid_speed_fractions", c.grid_speed_fractions);
    take(j, "grid_cap", c.grid_cap);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad planner field type: ") + e.what());
  }
}

json planner_json(const PlannerConfig& c) {
  json j;
  j["order"] = c.order;
  j["num_samples"] = c.num_samples;
  j["horizon"] = c.horizon;
  j["basis"] = family_name(c.basis_family);
  j["gains"] = {{"kp", c.gains.kp},           {"kv", c.gains.kv},
                {"k_vel", c.gains.k_vel},     {"w_smooth", c.gains.w_smooth},
                {"w_offset", c.gains.w_offset}, {"w_velocity", c.gains.w_velocity}};
  j["segments"] = c.segments;
  j["batch_size"] = c.batch_size;
  j["constraint_elite"] = c.constraint_elite;
  j["elite"] = c.elite;
  j["iterations"] = c.iterations;
  j["learning_rate"] = c.learning_rate;
  j["gamma"] = c.gamma;
  j["residual_weight"] = c.residual_weight;
  j["cov_floor"] = c.cov_floor;
  j["projection"] = {{"rho", c.projection.rho},
                     {"multiplier_step", c.projection.multiplier_step},
                     {"max_iters", c.projection.max_iters},
                     {"tolerance", c.projection.tolerance}};
  j["v_max"] = c.v_max;
  j["v_min"] = c.v_min;
  j["a_max"] = c.a_max;
  j["kappa_max"] = c.kappa_max;
  j["c_max"] = c.c_max;
  j["ellipse_a"] = c.ellipse_a;
  j["ellipse_b"] = c.ellipse_b;
  j["lane_margin"] = c.lane_margin;
  j["max_obstacles"] = c.max_obstacles;
  j["lane_weight"] = c.lane_weight;
  j["lateral_std"] = c.lateral_std;
  j["velocity_std"] = c.velocity_std;
  j["warm_start_mean"] = c.warm_start_mean;
  j["warm_start_file"] = c.warm_start_file;
  j["wheelbase"] = c.wheelbase;
  j["seed"] = c.seed;
  j["vanilla_speed"] = c.vanilla_speed;
  j["grid_speed_fractions"] = c.grid_speed_fractions;
  j["grid_cap"] = c.grid_cap;
  return j;
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

}  // namespace

PlannerConfig planner_config_from_json(const std::string& text, const PlannerConfig& base) {
  const json j = parse_object(text, "planner config");
  PlannerConfig c = base;
  apply_planner_json(j, c);
  c.validate();
  return c;
}

std::string planner_config_to_json(const PlannerConfig& config) { return planner_json(config).dump(2); }

void BenchmarkSuite::validate() const {
  if (scenarios.empty()) throw InvalidArgument("suite has no scenarios");
  if (planners.empty()) throw InvalidArgument("suite has no planners");
  if (episodes_per_cell < 1) throw InvalidArgument("episodes_per_cell must be at least 1");
  if (replan_stride < 1) throw InvalidArgument("replan_stride must be at least 1");
  if (threads < 1) throw InvalidArgument("threads must be at least 1");
  const auto kinds = planner_kinds();
  for (std::size_t i = 0; i < planners.size(); ++i) {
    const auto& p = planners[i];
    if (std::find(kinds.begin(), kinds.end(), p.kind) == kinds.end()) {
      throw InvalidArgument("unknown planner kind '" + p.kind + "'");
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (planners[k].name == p.name) throw InvalidArgument("duplicate planner name '" + p.name + "'");
    }
    p.config.validate();
  }
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    scenarios[i].validate();
    for (std::size_t k = 0; k < i; ++k) {
      if (scenarios[k].name == scenarios[i].name) {
        throw InvalidArgument("duplicate scenario name '" + scenarios[i].name + "'");
      }
    }
  }
}

std::vector<std::uint64_t> BenchmarkSuite::seeds() const {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(std::max(episodes_per_cell, 0)));
  for (std::size_t e = 0; e < s.size(); ++e) s[e] = base_seed + e;
  return s;
}

BenchmarkSuite suite_from_json(const std::string& text, const std::string& base_dir) {
  const json j = parse_object(text, "benchmark suite");
  reject_unknown(j,
                 {"episodes_per_cell", "base_seed", "replan_stride", "threads", "planner_defaults", "scenarios",
                  "planners"},
                 "benchmark suite");
  BenchmarkSuite s;
  try {
    take(j, "episodes_per_cell", s.episodes_per_cell);
    take(j, "base_seed", s.base_seed);
    take(j, "replan_stride", s.replan_stride);
    take(j, "threads", s.threads);
    PlannerConfig defaults;
    if (j.contains("planner_defaults")) apply_planner_json(j.at("planner_defaults"), defaults);
    for (const json& sc : j.at("scenarios")) {
      if (sc.is_string()) {
        const std::filesystem::path path(sc.get<std::string>());
        s.scenarios.push_back(load_scenario(path.is_absolute() || base_dir.empty()
                                                ? path.string()
                                                : (std::filesystem::path(base_dir) / path).string()));
      } else {
        s.scenarios.push_back(scenario_from_json(sc.dump()));
      }
    }
    for (const json& p : j.at("planners")) {
      reject_unknown(p, {"name", "kind", "config"}, "planner entry");
      PlannerEntry e;
      e.kind = p.at("kind").get<std::string>();
      e.name = p.contains("name") ? p.at("name").get<std::string>() : e.kind;
      e.config = defaults;
      if (p.contains("config")) apply_planner_json(p.at("config"), e.config);
      s.planners.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad benchmark suite: ") + e.what());
  }
  s.validate();
  return s;
}

std::string suite_to_json(const BenchmarkSuite& s) {
  json j;
  j["episodes_per_cell"] = s.episodes_per_cell;
  j["base_seed"] = s.base_seed;
  j["replan_stride"] = s.replan_stride;
  j["threads"] = s.threads;
  j["scenarios"] = json::array();
  for (const auto& sc : s.scenarios) j["scenarios"].push_back(json::parse(scenario_to_json(sc)));
  j["planners"] = json::array();
  for (const auto& p : s.planners) {
    j["planners"].push_back({{"name", p.name}, {"kind", p.kind}, {"config", planner_json(p.config)}});
  }
  return j.dump(2);
}

BenchmarkSuite load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open suite file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return suite_from_json(ss.str(), std::filesystem::path(path).parent_path().string());
}

EpisodeSummary summarize(const EpisodeLog& log) {
  EpisodeSummary s;
  s.planner = log.planner;
  s.scenario = log.scenario;
  s.seed = log.seed;
  s.collision = log.collision;
  s.lane_departure = log.lane_departure;
  s.failed = log.failed;
  s.numerical_failure = log.numerical_failure;
  s.failure = log.failure;
  s.steps = static_cast<int>(log.steps.size());
  s.mean_speed = log.mean_speed();
  s.solve_time = log.total_solve_time();
  s.replans = static_cast<int>(log.replans.size());
  return s;
}

MetricsRow aggregate(const std::string& planner, const std::string& scenario,
                     const std::vector<EpisodeSummary>& episodes) {
  MetricsRow r;
  r.planner = planner;
  r.scenario = scenario;
  double speed_sum = 0.0, solve_sum = 0.0;
  int replans = 0;
  for (const auto& e : episodes) {
    ++r.episodes;
    if (e.collision) ++r.collisions;
    if (e.failed) ++r.failures;
    if (e.numerical_failure) ++r.numerical_failures;
    if (e.lane_departure) ++r.lane_departures;
    if (!e.collision && !e.failed) {
      ++r.collision_free;
      speed_sum += e.mean_speed;
    }
    solve_sum += e.solve_time;
    replans += e.replans;
  }
  r.collision_rate = r.episodes ? static_cast<double>(r.collisions) / r.episodes : 0.0;
  r.mean_speed = r.collision_free ? speed_sum / r.collision_free : 0.0;
  r.mean_solve_time = replans ? solve_sum / replans : 0.0;
  return r;
}

SuiteResult run_suite(const BenchmarkSuite& suite, const ProgressFn& progress,
                      const std::function<void(const EpisodeLog&)>& log_sink) {
  suite.validate();
  const std::vector<std::uint64_t> seeds = suite.seeds();
  const std::size_t np = suite.planners.size(), ns = suite.scenarios.size(), ne = seeds.size();
  const std::size_t total = np * ns * ne;
  std::vector<EpisodeSummary> results(total);

  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex sink_mutex;

  auto worker = [&](bool nested) {
#ifdef _OPENMP
    // One OpenMP team per worker would oversubscribe the pool.
    if (nested) omp_set_num_threads(1);
#else
    (void)nested;
#endif
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= total) return;
      const std::size_t p = job / (ns * ne), s = (job / ne) % ns, e = job % ne;
      try {
        ScenarioConfig sc = suite.scenarios[s];
        sc.seed = seeds[e];
        auto planner = make_planner(suite.planners[p].kind, suite.planners[p].config);
        EpisodeLog log = run_episode(sc, *planner, suite.replan_stride);
        log.planner = suite.planners[p].name;
        results[job] = summarize(log);
        if (log_sink) {
          std::lock_guard<std::mutex> lock(sink_mutex);
          log_sink(log);
        }
      } catch (const std::exception& ex) {
        // Failures outside the planner loop are recorded, not fatal to the suite.
        EpisodeSummary& f = results[job];
        f.planner = suite.planners[p].name;
        f.scenario = suite.scenarios[s].name;
        f.seed = seeds[e];
        f.failed = true;
        f.numerical_failure = dynamic_cast<const NumericalFailure*>(&ex) != nullptr;
        f.failure = ex.what();
      }
      const int d = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        progress(d, static_cast<int>(total));
      }
    }
  };

  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(suite.threads), total));
  if (threads <= 1) {
    worker(false);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, true);
    for (auto& t : pool) t.join();
  }

  SuiteResult out;
  out.seeds = seeds;
  out.episodes = results;
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t s = 0; s < ns; ++s) {
      const auto begin = results.begin() + static_cast<std::ptrdiff_t>((p * ns + s) * ne);
      std::vector<EpisodeSummary> cell(begin, begin + static_cast<std::ptrdiff_t>(ne));
      for (std::size_t e = 0; e < ne; ++e) {
        if (cell[e].seed != seeds[e]) throw StructureError("episode seed lists differ between planners");
      }
      out.rows.push_back(aggregate(suite.planners[p].name, suite.scenarios[s].name, cell));
      for (const auto& c : cell) out.any_numerical_failure = out.any_numerical_failure || c.numerical_failure;
    }
  }
  return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.planner << ',' << r.scenario << ',' << r.episodes << ',' << r.collisions << ','
        << fixed(r.collision_rate) << ',' << r.collision_free << ',' << fixed(r.mean_speed) << ',' << r.failures
        << ',' << r.numerical_failures << ',' << r.lane_departures << '\n';
  }
}

void write_solve_times_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << "planner,scenario,mean_solve_time\n";
  for (const auto& r : rows) out << r.planner << ',' << r.scenario << ',' << fixed(r.mean_solve_time, 9) << '\n';
}

void write_episodes_csv(const std::vector<EpisodeSummary>& episodes, std::ostream& out) {
  out << "planner,scenario,seed,collision,lane_departure,failed,numerical_failure,steps,replans,mean_speed\n";
  for (const auto& e : episodes) {
    out << e.planner << ',' << e.scenario << ',' << e.seed << ',' << e.collision << ',' << e.lane_departure << ','
        << e.failed << ',' << e.numerical_failure << ',' << e.steps << ',' << e.replans << ','
        << fixed(e.mean_speed) << '\n';
  }
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string run_manifest(const BenchmarkSuite& suite, const SuiteResult& result) {
  BenchmarkSuite canonical = suite;
  canonical.threads = 1;  // the thread count does not change any result
  json j;
  j["config_hash"] = content_hash(suite_to_json(canonical));
  j["seeds"] = result.seeds;
  j["episodes_per_cell"] = suite.episodes_per_cell;
  j["replan_stride"] = suite.replan_stride;
  j["threads"] = suite.threads;
  j["planners"] = json::array();
  for (const auto& p : suite.planners) j["planners"].push_back({{"name", p.name}, {"kind", p.kind}});
  j["scenarios"] = json::array();
  for (const auto& s : suite.scenarios) j["scenarios"].push_back(s.name);
  j["any_numerical_failure"] = result.any_numerical_failure;
  j["versions"] = {{"hwplan", "0.1.0"},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__},
                   {"cxx_standard", static_cast<long>(__cplusplus)}};
  j["files"] = {"metrics.csv", "solve_times.csv", "episodes.csv"};
  return j.dump(2);
}

TraceScene canonical_static_scene() {
  TraceScene s;
  s.layout = BehaviorLayout{4, false};
  s.problem.b0.x = 0.0;
  s.problem.b0.y = 0.0;
  s.problem.b0.vx = 20.0;
  s.problem.v_max = 30.0;
  ConstraintSpec& c = s.problem.constraints;
  c.ellipse_a = 7.07;
  c.ellipse_b = 2.83;
  c.lane_lb = -1.0;
  c.lane_ub = 5.0;
  c.v_min = 0.0;
  c.v_max = 30.0;
  ObstacleTrack t;
  t.x = Eigen::VectorXd::Constant(50, 50.0);
  t.y = Eigen::VectorXd::Constant(50, 0.5);
  c.obstacles.push_back(t);
  s.initial.mean = Eigen::VectorXd(8);
  s.initial.mean << 0.0, 0.0, 0.0, 0.0, 20.0, 20.0, 20.0, 20.0;
  Eigen::VectorXd var(8);
  var << 4.0, 4.0, 4.0, 4.0, 25.0, 25.0, 25.0, 25.0;
  s.initial.cov = var.asDiagonal();
  return s;
}

std::vector<IterationDiagnostics> emit_convergence_trace(const TraceScene& scene, const PolynomialBasis& basis,
                                                         const TrackingGains& gains, BiLevelConfig config) {
  config.record_envelopes = true;
  scene.problem.constraints.validate(basis.num_samples());
  BiLevelSolver solver(basis, gains, scene.layout, config);
  return solver.solve(scene.problem, scene.initial).iterations;
}

void write_trace_csv(const std::vector<IterationDiagnostics>& trace, std::ostream& out) {
  out << "iteration,elite_mean_upper_cost,elite_mean_augmented_cost,best_augmented_cost,cov_trace_sampled,"
         "cov_trace,residual_min,residual_median,residual_p90,residual_max,feasible_fraction,degenerate_weights\n";
  for (const auto& d : trace) {
    out << d.iteration << ',' << fixed(d.elite_mean_upper_cost) << ',' << fixed(d.elite_mean_augmented_cost) << ','
        << fixed(d.best_augmented_cost) << ',' << fixed(d.cov_trace_sampled) << ',' << fixed(d.cov_trace) << ','
        << fixed(d.residual_min, 9) << ',' << fixed(d.residual_median, 9) << ',' << fixed(d.residual_p90, 9) << ','
        << fixed(d.residual_max, 9) << ',' << fixed(d.feasible_fraction) << ',' << d.degenerate_weights << '\n';
  }
}

void write_envelopes_csv(const std::vector<IterationDiagnostics>& trace, const PolynomialBasis& basis,
                         std::ostream& out) {
  out << "iteration,time,x_min,x_max,y_min,y_max\n";
  for (const auto& d : trace) {
    for (Eigen::Index i = 0; i < d.x_min.size(); ++i) {
      out << d.iteration << ',' << fixed(basis.times[i]) << ',' << fixed(d.x_min[i]) << ',' << fixed(d.x_max[i])
          << ',' << fixed(d.y_min[i]) << ',' << fixed(d.y_max[i]) << '\n';
    }
  }
}

std::vector<TimingRow> emit_timing(const std::vector<int>& batch_sizes, const std::vector<int>& iterations,
                                   int repeats, const BiLevelConfig& base) {
  if (repeats < 1) throw InvalidArgument("repeats must be at least 1");
  const TraceScene scene = canonical_static_scene();
  const PolynomialBasis basis = build_basis(10, 50, 10.0);
  std::vector<TimingRow> rows;
  for (int n : batch_sizes) {
    for (int it : iterations) {
      BiLevelConfig c = base;
      c.batch_size = n;
      c.iterations = it;
      c.constraint_elite = std::max(1, n * 3 / 20);
      c.elite = std::max(1, n / 20);
      c.record_envelopes = false;
      TimingRow r;
      r.batch_size = n;
      r.iterations = it;
      r.repeats = repeats;
      r.min_seconds = std::numeric_limits<double>::infinity();
      double sum = 0.0;
      for (int k = 0; k < repeats; ++k) {
        c.seed = base.seed + static_cast<std::uint64_t>(k);
        const auto f0 = KktSystem::factorization_count();
        BiLevelSolver solver(basis, TrackingGains{}, scene.layout, c);
        const auto t0 = std::chrono::steady_clock::now();
        solver.solve(scene.problem, scene.initial);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.factorizations_per_solve = static_cast<long>(KktSystem::factorization_count() - f0);
        sum += dt;
        r.min_seconds = std::min(r.min_seconds, dt);
        r.max_seconds = std::max(r.max_seconds, dt);
      }
      r.mean_seconds = sum / repeats;
      r.seconds_per_iteration = r.mean_seconds / it;
      rows.push_back(r);
    }
  }
  return rows;
}

void write_timing_csv(const std::vector<TimingRow>& rows, std::ostream& out) {
  out << "batch_size,iterations,repeats,mean_seconds,min_seconds,max_seconds,seconds_per_iteration,"
         "factorizations_per_solve\n";
  for (const auto& r : rows) {
    out << r.batch_size << ',' << r.iterations << ',' << r.repeats << ',' << fixed(r.mean_seconds, 9) << ','
        << fixed(r.min_seconds, 9) << ',' << fixed(r.max_seconds, 9) << ',' << fixed(r.seconds_per_iteration, 9)
        << ',' << r.factorizations_per_solve << '\n';
  }
}

}  // namespace hwplan
