#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hwplan/bench.hpp"
#include "hwplan/errors.hpp"

namespace fs = std::filesystem;
using namespace hwplan;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config;
  std::string out = "out";
  long long seed = -1;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "configuration file");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  else opt->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("-s,--seed", c.seed, "seed override");
  cmd->add_option("-j,--threads", c.threads, "worker threads");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("cannot write " + path.string());
  return f;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_bench(const Common& c, bool write_logs, bool quiet) {
  BenchmarkSuite suite = load_suite(c.config);
  if (c.seed >= 0) suite.base_seed = static_cast<std::uint64_t>(c.seed);
  if (c.threads > 0) suite.threads = c.threads;
  const fs::path out(c.out);
  fs::create_directories(out);
  if (write_logs) fs::create_directories(out / "logs");

  auto progress = [&](int done, int total) {
    if (!quiet) std::cerr << "\r" << done << "/" << total << " episodes" << std::flush;
  };
  auto sink = [&](const EpisodeLog& log) {
    if (!write_logs) return;
    auto f = open_out(out / "logs" / (log.planner + "_" + log.scenario + "_" + std::to_string(log.seed) + ".jsonl"));
    write_episode_log(log, f);
  };
  const SuiteResult r = run_suite(suite, progress, sink);
  if (!quiet) std::cerr << "\n";

  {
    auto f = open_out(out / "metrics.csv");
    write_metrics_csv(r.rows, f);
  }
  {
    auto f = open_out(out / "solve_times.csv");
    write_solve_times_csv(r.rows, f);
  }
  {
    auto f = open_out(out / "episodes.csv");
    write_episodes_csv(r.episodes, f);
  }
  {
    auto f = open_out(out / "manifest.json");
    f << run_manifest(suite, r) << '\n';
  }
  write_metrics_csv(r.rows, std::cout);
  return r.any_numerical_failure ? kExitNumerical : 0;
}

int run_trace(const Common& c) {
  PlannerConfig pc;
  if (!c.config.empty()) pc = planner_config_from_json(slurp(c.config));
  BiLevelConfig bc = pc.bilevel_config();
  if (c.config.empty()) {
    bc.batch_size = 1000;
    bc.constraint_elite = 150;
    bc.elite = 50;
    bc.iterations = 5;
  }
  if (c.seed >= 0) bc.seed = static_cast<std::uint64_t>(c.seed);
  const PolynomialBasis basis = build_basis(pc.order, pc.num_samples, pc.horizon, pc.basis_family);
  const auto trace = emit_convergence_trace(canonical_static_scene(), basis, pc.gains, bc);
  const fs::path out(c.out);
  fs::create_directories(out);
  {
    auto f = open_out(out / "trace.csv");
    write_trace_csv(trace, f);
  }
  {
    auto f = open_out(out / "envelopes.csv");
    write_envelopes_csv(trace, basis, f);
  }
  write_trace_csv(trace, std::cout);
  return 0;
}

int run_time(const Common& c, const std::vector<int>& batches, const std::vector<int>& iterations, int repeats) {
  BiLevelConfig bc;
  if (!c.config.empty()) bc = planner_config_from_json(slurp(c.config)).bilevel_config();
  if (c.seed >= 0) bc.seed = static_cast<std::uint64_t>(c.seed);
  const auto rows = emit_timing(batches, iterations, repeats, bc);
  const fs::path out(c.out);
  fs::create_directories(out);
  auto f = open_out(out / "timing.csv");
  write_timing_csv(rows, f);
  write_timing_csv(rows, std::cout);
  return 0;
}

int run_replay(const std::string& log_path, const Common& c) {
  std::ifstream in(log_path);
  if (!in) throw InvalidArgument("cannot open " + log_path);
  const EpisodeLog log = read_episode_log(in);
  const fs::path out(c.out);
  fs::create_directories(out);
  auto f = open_out(out / (fs::path(log_path).stem().string() + "_trajectory.csv"));
  write_trajectory_csv(log, f);
  std::cout << log.planner << " " << log.scenario << " seed " << log.seed << ": " << log.steps.size()
            << " steps, " << log.replans.size() << " replans, termination " << log.termination
            << ", mean speed " << log.mean_speed() << "\n";
  return log.numerical_failure ? kExitNumerical : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level sampling MPC for highway driving"};
  app.require_subcommand(1);

  Common bench, trace, timing, replay;
  bool logs = false, quiet = false;
  auto* b = app.add_subcommand("bench", "run a benchmark suite");
  add_common(b, bench, true);
  b->add_flag("--logs", logs, "write one episode log per episode under <out>/logs");
  b->add_flag("-q,--quiet", quiet, "no progress output");

  auto* t = app.add_subcommand("trace", "convergence trace on the static-obstacle scene");
  add_common(t, trace, false);

  std::vector<int> batches{250, 1000}, iterations{2, 5};
  int repeats = 3;
  auto* tm = app.add_subcommand("time", "solve-time table over batch sizes and iteration counts");
  add_common(tm, timing, false);
  tm->add_option("--batch", batches, "batch sizes")->delimiter(',')->capture_default_str();
  tm->add_option("--iterations", iterations, "iteration counts")->delimiter(',')->capture_default_str();
  tm->add_option("--repeats", repeats, "solves per cell")->capture_default_str();

  std::string log_path;
  auto* r = app.add_subcommand("replay", "convert an episode log to a trajectory table");
  add_common(r, replay, false);
  r->add_option("log", log_path, "episode log")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (b->parsed()) return run_bench(bench, logs, quiet);
    if (t->parsed()) return run_trace(trace);
    if (tm->parsed()) return run_time(timing, batches, iterations, repeats);
    if (r->parsed()) return run_replay(log_path, replay);
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
