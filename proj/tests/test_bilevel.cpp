#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hwplan/bench.hpp"
#include "hwplan/bilevel.hpp"
#include "hwplan/errors.hpp"
#include "support.hpp"

using namespace hwplan;
using testing_support::max_abs;
using testing_support::random_vector;

namespace {

EliteRecord record(int index, double upper, double residual, const Eigen::VectorXd& p) {
  EliteRecord r;
  r.index = index;
  r.p = p;
  r.upper_cost = upper;
  r.residual = residual;
  r.augmented_cost = upper + residual;
  return r;
}

SamplingDistribution prior(int dim, double mean, double var) {
  return {Eigen::VectorXd::Constant(dim, mean), Eigen::MatrixXd::Identity(dim, dim) * var};
}

BiLevelConfig small_config(int batch, int n, int q, int iters, std::uint64_t seed = 0) {
  BiLevelConfig c;
  c.batch_size = batch;
  c.constraint_elite = n;
  c.elite = q;
  c.iterations = iters;
  c.seed = seed;
  return c;
}

BiLevelProblem open_problem() {
  BiLevelProblem p;
  p.b0.vx = 20.0;
  p.constraints.lane_lb = -1.0;
  p.constraints.lane_ub = 5.0;
  return p;
}

SamplingDistribution lane_keeping_prior(double speed) {
  SamplingDistribution d;
  d.mean = Eigen::VectorXd(8);
  d.mean << 0, 0, 0, 0, speed, speed, speed, speed;
  Eigen::VectorXd var(8);
  var << 1, 1, 1, 1, 25, 25, 25, 25;
  d.cov = var.asDiagonal();
  return d;
}

}  // namespace

TEST_CASE("upper cost examples") {
  const PolynomialBasis b = build_basis(10, 50, 10.0);
  CHECK(upper_cost(testing_support::cruise(b, 30.0, 0.0), b, 30.0) <= 1e-16);
  const TrajectoryCoeffs still{Eigen::VectorXd::Zero(11), Eigen::VectorXd::Zero(11)};
  CHECK(upper_cost(still, b, 20.0) == 50 * 400.0);
}

TEST_CASE("upper cost matches a per-sample loop") {
  const PolynomialBasis b = build_basis(10, 50, 10.0);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const TrajectoryCoeffs xi{random_vector(rng, 11, 5.0), random_vector(rng, 11, 5.0)};
    double sum = 0.0;
    for (int i = 0; i < 50; ++i) {
      double xd = 0.0, yd = 0.0;
      for (int k = 0; k < 11; ++k) {
        xd += b.Wdot(i, k) * xi.cx[k];
        yd += b.Wdot(i, k) * xi.cy[k];
      }
      const double e = std::sqrt(xd * xd + yd * yd) - 25.0;
      sum += e * e;
    }
    CHECK(upper_cost(xi, b, 25.0) == doctest::Approx(sum).epsilon(1e-12));
    CHECK(upper_cost(xi, b, 25.0) >= 0.0);
  }
}

TEST_CASE("elite selection examples") {
  const Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  std::vector<EliteRecord> same;
  for (int i = 0; i < 6; ++i) same.push_back(record(i, 10.0 - i, 1.0, p));
  EliteSelection s = select_elites(same, 3, 2);
  CHECK(s.constraint_elite == std::vector<int>{0, 1, 2});
  CHECK(s.elite == std::vector<int>{2, 1});

  std::vector<EliteRecord> r{record(0, 0, 3, p), record(1, 0, 1, p), record(2, 0, 2, p)};
  s = select_elites(r, 2, 2);
  std::vector<int> ce = s.constraint_elite;
  std::sort(ce.begin(), ce.end());
  CHECK(ce == std::vector<int>{1, 2});
}

TEST_CASE("distribution update examples") {
  const SamplingDistribution d = prior(3, 1.0, 2.0);
  std::mt19937_64 rng(2);
  const std::vector<EliteRecord> elite{record(0, 5, 0, random_vector(rng, 3)), record(1, 6, 0, random_vector(rng, 3))};
  DistributionUpdate u = update_distribution(d, elite, 0.0, 0.9, 1e-6);
  CHECK(max_abs(u.dist.mean - d.mean) == 0.0);
  CHECK(max_abs(u.dist.cov - d.cov) == 0.0);

  const Eigen::VectorXd p_hat = random_vector(rng, 3);
  u = update_distribution(d, {record(0, 3, 0, p_hat)}, 1.0, 0.9, 1e-6);
  CHECK(max_abs(u.dist.mean - p_hat) <= 1e-15);
  CHECK(max_abs(u.dist.cov - 1e-6 * Eigen::MatrixXd::Identity(3, 3)) <= 1e-15);

  const Eigen::VectorXd a = random_vector(rng, 3), b = random_vector(rng, 3);
  u = update_distribution(d, {record(0, 4, 1, a), record(1, 2, 3, b)}, 1.0, 0.9, 0.0);
  const Eigen::VectorXd mean = 0.5 * (a + b);
  const Eigen::MatrixXd cov = 0.5 * ((a - mean) * (a - mean).transpose() + (b - mean) * (b - mean).transpose());
  CHECK(max_abs(u.dist.mean - mean) <= 1e-14);
  CHECK(max_abs(u.dist.cov - cov) <= 1e-14);
  CHECK_FALSE(u.degenerate_weights);
}

TEST_CASE("distribution update matches the weighted formulas") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> cost(0.0, 5.0);
  const SamplingDistribution d{random_vector(rng, 4), 3.0 * Eigen::MatrixXd::Identity(4, 4)};
  std::vector<EliteRecord> elite;
  for (int j = 0; j < 7; ++j) elite.push_back(record(j, cost(rng), cost(rng), random_vector(rng, 4)));
  const double eta = 0.7, gamma = 0.9, floor = 1e-6;
  const DistributionUpdate u = update_distribution(d, elite, eta, gamma, floor);
  double sw = 0.0;
  Eigen::VectorXd wp = Eigen::VectorXd::Zero(4);
  for (const auto& e : elite) {
    const double s = std::exp(-e.augmented_cost / gamma);
    sw += s;
    wp += s * e.p;
  }
  const Eigen::VectorXd mean = (1 - eta) * d.mean + eta * wp / sw;
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(4, 4);
  for (const auto& e : elite) {
    const double s = std::exp(-e.augmented_cost / gamma);
    scatter += s * (e.p - mean) * (e.p - mean).transpose();
  }
  const Eigen::MatrixXd cov = (1 - eta) * d.cov + eta * (scatter / sw + floor * Eigen::MatrixXd::Identity(4, 4));
  CHECK(max_abs(u.dist.mean - mean) <= 1e-12);
  CHECK(max_abs(u.dist.cov - cov) <= 1e-12);
}

TEST_CASE("non-finite elite costs fall back to uniform weights") {
  const SamplingDistribution d = prior(2, 0.0, 1.0);
  const Eigen::VectorXd a = Eigen::Vector2d(1, 2), b = Eigen::Vector2d(3, 4);
  const double inf = std::numeric_limits<double>::infinity();
  const DistributionUpdate u = update_distribution(d, {record(0, inf, 0, a), record(1, inf, 0, b)}, 1.0, 0.9, 0.0);
  CHECK(u.degenerate_weights);
  CHECK(max_abs(u.dist.mean - Eigen::Vector2d(2, 3)) <= 1e-15);
}

TEST_CASE("a single sample and a single iteration return its projection") {
  const PolynomialBasis basis = build_basis(10, 50, 10.0);
  const BehaviorLayout layout{4, false};
  BiLevelProblem prob = open_problem();
  prob.constraints.obstacles.push_back({Eigen::VectorXd::Constant(50, 80.0), Eigen::VectorXd::Constant(50, 0.0)});
  std::istringstream file(FileSampleSource::header_for(layout) + "\n0.5,1,2,3,18,19,20,21\n");
  FileSampleSource src(file);
  BiLevelSolver solver(basis, TrackingGains{}, layout, small_config(1, 1, 1, 1));
  const BiLevelResult r = solver.solve(prob, lane_keeping_prior(20.0), &src);
  Eigen::VectorXd p(8);
  p << 0.5, 1, 2, 3, 18, 19, 20, 21;
  const auto rec = solver.evaluate(prob, p);
  CHECK(max_abs(r.xi.stacked() - rec[0].xi.stacked()) == 0.0);
  CHECK(max_abs(r.best_p_vector - p) == 0.0);
  CHECK(r.iterations.size() == 1);
}

TEST_CASE("empty road converges to full speed") {
  const PolynomialBasis basis = build_basis(10, 50, 10.0);
  BiLevelSolver solver(basis, TrackingGains{}, BehaviorLayout{4, false}, small_config(250, 40, 12, 5, 4));
  BiLevelProblem prob = open_problem();
  prob.b0.vx = 28.0;
  const BiLevelResult r = solver.solve(prob, lane_keeping_prior(28.0));
  const SampledTrajectory s = eval_trajectory(basis, r.xi);
  const double mean_speed = (s.xdot.array().square() + s.ydot.array().square()).sqrt().mean();
  CHECK(mean_speed >= 0.95 * 30.0);
  CHECK(r.residual <= 1e-3);
}

TEST_CASE("convergence on the static-obstacle scene") {
  const TraceScene scene = canonical_static_scene();
  const PolynomialBasis basis = build_basis(10, 50, 10.0);
  BiLevelConfig c = small_config(300, 45, 15, 5, 9);
  const auto trace = emit_convergence_trace(scene, basis, TrackingGains{}, c);
  REQUIRE(trace.size() == 5);
  CHECK(trace[4].elite_mean_upper_cost <= trace[0].elite_mean_upper_cost);
  CHECK(trace[4].cov_trace < trace[0].cov_trace);
  for (std::size_t i = 0; i < trace.size(); ++i) CHECK(trace[i].iteration == static_cast<int>(i) + 1);
  CHECK(trace[0].x_min.size() == 50);
}

TEST_CASE("sample file parsing") {
  const BehaviorLayout layout{2, true};
  CHECK(FileSampleSource::header_for(layout) == "y_d_1,y_d_2,v_d_1,v_d_2,x_f,y_f");
  std::istringstream good("y_d_1,y_d_2,v_d_1,v_d_2,x_f,y_f\n1,2,3,4,5,6\n7,8,9,10,11,12\n");
  FileSampleSource src(good);
  CHECK(src.size() == 2);
  const Eigen::MatrixXd m = src.draw(3, layout);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 7.0);
  CHECK(m(5, 2) == 6.0);
  CHECK_THROWS_AS(src.draw(1, BehaviorLayout{2, false}), InvalidArgument);
  std::istringstream bad_header("y_d_1,v_d_1\n1,2\n");
  FileSampleSource short_src(bad_header);
  CHECK(short_src.layout().segments == 1);
  std::istringstream bad_row("y_d_1,v_d_1\n1\n");
  CHECK_THROWS_AS(FileSampleSource{bad_row}, InvalidArgument);
  std::istringstream junk("a,b\n1,2\n");
  CHECK_THROWS_AS(FileSampleSource{junk}, InvalidArgument);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(small_config(10, 20, 5, 1).validate(), InvalidArgument);
  CHECK_THROWS_AS(small_config(10, 5, 6, 1).validate(), InvalidArgument);
  CHECK_THROWS_AS(small_config(10, 5, 2, 0).validate(), InvalidArgument);
  BiLevelConfig c = small_config(10, 5, 2, 1);
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_SUITE("properties") {
  TEST_CASE("elite selection matches a full-sort oracle") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> coarse(0, 6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<EliteRecord> r;
      for (int i = 0; i < 40; ++i) r.push_back(record(i, coarse(rng), 0.5 * coarse(rng), Eigen::VectorXd::Zero(1)));
      const EliteSelection s = select_elites(r, 15, 5);
      std::vector<int> idx(40);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return std::make_pair(r[a].residual, a) < std::make_pair(r[b].residual, b);
      });
      idx.resize(15);
      CHECK(s.constraint_elite == idx);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return std::make_pair(r[a].augmented_cost, a) < std::make_pair(r[b].augmented_cost, b);
      });
      idx.resize(5);
      CHECK(s.elite == idx);
    }
  }

  TEST_CASE("elite selection is deterministic under ties") {
    const Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
    std::vector<EliteRecord> r;
    for (int i = 0; i < 30; ++i) r.push_back(record(i, i % 3, i % 2, p));
    const EliteSelection a = select_elites(r, 10, 4), b = select_elites(r, 10, 4);
    CHECK(a.constraint_elite == b.constraint_elite);
    CHECK(a.elite == b.elite);
  }

  TEST_CASE("update is invariant to a constant cost shift") {
    std::mt19937_64 rng(6);
    const SamplingDistribution d{random_vector(rng, 5), 2.0 * Eigen::MatrixXd::Identity(5, 5)};
    std::vector<EliteRecord> elite;
    for (int j = 0; j < 10; ++j) elite.push_back(record(j, 1.0 + j, 0.1 * j, random_vector(rng, 5)));
    for (double c : {-50.0, 3.0, 500.0, 1e5}) {
      std::vector<EliteRecord> shifted = elite;
      for (auto& e : shifted) e.augmented_cost += c;
      const auto u0 = update_distribution(d, elite, 0.7, 0.9);
      const auto u1 = update_distribution(d, shifted, 0.7, 0.9);
      CHECK(max_abs(u0.dist.mean - u1.dist.mean) <= 1e-10);
      CHECK(max_abs(u0.dist.cov - u1.dist.cov) <= 1e-10);
      CHECK_FALSE(u1.degenerate_weights);
    }
  }

  TEST_CASE("update with zero learning rate is the identity") {
    std::mt19937_64 rng(7);
    const SamplingDistribution d{random_vector(rng, 6), 4.0 * Eigen::MatrixXd::Identity(6, 6)};
    std::vector<EliteRecord> elite;
    for (int j = 0; j < 4; ++j) elite.push_back(record(j, j, 0, random_vector(rng, 6)));
    const auto u = update_distribution(d, elite, 0.0, 0.9);
    CHECK(max_abs(u.dist.mean - d.mean) == 0.0);
    CHECK(max_abs(u.dist.cov - d.cov) == 0.0);
  }

  TEST_CASE("returned record dominates the final elite set") {
    const TraceScene scene = canonical_static_scene();
    const PolynomialBasis basis = build_basis(10, 50, 10.0);
    BiLevelSolver solver(basis, TrackingGains{}, scene.layout, small_config(200, 30, 10, 3, 2));
    const BiLevelResult r = solver.solve(scene.problem, scene.initial);
    CHECK(r.augmented_cost == r.iterations.back().best_augmented_cost);
    CHECK(r.augmented_cost <= r.iterations.back().elite_mean_augmented_cost);
  }

  TEST_CASE("identical seeds give identical solves") {
    const TraceScene scene = canonical_static_scene();
    const PolynomialBasis basis = build_basis(10, 50, 10.0);
    BiLevelConfig c = small_config(150, 25, 8, 3, 17);
    c.record_envelopes = true;
    BiLevelSolver a(basis, TrackingGains{}, scene.layout, c), b(basis, TrackingGains{}, scene.layout, c);
    const BiLevelResult ra = a.solve(scene.problem, scene.initial), rb = b.solve(scene.problem, scene.initial);
    CHECK(ra.xi.stacked() == rb.xi.stacked());
    CHECK(ra.best_p_vector == rb.best_p_vector);
    REQUIRE(ra.iterations.size() == rb.iterations.size());
    for (std::size_t i = 0; i < ra.iterations.size(); ++i) {
      CHECK(ra.iterations[i].cov_trace == rb.iterations[i].cov_trace);
      CHECK(ra.iterations[i].elite_mean_upper_cost == rb.iterations[i].elite_mean_upper_cost);
      CHECK(ra.iterations[i].x_max == rb.iterations[i].x_max);
    }
  }
}
