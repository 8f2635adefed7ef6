#include "hwplan/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hwplan/errors.hpp"

namespace hwplan {

void BiLevelConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (!(elite >= 1 && elite <= constraint_elite && constraint_elite <= batch_size)) {
    throw InvalidArgument("need 1 <= elite <= constraint_elite <= batch_size");
  }
  if (iterations < 1) throw InvalidArgument("iterations must be at least 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw InvalidArgument("learning_rate must lie in (0, 1]");
  }
  if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
  if (!(residual_weight >= 0.0) || !(cov_floor >= 0.0)) {
    throw InvalidArgument("residual_weight and cov_floor must be non-negative");
  }
}

double upper_cost(const TrajectoryCoeffs& xi, const PolynomialBasis& basis, double v_max) {
  const Eigen::VectorXd xd = basis.Wdot * xi.cx;
  const Eigen::VectorXd yd = basis.Wdot * xi.cy;
  const Eigen::ArrayXd speed = (xd.array().square() + yd.array().square()).sqrt();
  return (speed - v_max).square().sum();
}

double lane_centering_cost(const TrajectoryCoeffs& xi, const PolynomialBasis& basis, const LaneCentering& lanes) {
  if (lanes.weight == 0.0 || lanes.centers.empty()) return 0.0;
  const Eigen::VectorXd y = basis.W * xi.cy;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (double c : lanes.centers) best = std::min(best, std::abs(y[i] - c));
    sum += best * best;
  }
  return lanes.weight * sum;
}

EliteSelection select_elites(const std::vector<EliteRecord>& records, int n, int q) {
  const int total = static_cast<int>(records.size());
  if (n < 0 || q < 0 || n > total || q > n) {
    throw InvalidArgument("elite sizes must satisfy q <= n <= record count");
  }
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return records[static_cast<std::size_t>(a)].residual < records[static_cast<std::size_t>(b)].residual;
  });
  EliteSelection sel;
  sel.constraint_elite.assign(order.begin(), order.begin() + n);

  std::vector<int> by_cost = sel.constraint_elite;
  std::sort(by_cost.begin(), by_cost.end());
  std::stable_sort(by_cost.begin(), by_cost.end(), [&](int a, int b) {
    return records[static_cast<std::size_t>(a)].augmented_cost <
           records[static_cast<std::size_t>(b)].augmented_cost;
  });
  sel.elite.assign(by_cost.begin(), by_cost.begin() + q);
  return sel;
}

DistributionUpdate update_distribution(const SamplingDistribution& dist,
                                       const std::vector<EliteRecord>& elite, double eta,
                                       double gamma, double cov_floor) {
  if (elite.empty()) throw InvalidArgument("elite set is empty");
  if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
  const Eigen::Index dim = dist.mean.size();
  for (const auto& e : elite) {
    if (e.p.size() != dim) throw InvalidArgument("elite parameter dimension differs from distribution");
  }

  DistributionUpdate out;
  const auto finite_cost = [](const EliteRecord& e) { return std::isfinite(e.augmented_cost); };
  double c_min = std::numeric_limits<double>::infinity();
  for (const auto& e : elite) {
    if (finite_cost(e)) c_min = std::min(c_min, e.augmented_cost);
  }
  std::vector<double> w(elite.size(), 0.0);
  double w_sum = 0.0;
  for (std::size_t j = 0; j < elite.size(); ++j) {
    if (finite_cost(elite[j])) w[j] = std::exp(-(elite[j].augmented_cost - c_min) / gamma);
    w_sum += w[j];
  }
  if (!(w_sum > 0.0) || !std::isfinite(w_sum)) {
    out.degenerate_weights = true;
    std::fill(w.begin(), w.end(), 1.0);
    w_sum = static_cast<double>(elite.size());
  }

  Eigen::VectorXd weighted_mean = Eigen::VectorXd::Zero(dim);
  for (std::size_t j = 0; j < elite.size(); ++j) weighted_mean += w[j] * elite[j].p;
  weighted_mean /= w_sum;
  out.dist.mean = (1.0 - eta) * dist.mean + eta * weighted_mean;

  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t j = 0; j < elite.size(); ++j) {
    const Eigen::VectorXd d = elite[j].p - out.dist.mean;
    scatter += w[j] * d * d.transpose();
  }
  scatter /= w_sum;
  scatter.diagonal().array() += cov_floor;
  Eigen::MatrixXd cov = (1.0 - eta) * dist.cov + eta * scatter;
  out.dist.cov = 0.5 * (cov + cov.transpose());
  return out;
}

FileSampleSource::FileSampleSource(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open warm-start file " + path);
  parse(in);
}

FileSampleSource::FileSampleSource(std::istream& in) { parse(in); }

std::string FileSampleSource::header_for(const BehaviorLayout& layout) {
  std::ostringstream os;
  for (int s = 0; s < layout.segments; ++s) os << (s ? "," : "") << "y_d_" << s + 1;
  for (int s = 0; s < layout.segments; ++s) os << ",v_d_" << s + 1;
  if (layout.use_goal) os << ",x_f,y_f";
  return os.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

void FileSampleSource::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("warm-start file is empty");
  const std::vector<std::string> names = split_csv(line);
  int lateral = 0, velocity = 0;
  bool goal = false;
  for (const auto& n : names) {
    if (n.rfind("y_d_", 0) == 0) {
      ++lateral;
    } else if (n.rfind("v_d_", 0) == 0) {
      ++velocity;
    } else if (n == "x_f" || n == "y_f") {
      goal = true;
    } else {
      throw InvalidArgument("unknown warm-start column '" + n + "'");
    }
  }
  if (lateral < 1 || lateral != velocity) {
    throw InvalidArgument("warm-start header needs matching y_d_* and v_d_* columns");
  }
  layout_ = BehaviorLayout{lateral, goal};
  if (header_for(layout_) != line.substr(0, line.find_last_not_of(" \t\r") + 1)) {
    throw InvalidArgument("warm-start header columns are not in layout order: " + line);
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (static_cast<int>(fields.size()) != layout_.dim()) {
      throw InvalidArgument("warm-start line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields");
    }
    Eigen::VectorXd p(layout_.dim());
    for (int i = 0; i < layout_.dim(); ++i) p[i] = std::stod(fields[static_cast<std::size_t>(i)]);
    if (!p.allFinite()) throw InvalidArgument("non-finite warm-start value on line " + std::to_string(line_no));
    records_.push_back(std::move(p));
  }
  if (records_.empty()) throw InvalidArgument("warm-start file has no records");
}

Eigen::MatrixXd FileSampleSource::draw(int count, const BehaviorLayout& layout) {
  if (layout.segments != layout_.segments || layout.use_goal != layout_.use_goal) {
    throw InvalidArgument("warm-start layout does not match the planner layout");
  }
  Eigen::MatrixXd out(layout_.dim(), count);
  for (int j = 0; j < count; ++j) {
    out.col(j) = records_[cursor_];
    cursor_ = (cursor_ + 1) % records_.size();
  }
  return out;
}

BiLevelSolver::BiLevelSolver(const PolynomialBasis& basis, const TrackingGains& gains,
                             const BehaviorLayout& layout, const BiLevelConfig& config)
    : basis_(basis),
      layout_(layout),
      config_(config),
      structure_(basis, gains, layout.use_goal),
      rng_(config.seed) {
  config_.validate();
}

const BatchProjector& BiLevelSolver::projector_for(int num_obstacles) {
  auto it = projectors_.find(num_obstacles);
  if (it == projectors_.end()) {
    it = projectors_
             .emplace(num_obstacles,
                      std::make_unique<BatchProjector>(structure_, num_obstacles, config_.projection))
             .first;
  }
  return *it->second;
}

Eigen::MatrixXd BiLevelSolver::sample(const SamplingDistribution& dist, int count) {
  const Eigen::Index dim = dist.mean.size();
  Eigen::LLT<Eigen::MatrixXd> llt(dist.cov);
  Eigen::MatrixXd chol;
  if (llt.info() == Eigen::Success) {
    chol = llt.matrixL();
  } else {
    // Clip negative eigenvalues of a numerically indefinite covariance.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dist.cov);
    chol = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(dim, count);
  for (int j = 0; j < count; ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) z(i, j) = normal(rng_);
  }
  Eigen::MatrixXd out = chol * z;
  out.colwise() += dist.mean;
  return out;
}

std::vector<EliteRecord> BiLevelSolver::evaluate(const BiLevelProblem& problem,
                                                 const Eigen::MatrixXd& params) {
  const QPRightHandSideBatch rhs = assemble_rhs(structure_, layout_, params, problem.b0);
  const QPSolutionBatch qp = solve_batch(structure_, rhs);
  const BatchProjector& projector = projector_for(static_cast<int>(problem.constraints.obstacles.size()));
  const std::vector<ProjectionReport> reports = projector.project(qp.xi, rhs.b, problem.constraints);

  std::vector<EliteRecord> records(reports.size());
  for (std::size_t j = 0; j < reports.size(); ++j) {
    EliteRecord& r = records[j];
    r.index = static_cast<int>(j);
    r.p = params.col(static_cast<Eigen::Index>(j));
    r.xi = reports[j].xi;
    r.upper_cost = upper_cost(r.xi, basis_, problem.v_max) + lane_centering_cost(r.xi, basis_, problem.lane_centering);
    r.residual = reports[j].residual;
    r.augmented_cost = r.upper_cost + config_.residual_weight * r.residual;
  }
  return records;
}

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const std::size_t k = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(k, v.size() - 1)];
}

}  // namespace

BiLevelResult BiLevelSolver::solve(const BiLevelProblem& problem,
                                   const SamplingDistribution& initial, SampleSource* warm_start) {
  if (initial.mean.size() != layout_.dim() || initial.cov.rows() != layout_.dim() ||
      initial.cov.cols() != layout_.dim()) {
    throw InvalidArgument("initial distribution does not match behavior layout");
  }
  problem.constraints.validate(basis_.num_samples());

  BiLevelResult result;
  SamplingDistribution dist = initial;
  bool have_result = false;
  for (int l = 1; l <= config_.iterations; ++l) {
    try {
      const Eigen::MatrixXd params = (l == 1 && warm_start)
                                         ? warm_start->draw(config_.batch_size, layout_)
                                         : sample(dist, config_.batch_size);
      std::vector<EliteRecord> records = evaluate(problem, params);
      const EliteSelection sel = select_elites(records, config_.constraint_elite, config_.elite);

      std::vector<EliteRecord> elite;
      elite.reserve(sel.elite.size());
      for (int idx : sel.elite) elite.push_back(records[static_cast<std::size_t>(idx)]);
      const DistributionUpdate upd =
          update_distribution(dist, elite, config_.learning_rate, config_.gamma, config_.cov_floor);

      IterationDiagnostics d;
      d.iteration = l;
      d.cov_trace_sampled = dist.cov.trace();
      d.cov_trace = upd.dist.cov.trace();
      d.degenerate_weights = upd.degenerate_weights;
      for (const auto& e : elite) {
        d.elite_mean_upper_cost += e.upper_cost;
        d.elite_mean_augmented_cost += e.augmented_cost;
      }
      d.elite_mean_upper_cost /= static_cast<double>(elite.size());
      d.elite_mean_augmented_cost /= static_cast<double>(elite.size());
      d.best_augmented_cost = elite.front().augmented_cost;
      std::vector<double> res(records.size());
      std::size_t feasible = 0;
      for (std::size_t j = 0; j < records.size(); ++j) {
        res[j] = records[j].residual;
        if (res[j] <= config_.projection.tolerance) ++feasible;
      }
      d.residual_min = *std::min_element(res.begin(), res.end());
      d.residual_max = *std::max_element(res.begin(), res.end());
      d.residual_median = quantile(res, 0.5);
      d.residual_p90 = quantile(res, 0.9);
      d.feasible_fraction = static_cast<double>(feasible) / static_cast<double>(res.size());
      if (config_.record_envelopes) {
        const int m = basis_.num_samples();
        d.x_min = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
        d.y_min = d.x_min;
        d.x_max = -d.x_min;
        d.y_max = -d.x_min;
        for (const auto& e : elite) {
          const Eigen::VectorXd x = basis_.W * e.xi.cx;
          const Eigen::VectorXd y = basis_.W * e.xi.cy;
          d.x_min = d.x_min.cwiseMin(x);
          d.x_max = d.x_max.cwiseMax(x);
          d.y_min = d.y_min.cwiseMin(y);
          d.y_max = d.y_max.cwiseMax(y);
        }
      }
      result.iterations.push_back(std::move(d));

      // Best sample over all iterations, not just the last one.
      const EliteRecord& best = elite.front();
      if (!have_result || best.augmented_cost < result.augmented_cost) {
        result.best_p_vector = best.p;
        result.best_p = BehaviorParams::from_vector(layout_, best.p);
        result.xi = best.xi;
        result.upper_cost = best.upper_cost;
        result.residual = best.residual;
        result.augmented_cost = best.augmented_cost;
      }
      dist = upd.dist;
      result.final_distribution = dist;
      have_result = true;
    } catch (const NumericalFailure&) {
      if (!have_result) throw;
      result.degraded = true;
      break;
    }
  }
  return result;
}

}  // namespace hwplan
