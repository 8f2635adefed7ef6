#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hwplan/basis.hpp"
#include "hwplan/batch_qp.hpp"
#include "hwplan/behavior.hpp"
#include "hwplan/projection.hpp"

namespace hwplan {

/// Gaussian over the stacked behavioral vector.
struct SamplingDistribution {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct EliteRecord {
  int index = 0;  // position of the sample in its batch
  Eigen::VectorXd p;
  TrajectoryCoeffs xi;
  double upper_cost = 0.0;
  double residual = 0.0;
  double augmented_cost = 0.0;  // upper_cost + residual_weight * residual
};

struct BiLevelConfig {
  int batch_size = 1000;        // samples drawn per iteration
  int constraint_elite = 150;   // lowest-residual subset
  int elite = 50;               // lowest augmented cost among those
  int iterations = 5;
  double learning_rate = 0.7;
  double gamma = 0.9;
  double residual_weight = 1.0;
  double cov_floor = 1e-6;
  bool record_envelopes = false;
  std::uint64_t seed = 0;
  ProjectionConfig projection;

  void validate() const;
};

/// Sum over samples of (speed - v_max)^2.
double upper_cost(const TrajectoryCoeffs& xi, const PolynomialBasis& basis, double v_max);

struct EliteSelection {
  std::vector<int> constraint_elite;  // indices into the record list
  std::vector<int> elite;
};

/// Lowest `n` residuals, then the lowest `q` augmented costs among those.
/// Ties keep the lower record index first.
EliteSelection select_elites(const std::vector<EliteRecord>& records, int n, int q);

struct DistributionUpdate {
  SamplingDistribution dist;
  bool degenerate_weights = false;  // fell back to uniform weights
};

/// Exponentiated-cost weighted refit of mean and covariance, blended with the
/// previous distribution by `eta`. Weights are evaluated relative to the
/// lowest elite cost, which leaves the normalized sums unchanged.
DistributionUpdate update_distribution(const SamplingDistribution& dist,
                                       const std::vector<EliteRecord>& elite, double eta,
                                       double gamma, double cov_floor = 1e-6);

/// Supplies initial behavioral samples in place of the Gaussian draw on the
/// first iteration.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  /// Returns a layout.dim() x count matrix.
  virtual Eigen::MatrixXd draw(int count, const BehaviorLayout& layout) = 0;
};

/// Text-backed sample source. First line is a comma-separated header naming
/// the layout (y_d_1..y_d_S, v_d_1..v_d_S, optionally x_f, y_f); each further
/// line is one flattened p. Draws cycle through the records in file order.
class FileSampleSource : public SampleSource {
 public:
  explicit FileSampleSource(const std::string& path);
  explicit FileSampleSource(std::istream& in);

  const BehaviorLayout& layout() const { return layout_; }
  std::size_t size() const { return records_.size(); }
  Eigen::MatrixXd draw(int count, const BehaviorLayout& layout) override;

  static std::string header_for(const BehaviorLayout& layout);

 private:
  void parse(std::istream& in);

  BehaviorLayout layout_;
  std::vector<Eigen::VectorXd> records_;
  std::size_t cursor_ = 0;
};

/// Optional upper-level pull toward lane centers:
/// weight * sum over samples of (y - nearest center)^2.
struct LaneCentering {
  std::vector<double> centers;
  double weight = 0.0;
};

double lane_centering_cost(const TrajectoryCoeffs& xi, const PolynomialBasis& basis, const LaneCentering& lanes);

/// One lower-level problem instance as seen by the bi-level solver.
struct BiLevelProblem {
  InitialState b0;
  ConstraintSpec constraints;
  double v_max = 30.0;  // target speed of the upper-level cost
  LaneCentering lane_centering;
};

struct IterationDiagnostics {
  int iteration = 0;
  double elite_mean_upper_cost = 0.0;
  double elite_mean_augmented_cost = 0.0;
  double best_augmented_cost = 0.0;
  double cov_trace_sampled = 0.0;  // trace of the covariance samples were drawn from
  double cov_trace = 0.0;          // trace after the update
  double residual_min = 0.0;
  double residual_median = 0.0;
  double residual_p90 = 0.0;
  double residual_max = 0.0;
  double feasible_fraction = 0.0;  // residual <= projection tolerance
  bool degenerate_weights = false;
  // Per-sample-instant envelopes of the elite trajectories (record_envelopes).
  Eigen::VectorXd x_min, x_max, y_min, y_max;
};

struct BiLevelResult {
  // Lowest augmented cost seen over all iterations.
  BehaviorParams best_p;
  Eigen::VectorXd best_p_vector;
  TrajectoryCoeffs xi;
  double upper_cost = 0.0;
  double residual = 0.0;
  double augmented_cost = 0.0;
  SamplingDistribution final_distribution;
  std::vector<IterationDiagnostics> iterations;
  bool degraded = false;  // a later iteration failed; result is from an earlier one
};

/// Sample-based upper level over the batched lower level. Owns the RNG, the
/// factorized QP and one factorized projector per obstacle count.
class BiLevelSolver {
 public:
  BiLevelSolver(const PolynomialBasis& basis, const TrackingGains& gains,
                const BehaviorLayout& layout, const BiLevelConfig& config);

  const QPStructure& structure() const { return structure_; }
  const BehaviorLayout& layout() const { return layout_; }
  const BiLevelConfig& config() const { return config_; }

  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  BiLevelResult solve(const BiLevelProblem& problem, const SamplingDistribution& initial,
                      SampleSource* warm_start = nullptr);

  /// Lower level only: QP + projection for explicit parameter columns, with
  /// upper cost and residual filled in. Record i corresponds to column i.
  std::vector<EliteRecord> evaluate(const BiLevelProblem& problem, const Eigen::MatrixXd& params);

  /// Draws `count` samples from a Gaussian with this solver's RNG.
  Eigen::MatrixXd sample(const SamplingDistribution& dist, int count);

 private:
  const BatchProjector& projector_for(int num_obstacles);

  PolynomialBasis basis_;
  BehaviorLayout layout_;
  BiLevelConfig config_;
  QPStructure structure_;
  std::map<int, std::unique_ptr<BatchProjector>> projectors_;
  std::mt19937_64 rng_;
};

}  // namespace hwplan
