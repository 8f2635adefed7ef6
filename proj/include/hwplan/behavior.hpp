#pragma once

#include <optional>

#include <Eigen/Dense>

namespace hwplan {

/// Layout of the stacked behavioral vector p = [y_d(1..S), v_d(1..S), (x_f, y_f)].
struct BehaviorLayout {
  int segments = 4;
  bool use_goal = false;

  int dim() const { return 2 * segments + (use_goal ? 2 : 0); }
  int lateral_offset(int seg) const { return seg; }
  int velocity_offset(int seg) const { return segments + seg; }
  int goal_offset() const { return 2 * segments; }
};

/// Lateral-offset and velocity set-points, one pair per horizon segment.
struct BehaviorParams {
  Eigen::VectorXd lateral;   // m
  Eigen::VectorXd velocity;  // m/s
  std::optional<Eigen::Vector2d> goal;

  Eigen::VectorXd to_vector() const;
  static BehaviorParams from_vector(const BehaviorLayout& layout,
                                    const Eigen::Ref<const Eigen::VectorXd>& p);
};

/// Segment that sample `i` of `num_samples` falls in when the horizon is cut
/// into `segments` equal contiguous blocks.
inline int segment_of_sample(int i, int num_samples, int segments) {
  return static_cast<int>((static_cast<long>(i) * segments) / num_samples);
}

}  // namespace hwplan
