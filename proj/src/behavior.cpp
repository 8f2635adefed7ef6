#include "hwplan/behavior.hpp"

#include "hwplan/errors.hpp"

namespace hwplan {

Eigen::VectorXd BehaviorParams::to_vector() const {
  if (lateral.size() != velocity.size()) {
    throw InvalidArgument("lateral and velocity set-points must have the same segment count");
  }
  const Eigen::Index s = lateral.size();
  Eigen::VectorXd p(2 * s + (goal ? 2 : 0));
  p.head(s) = lateral;
  p.segment(s, s) = velocity;
  if (goal) p.tail(2) = *goal;
  return p;
}

BehaviorParams BehaviorParams::from_vector(const BehaviorLayout& layout,
                                           const Eigen::Ref<const Eigen::VectorXd>& p) {
  if (p.size() != layout.dim()) throw InvalidArgument("behavior vector does not match layout");
  BehaviorParams out;
  out.lateral = p.head(layout.segments);
  out.velocity = p.segment(layout.segments, layout.segments);
  if (layout.use_goal) out.goal = Eigen::Vector2d(p[layout.goal_offset()], p[layout.goal_offset() + 1]);
  return out;
}

}  // namespace hwplan
