#include "align_teleop/tasks.hpp"

#include <algorithm>

namespace align_teleop {

std::string to_string(Task t) {
  switch (t) {
    case Task::Plane:
      return "plane";
    case Task::Pour:
      return "pour";
    case Task::ReachPour:
      return "reach_pour";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "plane" || s == "Plane") return Task::Plane;
  if (s == "pour" || s == "Pour") return Task::Pour;
  if (s == "reach_pour" || s == "ReachPour" || s == "reach-pour") return Task::ReachPour;
  throw InvalidInput("unknown task '" + s + "' (expected plane, pour or reach_pour)");
}

TaskMode TaskSpec::mode(const JointState& s) const {
  switch (task) {
    case Task::Plane:
      return TaskMode::Reach;
    case Task::Pour:
      return TaskMode::Pour;
    case Task::ReachPour:
      return s.grasp ? TaskMode::Pour : TaskMode::Reach;
  }
  return TaskMode::Reach;
}

std::array<double, 2> TaskSpec::intent_scale(TaskMode m) const {
  return m == TaskMode::Reach ? std::array{v_max, v_max} : std::array{v_max, w_max};
}

std::array<double, 2> TaskSpec::sampling_interval(std::size_t i) const {
  const Joint& j = arm.joints.at(i);
  const double margin = 0.1 * (j.upper - j.lower);
  const auto& box = sample_box.at(i);
  return {std::max(box[0], j.lower + margin), std::min(box[1], j.upper - margin)};
}

bool TaskSpec::in_sampling_region(const JointState& s) const {
  if (s.angles.size() != arm.dof()) return false;
  for (std::size_t i = 0; i < arm.dof(); ++i) {
    const auto iv = sampling_interval(i);
    if (s.angles[i] < iv[0] || s.angles[i] > iv[1]) return false;
  }
  return true;
}

namespace {

Joint revolute(Vec3 axis, Vec3 offset, double lo, double hi) { return Joint{axis, offset, lo, hi}; }

}  // namespace

TaskSpec default_task(Task t) {
  TaskSpec spec;
  spec.task = t;
  spec.arm.dt = 0.1;
  spec.arm.a_max = 1.0;
  const Vec3 x{1.0, 0.0, 0.0};
  const Vec3 y{0.0, 1.0, 0.0};
  const Vec3 z{0.0, 0.0, 1.0};
  switch (t) {
    case Task::Plane:
      spec.arm.joints = {revolute(z, {1.0, 0.0, 0.0}, -M_PI, M_PI), revolute(z, {1.0, 0.0, 0.0}, -2.8, 2.8),
                         revolute(z, {1.0, 0.0, 0.0}, -2.8, 2.8)};
      spec.sample_box = {{-1.0, 1.0}, {0.3, 1.8}, {0.3, 1.8}};
      spec.lambda_rot = 0.0;
      spec.labeled_budget = 10;
      spec.unlabeled_budget = 1000;
      spec.session_queries = 7;
      break;
    case Task::Pour:
      spec.arm.joints = {revolute(y, {1.0, 0.0, 0.0}, -2.0, 1.5), revolute(y, {1.0, 0.0, 0.0}, -0.5, 2.6),
                         revolute(x, {0.3, 0.0, 0.0}, -2.5, 2.5)};
      spec.sample_box = {{-0.9, 0.3}, {0.4, 1.6}, {-1.0, 1.0}};
      spec.lambda_rot = 1.0;
      spec.labeled_budget = 10;
      spec.unlabeled_budget = 1000;
      spec.session_queries = 10;
      break;
    case Task::ReachPour:
      spec.arm.joints = {revolute(z, {0.0, 0.0, 0.0}, -M_PI, M_PI), revolute(y, {1.0, 0.0, 0.0}, -2.0, 1.5),
                         revolute(y, {1.0, 0.0, 0.0}, -0.5, 2.6), revolute(x, {0.3, 0.0, 0.0}, -2.5, 2.5)};
      spec.sample_box = {{-0.8, 0.8}, {-0.9, 0.3}, {0.4, 1.6}, {-1.0, 1.0}};
      spec.uses_grasp = true;
      spec.lambda_rot = 1.0;
      spec.labeled_budget = 20;
      spec.unlabeled_budget = 2000;
      spec.session_queries = 30;
      break;
  }
  spec.arm.validate();
  return spec;
}

std::vector<double> conditioning(const TaskSpec& spec, const JointState& s) {
  if (s.angles.size() != spec.arm.dof()) throw DimensionMismatch("state", spec.arm.dof(), s.angles.size());
  std::vector<double> c(s.angles);
  if (spec.uses_grasp) c.push_back(s.grasp ? 1.0 : 0.0);
  return c;
}

TaskDisplacement task_displacement(const TaskSpec& spec, const JointState& before, const JointState& after) {
  const Pose a = forward_kinematics(spec.arm, before);
  const Pose b = forward_kinematics(spec.arm, after);
  const double dx = b.position[0] - a.position[0];
  const double dy = b.position[1] - a.position[1];
  const double dz = b.position[2] - a.position[2];
  const double roll = local_rotation_vector(a.orientation, b.orientation)[0];
  TaskDisplacement d;
  if (spec.mode(before) == TaskMode::Reach) {
    d.intent = {dx, dy};
    if (spec.task == Task::ReachPour) d.constraint = {dz, roll};
  } else {
    d.intent = {dz, roll};
    d.constraint = {dx};
    if (spec.task == Task::ReachPour) d.constraint.push_back(dy);
  }
  return d;
}

}  // namespace align_teleop
