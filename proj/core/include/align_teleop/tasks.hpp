#pragma once

// Task definitions: the arm used for each simulated task, the state region
// data is drawn from, and the task-space coordinates the simulated human
// (and the scripted demonstrator) think in.
//
// Every task has two intent coordinates, the ones a 2-axis joystick steers,
// plus zero or more constraint coordinates that should stay still:
//   Plane      intent (x, y)           constraints none
//   Pour       intent (z, roll)        constraints (x)
//   ReachPour  reaching: as Plane      constraints (z, roll)
//              holding:  as Pour       constraints (x, y)
// "roll" is rotation about the end effector's local x axis.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "align_teleop/kinematics.hpp"

namespace align_teleop {

enum class Task { Plane, Pour, ReachPour };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

/// Which pair of intent coordinates is active.
enum class TaskMode { Reach, Pour };

struct TaskSpec {
  Task task = Task::Plane;
  ArmModel arm;
  /// Per-joint box data is sampled from, before the 10% limit margin is applied.
  std::vector<std::array<double, 2>> sample_box;
  double v_max = 0.5;  // EE speed of a full joystick deflection, m/s
  double w_max = 0.5;  // roll rate of a full joystick deflection, rad/s
  bool uses_grasp = false;
  double lambda_rot = 0.0;
  std::size_t labeled_budget = 10;
  std::size_t unlabeled_budget = 1000;
  std::size_t session_queries = 7;

  TaskMode mode(const JointState& s) const;
  /// Length of the conditioning vector fed to networks: joint angles plus the grasp bit if used.
  std::size_t conditioning_size() const { return arm.dof() + (uses_grasp ? 1 : 0); }
  /// Speed scale of each intent coordinate (v_max or w_max).
  std::array<double, 2> intent_scale(TaskMode m) const;
  /// Sampling interval for joint i: sample_box intersected with the limits shrunk by 10% of their range.
  std::array<double, 2> sampling_interval(std::size_t i) const;
  bool in_sampling_region(const JointState& s) const;
};

TaskSpec default_task(Task t);

/// Network conditioning features for a state.
std::vector<double> conditioning(const TaskSpec& spec, const JointState& s);

/// Intent and constraint coordinates of a finite displacement between two states.
struct TaskDisplacement {
  std::array<double, 2> intent;
  std::vector<double> constraint;
};
TaskDisplacement task_displacement(const TaskSpec& spec, const JointState& before, const JointState& after);

/// Rows of the task Jacobian: 2 intent rows followed by the constraint rows,
/// each a length-n row vector.
template <class T>
std::vector<std::vector<T>> task_jacobian(const TaskSpec& spec, std::span<const T> angles, TaskMode mode) {
  const auto frames = kin_detail::chain<T>(spec.arm, angles);
  const auto cols = jacobian<T>(spec.arm, angles);
  const std::size_t n = cols.size();
  // Local x axis of the end effector, for the roll row.
  const std::array<double, 3> ex{1.0, 0.0, 0.0};
  const auto xee = kin_detail::quat_rotate(frames.tip.orientation, ex);

  auto linear = [&](int axis) {
    std::vector<T> row;
    row.reserve(n);
    for (const auto& c : cols) row.push_back(c[static_cast<std::size_t>(axis)]);
    return row;
  };
  auto roll = [&]() {
    std::vector<T> row;
    row.reserve(n);
    for (const auto& c : cols) row.push_back(c[3] * xee[0] + c[4] * xee[1] + c[5] * xee[2]);
    return row;
  };

  std::vector<std::vector<T>> rows;
  if (mode == TaskMode::Reach) {
    rows.push_back(linear(0));
    rows.push_back(linear(1));
    if (spec.task == Task::ReachPour) {
      rows.push_back(linear(2));
      rows.push_back(roll());
    }
  } else {
    rows.push_back(linear(2));
    rows.push_back(roll());
    rows.push_back(linear(0));
    if (spec.task == Task::ReachPour) rows.push_back(linear(1));
  }
  return rows;
}

/// Damped least squares: a = J^T (J J^T + damping^2 I)^-1 v.
template <class T>
std::vector<T> damped_least_squares(const std::vector<std::vector<T>>& J, std::span<const T> v, double damping) {
  const std::size_t k = J.size();
  if (v.size() != k) throw DimensionMismatch("dls target", k, v.size());
  const std::size_t n = J.front().size();
  // A = J J^T + d^2 I (symmetric positive definite), solved by Cholesky.
  std::vector<std::vector<T>> L(k);
  std::vector<std::vector<T>> A(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      T acc = J[i][0] * J[j][0];
      for (std::size_t c = 1; c < n; ++c) acc = acc + J[i][c] * J[j][c];
      if (i == j) acc = acc + damping * damping;
      A[i].push_back(acc);
    }
  }
  using std::sqrt;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      T sum = A[i][j];
      for (std::size_t p = 0; p < j; ++p) sum = sum - L[i][p] * L[j][p];
      if (i == j) {
        L[i].push_back(sqrt(sum));
      } else {
        L[i].push_back(sum / L[j][j]);
      }
    }
  }
  std::vector<T> y;
  for (std::size_t i = 0; i < k; ++i) {
    T sum = v[i];
    for (std::size_t p = 0; p < i; ++p) sum = sum - L[i][p] * y[p];
    y.push_back(sum / L[i][i]);
  }
  std::vector<T> x(y);
  for (std::size_t ii = k; ii-- > 0;) {
    T sum = y[ii];
    for (std::size_t p = ii + 1; p < k; ++p) sum = sum - L[p][ii] * x[p];
    x[ii] = sum / L[ii][ii];
  }
  std::vector<T> a;
  a.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    T acc = J[0][c] * x[0];
    for (std::size_t r = 1; r < k; ++r) acc = acc + J[r][c] * x[r];
    a.push_back(acc);
  }
  return a;
}

/// Uniformly rescales a so that max |a_i| <= bound (direction preserved).
template <class T>
std::vector<T> clip_uniform(std::vector<T> a, double bound) {
  double worst = 0.0;
  for (const auto& x : a) worst = std::max(worst, std::abs(ad::value_of(x)));
  if (worst > bound) {
    // The scale depends on the largest component, so it stays differentiable.
    std::size_t arg = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::abs(ad::value_of(a[i])) == worst) {
        arg = i;
        break;
      }
    }
    using std::abs;
    const T scale = bound / abs(a[arg]);
    for (auto& x : a) x = x * scale;
  }
  return a;
}

}  // namespace align_teleop
