#include "align_teleop/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace align_teleop {

PreferenceSpec preference_for(const TaskSpec& task) {
  PreferenceSpec p;
  p.task = task.task;
  const double dt = task.arm.dt;
  const auto reach = task.intent_scale(TaskMode::Reach);
  const auto pour = task.intent_scale(TaskMode::Pour);
  p.reach_gain = {1.0 / (reach[0] * dt), 1.0 / (reach[1] * dt)};
  p.pour_gain = {1.0 / (pour[0] * dt), 1.0 / (pour[1] * dt)};
  return p;
}

std::optional<Input> preferred_input(const PreferenceSpec& pref, const TaskSpec& task, const JointState& s,
                                     const JointState& s_star) {
  if (pref.task != task.task) throw InvalidInput("preference spec and task disagree");
  const TaskMode mode = task.mode(s);
  const auto gain = mode == TaskMode::Reach ? pref.reach_gain : pref.pour_gain;
  const auto d = task_displacement(task, s, s_star);
  const double u0 = gain[0] * d.intent[0];
  const double u1 = gain[1] * d.intent[1];

  // Constraint coordinates are normalized with the gain of the matching kind
  // of motion: positions by the linear gain, roll by the rotational gain.
  double off = 0.0;
  for (std::size_t i = 0; i < d.constraint.size(); ++i) {
    double g = pref.reach_gain[0];
    if (task.task == Task::ReachPour && mode == TaskMode::Reach && i == 1) g = pref.pour_gain[1];
    off = std::max(off, std::abs(g * d.constraint[i]));
  }
  if (off > std::max(pref.relative_tolerance * std::hypot(u0, u1), pref.absolute_tolerance)) return std::nullopt;
  return Input{std::clamp(u0, -1.0, 1.0), std::clamp(u1, -1.0, 1.0)};
}

Input apply_noise(const Input& h, const NoiseModel& noise, std::mt19937_64& rng) {
  if (noise.cv < 0.0) throw InvalidInput("coefficient of variation must be nonnegative");
  std::normal_distribution<double> std_normal(0.0, 1.0);
  Input out{};
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double eps = std_normal(rng);
    out[i] = std::clamp(h[i] + eps * noise.cv * std::abs(h[i]), -1.0, 1.0);
  }
  return out;
}

}  // namespace align_teleop
