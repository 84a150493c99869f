#pragma once

// Simulated human: answers "which joystick input would move the robot from
// s to s*?" in the task's preferred axes, and corrupts its answers with
// multiplicative Gaussian label noise.

#include <array>
#include <optional>
#include <random>

#include "align_teleop/tasks.hpp"

namespace align_teleop {

using Input = std::array<double, 2>;

struct PreferenceSpec {
  Task task = Task::Plane;
  /// Per-axis gain for each mode; maps a full-deflection one-step displacement to |h| = 1.
  std::array<double, 2> reach_gain{};
  std::array<double, 2> pour_gain{};
  /// A displacement is rejected when its constraint part exceeds
  /// max(relative_tolerance * |intent|, absolute_tolerance), both measured in
  /// gain-normalized units.
  double relative_tolerance = 0.25;
  double absolute_tolerance = 0.02;
};

/// Gains of 1 / (scale * dt) for each intent coordinate.
PreferenceSpec preference_for(const TaskSpec& task);

/// h = clamp(G * intent(s, s*), [-1, 1]); nullopt when the displacement leaves
/// the task manifold beyond tolerance.
std::optional<Input> preferred_input(const PreferenceSpec& pref, const TaskSpec& task, const JointState& s,
                                     const JointState& s_star);

struct NoiseModel {
  double cv = 0.0;  // coefficient of variation sigma / mu
};

/// h_i + N(0, (cv |h_i|)^2), clamped to [-1, 1]. Always draws one normal per
/// component so the stream position does not depend on cv.
Input apply_noise(const Input& h, const NoiseModel& noise, std::mt19937_64& rng);

}  // namespace align_teleop
