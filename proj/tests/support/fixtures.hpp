#pragma once

#include <align_teleop/alignment.hpp>
#include <align_teleop/controller.hpp>
#include <align_teleop/datagen.hpp>
#include <align_teleop/kinematics.hpp>
#include <align_teleop/random.hpp>
#include <align_teleop/tasks.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <random>

namespace align_teleop::fx {

/// Planar arm: all axes z, unit links along x, wide limits.
inline ArmModel planar_arm(std::size_t links = 3) {
  ArmModel arm;
  for (std::size_t i = 0; i < links; ++i) arm.joints.push_back(Joint{{0, 0, 1}, {1, 0, 0}, -M_PI, M_PI});
  arm.dt = 0.1;
  arm.a_max = 1.0;
  return arm;
}

/// Independent FK: product of 4x4 homogeneous transforms Rot(axis, q) * Trans(offset).
inline Eigen::Matrix4d fk_homogeneous(const ArmModel& arm, const std::vector<double>& q) {
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  for (std::size_t i = 0; i < arm.dof(); ++i) {
    const auto& j = arm.joints[i];
    Eigen::Matrix4d R = Eigen::Matrix4d::Identity();
    R.topLeftCorner<3, 3>() = Eigen::AngleAxisd(q[i], Eigen::Vector3d(j.axis[0], j.axis[1], j.axis[2])).matrix();
    Eigen::Matrix4d P = Eigen::Matrix4d::Identity();
    P.topRightCorner<3, 1>() = Eigen::Vector3d(j.offset[0], j.offset[1], j.offset[2]);
    T = T * R * P;
  }
  return T;
}

inline JointState random_state(const TaskSpec& spec, std::uint64_t seed) {
  auto rng = make_rng(seed, "fixture-state");
  return sample_valid_state(spec, rng);
}

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Small autoencoder controller trained briefly: enough to be nonlinear and
/// non-trivial, cheap enough for unit tests.
inline const LatentController& small_cae() {
  static const LatentController ctrl = [] {
    const TaskSpec spec = default_task(Task::Plane);
    auto rng = make_rng(3, "demos");
    const auto demos = generate_demonstrations(spec, 40, rng);
    CaeConfig cc;
    cc.hidden = 16;
    cc.epochs = 150;
    auto crng = make_rng(3, "cae");
    return train_cae(spec, demo_pairs(demos, 300), cc, crng).controller;
  }();
  return ctrl;
}

}  // namespace align_teleop::fx
