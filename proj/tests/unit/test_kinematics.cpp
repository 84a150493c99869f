#include <align_teleop/error.hpp>
#include <align_teleop/kinematics.hpp>

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "fixtures.hpp"

using namespace align_teleop;
using fx::fk_homogeneous;
using fx::planar_arm;

TEST(Step, IntegratesRates) {
  const ArmModel arm = planar_arm();
  const JointState s{{0, 0, 0}};
  const auto out = step(arm, s, JointVelocity{{1, -2, 0.5}});
  EXPECT_DOUBLE_EQ(out.angles[0], 0.1);
  EXPECT_DOUBLE_EQ(out.angles[1], -0.2);
  EXPECT_DOUBLE_EQ(out.angles[2], 0.05);
}

TEST(Step, ZeroActionKeepsState) {
  const ArmModel arm = planar_arm();
  const JointState s{{0.3, -0.2, 1.0}, true};
  EXPECT_EQ(step(arm, s, JointVelocity{{0, 0, 0}}), s);
}

TEST(Step, ClampsAtUpperLimit) {
  const ArmModel arm = planar_arm();
  const JointState s{{M_PI, 0, 0}};
  EXPECT_EQ(step(arm, s, JointVelocity{{1, 0, 0}}).angles[0], M_PI);
}

TEST(Step, RejectsWrongDimensions) {
  const ArmModel arm = planar_arm();
  EXPECT_THROW(step(arm, JointState{{0, 0}}, JointVelocity{{0, 0, 0}}), DimensionMismatch);
}

TEST(ForwardKinematics, StraightArm) {
  const Pose p = forward_kinematics(planar_arm(), JointState{{0, 0, 0}});
  EXPECT_NEAR(p.position[0], 3.0, 1e-15);
  EXPECT_NEAR(p.position[1], 0.0, 1e-15);
  EXPECT_NEAR(p.orientation[0], 1.0, 1e-15);
}

TEST(ForwardKinematics, RotatedStraightArm) {
  const Pose p = forward_kinematics(planar_arm(), JointState{{M_PI / 2, 0, 0}});
  EXPECT_NEAR(p.position[0], 0.0, 1e-12);
  EXPECT_NEAR(p.position[1], 3.0, 1e-12);
  EXPECT_NEAR(rotation_distance(p.orientation, {std::cos(M_PI / 4), 0, 0, std::sin(M_PI / 4)}), 0.0, 1e-7);
}

TEST(ForwardKinematics, MatchesHomogeneousMatrixOracle) {
  for (Task task : {Task::Plane, Task::Pour, Task::ReachPour}) {
    const TaskSpec spec = default_task(task);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      const auto q = fx::uniform(spec.arm.dof(), -2.0, 2.0, rng);
      const Pose p = forward_kinematics(spec.arm, JointState{q});
      const Eigen::Matrix4d T = fk_homogeneous(spec.arm, q);
      for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.position[i], T(i, 3), 1e-10);
      const Eigen::Matrix3d R = rotation_matrix(p.orientation);
      EXPECT_LT((R - T.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_GE(p.orientation[0], 0.0);
    }
  }
}

TEST(RotationDistance, Properties) {
  const std::array<double, 4> id{1, 0, 0, 0};
  const std::array<double, 4> z90{std::cos(M_PI / 4), 0, 0, std::sin(M_PI / 4)};
  const std::array<double, 4> neg{-z90[0], -z90[1], -z90[2], -z90[3]};
  EXPECT_EQ(rotation_distance(id, id), 0.0);
  EXPECT_NEAR(rotation_distance(z90, neg), 0.0, 1e-7);
  EXPECT_NEAR(rotation_distance(id, z90), M_PI / 2, 1e-12);
  EXPECT_THROW(rotation_distance(id, {2, 0, 0, 0}), InvalidInput);
}

TEST(PoseDelta, LastJointChord) {
  const ArmModel arm = planar_arm();
  const auto d = pose_delta(arm, JointState{{0, 0, 0}}, JointState{{0, 0, 0.1}});
  const double mag = std::hypot(d.position[0], d.position[1], d.position[2]);
  EXPECT_NEAR(d.rotation, 0.1, 1e-7);
  EXPECT_NEAR(mag, 2.0 * std::sin(0.05), 1e-12);
}

TEST(PoseDelta, IdenticalStates) {
  const JointState s{{0.2, 0.4, -0.3}};
  const auto d = pose_delta(planar_arm(), s, s);
  EXPECT_EQ(d.position[0], 0.0);
  EXPECT_EQ(d.rotation, 0.0);
}

TEST(Jacobian, SingleJointAtOrigin) {
  ArmModel arm = planar_arm(1);
  const auto J = jacobian(arm, JointState{{0.0}});
  EXPECT_NEAR(J(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(J(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(J(5, 0), 1.0, 1e-15);
}

TEST(Jacobian, StraightPlanarArmPattern) {
  const auto J = jacobian(planar_arm(), JointState{{0, 0, 0}});
  // Joint i sits at x = i; the tip is at x = 3.
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(J(0, i), 0.0, 1e-15);
    EXPECT_NEAR(J(1, i), 3.0 - i, 1e-15);
  }
}

TEST(Jacobian, MatchesFiniteDifferencesOfForwardKinematics) {
  for (Task task : {Task::Plane, Task::Pour, Task::ReachPour}) {
    const TaskSpec spec = default_task(task);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const auto q = fx::uniform(spec.arm.dof(), -1.5, 1.5, rng);
      const auto J = jacobian(spec.arm, JointState{q});
      for (std::size_t i = 0; i < q.size(); ++i) {
        auto qp = q, qm = q;
        qp[i] += 1e-6;
        qm[i] -= 1e-6;
        const Pose pp = forward_kinematics(spec.arm, JointState{qp});
        const Pose pm = forward_kinematics(spec.arm, JointState{qm});
        for (int r = 0; r < 3; ++r) {
          EXPECT_NEAR(J(r, static_cast<int>(i)), (pp.position[r] - pm.position[r]) / 2e-6, 1e-5);
        }
        // Angular: rotation vector of R(q-)^T R(q+) in the world frame.
        const Eigen::Matrix3d Rp = rotation_matrix(pp.orientation);
        const Eigen::Matrix3d Rm = rotation_matrix(pm.orientation);
        const Eigen::AngleAxisd aa(Rp * Rm.transpose());
        const Eigen::Vector3d w = aa.axis() * aa.angle() / 2e-6;
        for (int r = 0; r < 3; ++r) EXPECT_NEAR(J(3 + r, static_cast<int>(i)), w[r], 1e-5);
      }
    }
  }
}

TEST(Arm, JsonRoundTrip) {
  const ArmModel arm = default_task(Task::Pour).arm;
  const ArmModel back = arm_from_json(arm_to_json(arm));
  EXPECT_EQ(arm_to_json(back), arm_to_json(arm));
}

TEST(Arm, ValidationRejectsBadModels) {
  ArmModel arm = planar_arm();
  arm.joints[1].lower = 1.0;
  arm.joints[1].upper = 0.0;
  EXPECT_THROW(arm.validate(), InvalidInput);
  ArmModel empty;
  EXPECT_THROW(empty.validate(), InvalidInput);
  ArmModel bad_axis = planar_arm();
  bad_axis.joints[0].axis = {0, 0, 2};
  EXPECT_THROW(bad_axis.validate(), InvalidInput);
}

TEST(Arm, RejectsForeignFormat) {
  EXPECT_THROW(arm_from_json(R"({"format":"something-else","version":1})"), IncompatibleFile);
  EXPECT_THROW(arm_from_json(R"({"format":"align-teleop/arm","version":99})"), IncompatibleFile);
}
