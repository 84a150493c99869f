#include "align_teleop/kinematics.hpp"

#include <Eigen/Geometry>

#include <algorithm>

#include "json_io.hpp"

namespace align_teleop {

void ArmModel::validate() const {
  if (joints.empty()) throw InvalidInput("arm model needs at least one joint");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto& a = joints[i].axis;
    const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    if (std::abs(n - 1.0) > 1e-9) throw InvalidInput("joint " + std::to_string(i) + ": axis is not unit length");
    if (!(joints[i].lower < joints[i].upper)) {
      throw InvalidInput("joint " + std::to_string(i) + ": lower limit must be below upper limit");
    }
  }
  if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
  if (!(a_max > 0.0)) throw InvalidInput("a_max must be positive");
}

double ArmModel::reach() const {
  double r = 0.0;
  for (const auto& j : joints) {
    r += std::sqrt(j.offset[0] * j.offset[0] + j.offset[1] * j.offset[1] + j.offset[2] * j.offset[2]);
  }
  return r;
}

JointState step(const ArmModel& model, const JointState& s, const JointVelocity& a) {
  JointState out;
  out.angles = step<double>(model, s.angles, a.rates);
  out.grasp = s.grasp;
  return out;
}

Pose forward_kinematics(const ArmModel& model, const JointState& s) {
  return forward_kinematics<double>(model, s.angles);
}

Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian(const ArmModel& model, const JointState& s) {
  const auto cols = jacobian<double>(model, s.angles);
  Eigen::Matrix<double, 6, Eigen::Dynamic> J(6, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    for (int r = 0; r < 6; ++r) J(r, static_cast<Eigen::Index>(i)) = cols[i][static_cast<std::size_t>(r)];
  }
  return J;
}

namespace {

void check_unit(const std::array<double, 4>& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (std::abs(n - 1.0) > 1e-6) throw InvalidInput("rotation_distance: quaternion is not unit length");
}

}  // namespace

double rotation_distance(const std::array<double, 4>& q1, const std::array<double, 4>& q2) {
  check_unit(q1);
  check_unit(q2);
  const double d = std::abs(q1[0] * q2[0] + q1[1] * q2[1] + q1[2] * q2[2] + q1[3] * q2[3]);
  return 2.0 * std::acos(std::min(d, 1.0));
}

ad::Var rotation_distance(const std::array<ad::Var, 4>& q1, const std::array<ad::Var, 4>& q2) {
  std::array<double, 4> v1{};
  std::array<double, 4> v2{};
  for (std::size_t i = 0; i < 4; ++i) {
    v1[i] = q1[i].value();
    v2[i] = q2[i].value();
  }
  check_unit(v1);
  check_unit(v2);
  ad::Tape& tape = *q1[0].tape();
  const ad::Var d = tape.dot(q1, q2);
  return 2.0 * ad::acos(ad::abs(d));
}

PoseDelta pose_delta(const ArmModel& model, const JointState& before, const JointState& after) {
  const Pose a = forward_kinematics(model, before);
  const Pose b = forward_kinematics(model, after);
  return {{b.position[0] - a.position[0], b.position[1] - a.position[1], b.position[2] - a.position[2]},
          rotation_distance(a.orientation, b.orientation)};
}

Eigen::Matrix3d rotation_matrix(const std::array<double, 4>& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

Vec3 local_rotation_vector(const std::array<double, 4>& q_from, const std::array<double, 4>& q_to) {
  const Eigen::Quaterniond a(q_from[0], q_from[1], q_from[2], q_from[3]);
  const Eigen::Quaterniond b(q_to[0], q_to[1], q_to[2], q_to[3]);
  Eigen::Quaterniond rel = a.conjugate() * b;
  if (rel.w() < 0.0) rel.coeffs() *= -1.0;
  const Eigen::AngleAxisd aa(rel);
  const Eigen::Vector3d v = aa.axis() * aa.angle();
  return {v.x(), v.y(), v.z()};
}

std::string arm_to_json(const ArmModel& model) { return io::arm_json(model).dump(2); }

ArmModel arm_from_json(const std::string& text) { return io::arm_from(io::parse(text, "arm config")); }

}  // namespace align_teleop
