#pragma once

// Serial revolute arm: transition dynamics, forward kinematics, geometric
// Jacobian and rotation metrics.
//
// Joint i rotates by angle_i about its axis (expressed in the frame of the
// previous link) and is followed by a fixed link offset expressed in the
// rotated frame:  T = prod_i Rot(axis_i, angle_i) * Trans(offset_i).
// The kinematic routines are templates over the scalar type so the same code
// runs on doubles and on autodiff tape variables.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "align_teleop/autodiff.hpp"
#include "align_teleop/error.hpp"

namespace align_teleop {

using Vec3 = std::array<double, 3>;

struct Joint {
  Vec3 axis{0.0, 0.0, 1.0};
  Vec3 offset{1.0, 0.0, 0.0};  // meters
  double lower = -M_PI;        // radians
  double upper = M_PI;
};

struct ArmModel {
  std::vector<Joint> joints;
  double dt = 0.1;     // seconds
  double a_max = 1.0;  // rad/s

  std::size_t dof() const noexcept { return joints.size(); }
  /// Throws InvalidInput unless: at least one joint, unit axes, lower < upper, dt > 0, a_max > 0.
  void validate() const;
  /// Sum of link offset norms; an upper bound on |EE position|.
  double reach() const;
};

/// Joint angles in radians. `grasp` is the augmented holding bit used by the
/// sequential reach-and-pour task; it is carried through transitions unchanged.
struct JointState {
  std::vector<double> angles;
  bool grasp = false;

  friend bool operator==(const JointState&, const JointState&) = default;
};

/// Joint rates in rad/s.
struct JointVelocity {
  std::vector<double> rates;
};

template <class T>
struct PoseT {
  std::array<T, 3> position;
  std::array<T, 4> orientation;  // (w, x, y, z), unit, w >= 0
};
using Pose = PoseT<double>;

/// Geometric Jacobian columns: (linear xyz, angular xyz) per joint.
template <class T>
using JacobianColumns = std::vector<std::array<T, 6>>;

namespace kin_detail {

inline double lift(double v, double) { return v; }
inline ad::Var lift(double v, const ad::Var& like) { return like.tape()->constant(v); }

inline double clamp_scalar(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }
/// Outside the interval the result is a constant: zero gradient at the clamp.
inline ad::Var clamp_scalar(const ad::Var& x, double lo, double hi) {
  const double v = x.value();
  if (v < lo) return x.tape()->constant(lo);
  if (v > hi) return x.tape()->constant(hi);
  return x;
}

template <class T>
std::array<T, 4> quat_mul(const std::array<T, 4>& a, const std::array<T, 4>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

/// v' = v + 2w (u x v) + 2 u x (u x v) for unit q = (w, u).
template <class T, class V>
std::array<T, 3> quat_rotate(const std::array<T, 4>& q, const std::array<V, 3>& v) {
  const T& w = q[0];
  const T& x = q[1];
  const T& y = q[2];
  const T& z = q[3];
  const T tx = (y * v[2] - z * v[1]) * 2.0;
  const T ty = (z * v[0] - x * v[2]) * 2.0;
  const T tz = (x * v[1] - y * v[0]) * 2.0;
  return {v[0] + w * tx + (y * tz - z * ty), v[1] + w * ty + (z * tx - x * tz),
          v[2] + w * tz + (x * ty - y * tx)};
}

template <class T>
std::array<T, 4> axis_angle(const Vec3& axis, const T& angle) {
  using std::cos;
  using std::sin;
  const T half = angle * 0.5;
  const T s = sin(half);
  return {cos(half), s * axis[0], s * axis[1], s * axis[2]};
}

template <class T>
struct ChainFrames {
  std::vector<std::array<T, 3>> joint_origin;  // world position of each joint
  std::vector<std::array<T, 3>> joint_axis;    // world direction of each joint axis
  PoseT<T> tip;
};

template <class T>
ChainFrames<T> chain(const ArmModel& model, std::span<const T> angles) {
  if (angles.size() != model.dof()) throw DimensionMismatch("joint angles", model.dof(), angles.size());
  if (angles.empty()) throw InvalidInput("arm has no joints");
  const T& like = angles[0];
  ChainFrames<T> f;
  std::array<T, 4> q{lift(1.0, like), lift(0.0, like), lift(0.0, like), lift(0.0, like)};
  std::array<T, 3> p{lift(0.0, like), lift(0.0, like), lift(0.0, like)};
  for (std::size_t i = 0; i < model.dof(); ++i) {
    const Joint& j = model.joints[i];
    f.joint_origin.push_back(p);
    f.joint_axis.push_back(quat_rotate(q, j.axis));
    q = quat_mul(q, axis_angle(j.axis, angles[i]));
    const auto d = quat_rotate(q, j.offset);
    p = {p[0] + d[0], p[1] + d[1], p[2] + d[2]};
  }
  if (ad::value_of(q[0]) < 0.0) {
    for (auto& c : q) c = c * -1.0;
  }
  f.tip = {p, q};
  return f;
}

}  // namespace kin_detail

/// s' = clamp(s + a dt, limits).
template <class T>
std::vector<T> step(const ArmModel& model, std::span<const T> s, std::span<const T> a) {
  if (s.size() != model.dof()) throw DimensionMismatch("state", model.dof(), s.size());
  if (a.size() != model.dof()) throw DimensionMismatch("action", model.dof(), a.size());
  std::vector<T> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Joint& j = model.joints[i];
    out.push_back(kin_detail::clamp_scalar(s[i] + a[i] * model.dt, j.lower, j.upper));
  }
  return out;
}

JointState step(const ArmModel& model, const JointState& s, const JointVelocity& a);

template <class T>
PoseT<T> forward_kinematics(const ArmModel& model, std::span<const T> angles) {
  return kin_detail::chain<T>(model, angles).tip;
}

Pose forward_kinematics(const ArmModel& model, const JointState& s);

template <class T>
JacobianColumns<T> jacobian(const ArmModel& model, std::span<const T> angles) {
  const auto f = kin_detail::chain<T>(model, angles);
  JacobianColumns<T> cols;
  cols.reserve(model.dof());
  const auto& tip = f.tip.position;
  for (std::size_t i = 0; i < model.dof(); ++i) {
    const auto& a = f.joint_axis[i];
    const auto& o = f.joint_origin[i];
    const T rx = tip[0] - o[0];
    const T ry = tip[1] - o[1];
    const T rz = tip[2] - o[2];
    cols.push_back({a[1] * rz - a[2] * ry, a[2] * rx - a[0] * rz, a[0] * ry - a[1] * rx, a[0], a[1], a[2]});
  }
  return cols;
}

/// 6 x n geometric Jacobian (3 linear rows, 3 angular rows).
Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian(const ArmModel& model, const JointState& s);

/// Geodesic distance 2 acos(|<q1, q2>|) in [0, pi]. Throws InvalidInput if
/// either quaternion's norm deviates from 1 by more than 1e-6.
double rotation_distance(const std::array<double, 4>& q1, const std::array<double, 4>& q2);
ad::Var rotation_distance(const std::array<ad::Var, 4>& q1, const std::array<ad::Var, 4>& q2);

struct PoseDelta {
  Vec3 position;
  double rotation;
};

PoseDelta pose_delta(const ArmModel& model, const JointState& before, const JointState& after);

/// Rotation vector (axis * angle) of q_from^-1 * q_to, expressed in q_from's
/// local frame.
Vec3 local_rotation_vector(const std::array<double, 4>& q_from, const std::array<double, 4>& q_to);

/// 3x3 rotation matrix of a unit quaternion.
Eigen::Matrix3d rotation_matrix(const std::array<double, 4>& q);

/// Arm config JSON: {"format":"align-teleop/arm","version":1,
///  "joints":[{"axis":[..],"offset":[..],"limits":[lo,hi]}], "dt":.., "a_max":..}
std::string arm_to_json(const ArmModel& model);
ArmModel arm_from_json(const std::string& text);

}  // namespace align_teleop
