#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace loopkit {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Quat = Eigen::Quaterniond;

/// Rigid SE(3) transform. Maps points from the child frame into the parent
/// frame: p_parent = rotation * p_child + translation.
struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Quat& q, const Vec3& t);

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Quat::Identity(), t}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// Rotation angle in [0, pi].
  double angle() const;

  /// [qw, qx, qy, qz, tx, ty, tz]
  std::array<double, 7> to_array() const;
  static Pose from_array(const std::array<double, 7>& a);
};

/// Tangent-space coordinates: rotational part first, then translational.
struct Twist {
  Vec3 rotational = Vec3::Zero();
  Vec3 translational = Vec3::Zero();

  Vec6 stacked() const;
  static Twist from_stacked(const Vec6& v);
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

/// Transform from world k' into world k, given the odometry pose of node i in
/// world k, the measured relative pose from node i to node j, and the
/// odometry pose of node j in world k'.
Pose relative_world_pose(const Pose& T_k_i, const Pose& T_i_j, const Pose& T_kp_j);

/// Throws std::domain_error when the rotation angle is within 1e-6 of pi.
Twist se3_log(const Pose& a);
Pose se3_exp(const Twist& v);

/// Rotation angle and translation norm of a^-1 b.
struct PoseDelta {
  double angle;
  double distance;
};
PoseDelta pose_delta(const Pose& a, const Pose& b);

bool approx_equal(const Pose& a, const Pose& b, double tol);

inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

}  // namespace loopkit
