#include "loopkit/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace loopkit {

namespace {

Eigen::Matrix3d skew(const Vec3& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Left Jacobian of SO(3) and its inverse, used to couple translation with
// rotation in the SE(3) exponential.
Eigen::Matrix3d so3_left_jacobian(const Vec3& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d W = skew(w);
  if (theta < 1e-6) {
    return Eigen::Matrix3d::Identity() + 0.5 * W + W * W / 6.0;
  }
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * W +
         (theta - std::sin(theta)) / (t2 * theta) * W * W;
}

Eigen::Matrix3d so3_left_jacobian_inv(const Vec3& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d W = skew(w);
  if (theta < 1e-6) {
    return Eigen::Matrix3d::Identity() - 0.5 * W + W * W / 12.0;
  }
  const double half = 0.5 * theta;
  const double coef = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Eigen::Matrix3d::Identity() - 0.5 * W + coef * W * W;
}

Quat canonical(Quat q) {
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  return q;
}

}  // namespace

Pose::Pose(const Quat& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}

double Pose::angle() const {
  const Quat q = canonical(rotation);
  const double v = q.vec().norm();
  return 2.0 * std::atan2(v, q.w());
}

std::array<double, 7> Pose::to_array() const {
  return {rotation.w(), rotation.x(), rotation.y(), rotation.z(),
          translation.x(), translation.y(), translation.z()};
}

Pose Pose::from_array(const std::array<double, 7>& a) {
  return {Quat(a[0], a[1], a[2], a[3]), Vec3(a[4], a[5], a[6])};
}

Vec6 Twist::stacked() const {
  Vec6 v;
  v << rotational, translational;
  return v;
}

Twist Twist::from_stacked(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

Pose inverse(const Pose& a) {
  Pose out;
  out.rotation = a.rotation.conjugate().normalized();
  out.translation = -(out.rotation * a.translation);
  return out;
}

Pose relative_world_pose(const Pose& T_k_i, const Pose& T_i_j, const Pose& T_kp_j) {
  return compose(compose(T_k_i, T_i_j), inverse(T_kp_j));
}

Twist se3_log(const Pose& a) {
  const Quat q = canonical(a.rotation);
  const double vnorm = q.vec().norm();
  const double theta = 2.0 * std::atan2(vnorm, q.w());
  if (theta >= M_PI - 1e-6) {
    throw std::domain_error("se3_log: rotation angle too close to pi");
  }
  Vec3 w;
  if (vnorm < 1e-12) {
    w = 2.0 * q.vec() / q.w();
  } else {
    w = q.vec() * (theta / vnorm);
  }
  return {w, so3_left_jacobian_inv(w) * a.translation};
}

Pose se3_exp(const Twist& v) {
  const Vec3& w = v.rotational;
  const double theta = w.norm();
  Quat q;
  if (theta < 1e-12) {
    q = Quat(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
  } else {
    q = Quat(Eigen::AngleAxisd(theta, w / theta));
  }
  return {q, so3_left_jacobian(w) * v.translational};
}

PoseDelta pose_delta(const Pose& a, const Pose& b) {
  const Pose d = compose(inverse(a), b);
  return {d.angle(), d.translation.norm()};
}

bool approx_equal(const Pose& a, const Pose& b, double tol) {
  const PoseDelta d = pose_delta(a, b);
  return d.angle <= tol && d.distance <= tol;
}

}  // namespace loopkit
