#pragma once

// Rotation and rigid-transform algebra.
//
// Quaternion convention (repo-wide): Hamilton product, storage order
// (w, x, y, z), active rotations, poses are camera-to-world. A pose
// T = (q, t) maps a point p in camera coordinates to q(p) + t in world
// coordinates, and T_a * T_b = (q_a q_b, t_a + q_a(t_b)).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <span>

#include "relpose/error.hpp"

namespace relpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;
inline constexpr double kDegToRad = std::numbers::pi / 180.0;

class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  /// Normalizes its argument. Throws DegenerateInput for a (near) zero vector.
  static UnitQuaternion from_wxyz(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 1e-300) || !std::isfinite(n)) {
      throw Error(ErrorKind::DegenerateInput, "quaternion norm is zero or not finite");
    }
    UnitQuaternion q;
    q.w_ = w / n;
    q.x_ = x / n;
    q.y_ = y / n;
    q.z_ = z / n;
    return q;
  }

  static UnitQuaternion identity() { return {}; }

  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (!(n > 0.0)) {
      throw Error(ErrorKind::DegenerateInput, "rotation axis has zero length");
    }
    const double h = 0.5 * angle_rad;
    const Vec3 a = axis / n * std::sin(h);
    return from_wxyz(std::cos(h), a.x(), a.y(), a.z());
  }

  /// Exponential map of a rotation vector (axis * angle).
  static UnitQuaternion exp(const Vec3& rotvec) {
    const double theta = rotvec.norm();
    const double h = 0.5 * theta;
    // sin(h)/theta, with its Taylor expansion near zero.
    const double k = theta < 1e-8 ? 0.5 - theta * theta / 48.0 : std::sin(h) / theta;
    return from_wxyz(std::cos(h), k * rotvec.x(), k * rotvec.y(), k * rotvec.z());
  }

  static UnitQuaternion from_matrix(const Mat3& r) {
    const Eigen::Quaterniond q(r);
    return from_wxyz(q.w(), q.x(), q.y(), q.z());
  }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Vec3 vec() const { return {x_, y_, z_}; }

  double norm() const { return std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_); }

  /// Same rotation, opposite hemisphere.
  UnitQuaternion negated() const { return raw(-w_, -x_, -y_, -z_); }

  UnitQuaternion inverse() const { return raw(w_, -x_, -y_, -z_); }

  double dot(const UnitQuaternion& o) const {
    return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_;
  }

  /// Rotation vector with angle in [0, pi].
  Vec3 log() const {
    const double s = vec().norm();
    if (s < 1e-300) return Vec3::Zero();
    const double sign = w_ < 0.0 ? -1.0 : 1.0;
    const double theta = 2.0 * std::atan2(s, std::abs(w_));
    // theta / sin(theta/2) with sin(theta/2) = s.
    const double k = s < 1e-8 ? 2.0 / std::abs(w_) : theta / s;
    return sign * k * vec();
  }

  Vec3 rotate(const Vec3& v) const {
    // v + 2w (u x v) + 2 u x (u x v)
    const Vec3 u = vec();
    const Vec3 uv = u.cross(v);
    return v + 2.0 * w_ * uv + 2.0 * u.cross(uv);
  }

  Mat3 matrix() const {
    const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
    const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
    const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
    Mat3 m;
    m << ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy),
        2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx),
        2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz;
    return m;
  }

  friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
    return from_wxyz(a.w_ * b.w_ - a.x_ * b.x_ - a.y_ * b.y_ - a.z_ * b.z_,
                     a.w_ * b.x_ + a.x_ * b.w_ + a.y_ * b.z_ - a.z_ * b.y_,
                     a.w_ * b.y_ - a.x_ * b.z_ + a.y_ * b.w_ + a.z_ * b.x_,
                     a.w_ * b.z_ + a.x_ * b.y_ - a.y_ * b.x_ + a.z_ * b.w_);
  }

  friend bool operator==(const UnitQuaternion&, const UnitQuaternion&) = default;

 private:
  static UnitQuaternion raw(double w, double x, double y, double z) {
    UnitQuaternion q;
    q.w_ = w;
    q.x_ = x;
    q.y_ = y;
    q.z_ = z;
    return q;
  }

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

inline UnitQuaternion quat_multiply(const UnitQuaternion& a, const UnitQuaternion& b) {
  return a * b;
}

inline Vec3 quat_rotate(const UnitQuaternion& q, const Vec3& v) { return q.rotate(v); }

/// Angle of the relative rotation, in radians, in [0, pi]. Sign-invariant.
inline double quat_geodesic_rad(const UnitQuaternion& a, const UnitQuaternion& b) {
  const UnitQuaternion d = a.inverse() * b;
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

inline double quat_geodesic_deg(const UnitQuaternion& a, const UnitQuaternion& b) {
  return quat_geodesic_rad(a, b) * kRadToDeg;
}

struct Pose {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 transform(const Vec3& p) const { return rotation.rotate(p) + translation; }
};

inline Pose pose_compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.translation + a.rotation.rotate(b.translation)};
}

inline Pose pose_inverse(const Pose& p) {
  const UnitQuaternion qi = p.rotation.inverse();
  return {qi, -qi.rotate(p.translation)};
}

/// T_a^{-1} T_b: pose of b expressed in a's frame.
inline Pose pose_relative(const Pose& a, const Pose& b) {
  const UnitQuaternion qi = a.rotation.inverse();
  return {qi * b.rotation, qi.rotate(b.translation - a.translation)};
}

struct Sim3Alignment {
  double scale = 1.0;
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * rotation.rotate(p) + translation; }

  /// Maps a camera-to-world pose through the similarity.
  Pose apply(const Pose& p) const {
    return {rotation * p.rotation, apply(p.translation)};
  }
};

namespace detail {

inline Sim3Alignment umeyama(std::span<const Vec3> source, std::span<const Vec3> target,
                             bool with_scale) {
  if (source.size() != target.size()) {
    throw Error(ErrorKind::DegenerateInput, "source and target sizes differ");
  }
  if (source.size() < 3) {
    throw Error(ErrorKind::DegenerateInput, "alignment needs at least 3 points");
  }
  const double n = static_cast<double>(source.size());
  Vec3 mu_s = Vec3::Zero();
  Vec3 mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= n;
  mu_t /= n;

  double var_s = 0.0;
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 ds = source[i] - mu_s;
    cov += (target[i] - mu_t) * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= n;
  var_s /= n;
  if (!(var_s > 1e-24)) {
    throw Error(ErrorKind::DegenerateInput, "source points are coincident");
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = Vec3::Ones();
  // Reflection case: flip the direction of the smallest singular value.
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  const Mat3 r = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();

  Sim3Alignment out;
  out.rotation = UnitQuaternion::from_matrix(r);
  out.scale = with_scale ? svd.singularValues().dot(s) / var_s : 1.0;
  if (!(out.scale > 0.0)) {
    throw Error(ErrorKind::DegenerateInput, "alignment produced a non-positive scale");
  }
  out.translation = mu_t - out.scale * (r * mu_s);
  return out;
}

}  // namespace detail

/// Least-squares similarity transform taking `source` onto `target`.
inline Sim3Alignment umeyama_sim3(std::span<const Vec3> source, std::span<const Vec3> target) {
  return detail::umeyama(source, target, true);
}

/// Rigid variant (scale fixed to 1).
inline Sim3Alignment umeyama_se3(std::span<const Vec3> source, std::span<const Vec3> target) {
  return detail::umeyama(source, target, false);
}

/// Sum of squared residuals of `align(source)` against `target`.
inline double alignment_cost(const Sim3Alignment& align, std::span<const Vec3> source,
                             std::span<const Vec3> target) {
  double sum = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    sum += (align.apply(source[i]) - target[i]).squaredNorm();
  }
  return sum;
}

}  // namespace relpose
