#pragma once

// Shared fixtures: seeded random inputs and a rotation-matrix reference
// implementation that shares no code with the quaternion path.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "relpose/geom.hpp"
#include "relpose/posegraph.hpp"
#include "relpose/refine.hpp"

namespace relpose::testing {

inline Vec3 random_vec(std::mt19937_64& g, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return {n(g), n(g), n(g)};
}

inline UnitQuaternion random_quat(std::mt19937_64& g) {
  std::normal_distribution<double> n(0.0, 1.0);
  return UnitQuaternion::from_wxyz(n(g), n(g), n(g), n(g));
}

inline Pose random_pose(std::mt19937_64& g, double t_scale = 1.0) {
  return {random_quat(g), random_vec(g, t_scale)};
}

/// Rodrigues' formula.
inline Mat3 rodrigues(const Vec3& axis, double angle) {
  const Vec3 k = axis.normalized();
  Mat3 K;
  K << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(angle) * K + (1.0 - std::cos(angle)) * K * K;
}

/// Matrix of a Hamilton quaternion written out element by element.
inline Mat3 quat_to_matrix_ref(double w, double x, double y, double z) {
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline Mat3 matrix_ref(const UnitQuaternion& q) { return quat_to_matrix_ref(q.w(), q.x(), q.y(), q.z()); }

/// Rotation angle between two matrices, degrees.
inline double matrix_angle_deg(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

struct RefPose {
  Mat3 r;
  Vec3 t;
};

inline RefPose to_ref(const Pose& p) { return {matrix_ref(p.rotation), p.translation}; }
inline RefPose ref_compose(const RefPose& a, const RefPose& b) { return {a.r * b.r, a.r * b.t + a.t}; }
inline RefPose ref_inverse(const RefPose& p) { return {p.r.transpose(), -p.r.transpose() * p.t}; }

inline double pose_gap(const Pose& p, const RefPose& ref) {
  return std::max((matrix_ref(p.rotation) - ref.r).cwiseAbs().maxCoeff(), (p.translation - ref.t).cwiseAbs().maxCoeff());
}

/// Largest component difference, tolerant of quaternion sign.
inline double quat_gap(const UnitQuaternion& a, const UnitQuaternion& b) {
  const Eigen::Vector4d va(a.w(), a.x(), a.y(), a.z());
  const Eigen::Vector4d vb(b.w(), b.x(), b.y(), b.z());
  return std::min((va - vb).cwiseAbs().maxCoeff(), (va + vb).cwiseAbs().maxCoeff());
}

/// Candidates near one common rotation (with random quaternion signs) so
/// sign alignment is exercised.
inline std::vector<CandidatePose> random_candidates(std::mt19937_64& g, std::size_t n) {
  std::uniform_real_distribution<double> c(0.05, 4.0);
  const UnitQuaternion base = random_quat(g);
  std::vector<CandidatePose> out;
  for (std::size_t k = 0; k < n; ++k) {
    Pose p{base * UnitQuaternion::exp(random_vec(g, 0.3)), random_vec(g, 2.0)};
    if (g() % 2) p.rotation = p.rotation.negated();
    const double cr = c(g), ct = c(g);
    out.push_back({p, cr, ct, k + 1});
  }
  return out;
}

inline PoseEdge exact_edge(FrameId i, FrameId j, const Pose& pi, const Pose& pj, double c = 1.0) {
  const Pose rel = pose_relative(pi, pj);
  PoseEdge e;
  e.src = i;
  e.dst = j;
  e.rel_rotation = rel.rotation;
  e.rel_translation = rel.translation;
  e.conf_rot = e.conf_trans = c;
  return e;
}

/// Perturbed start, noisy edges on about two thirds of the ordered pairs;
/// residuals land in both Huber zones.
inline RefinementProblem random_problem(std::mt19937_64& g, std::size_t nodes, RotationResidual kind) {
  std::uniform_real_distribution<double> conf(0.2, 3.0);
  RefinementProblem p;
  p.rotation_residual = kind;
  p.delta_rot = 0.3;
  p.delta_trans = 0.5;
  std::map<FrameId, Pose> truth;
  for (FrameId k = 1; k <= nodes; ++k) {
    truth[k] = random_pose(g, 2.0);
    p.poses[k] = {truth[k].rotation * UnitQuaternion::exp(random_vec(g, 0.3)), truth[k].translation + random_vec(g, 0.4)};
  }
  for (FrameId i = 1; i <= nodes; ++i) {
    for (FrameId j = 1; j <= nodes; ++j) {
      if (i == j || g() % 3 == 0) continue;
      PoseEdge e = exact_edge(i, j, truth[i], truth[j]);
      e.rel_rotation = e.rel_rotation * UnitQuaternion::exp(random_vec(g, 0.05));
      e.rel_translation += random_vec(g, 0.05);
      e.conf_rot = conf(g);
      e.conf_trans = conf(g);
      p.edges.push_back(e);
    }
  }
  return p;
}

/// Golden-section minimization of a unimodal function on [lo, hi].
template <typename F>
double golden_section(F f, double lo, double hi, double tol = 1e-12, int max_iter = 400) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < max_iter && (b - a) > tol * (std::abs(c) + std::abs(d)); ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace relpose::testing
