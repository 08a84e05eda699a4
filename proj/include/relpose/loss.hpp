#pragma once

// Reference evaluators for the pose supervision objectives. Nothing here is
// differentiated; these functions calibrate the oracle and document how the
// confidence-weighted relative loss differs from absolute and all-pair
// relative losses.

#include <cmath>
#include <span>

#include "relpose/error.hpp"
#include "relpose/geom.hpp"
#include "relpose/posegraph.hpp"

namespace relpose {

enum class RotationMetric {
  QuaternionL1,  // sum |q_hat - q| over components, after sign alignment
  Geodesic,      // rotation angle in radians
};

struct PairResidual {
  double rot = 0.0;
  double trans = 0.0;
};

inline PairResidual pair_residual(const PoseEdge& edge, const Pose& gt_relative,
                                  RotationMetric metric = RotationMetric::QuaternionL1) {
  PairResidual r;
  if (metric == RotationMetric::QuaternionL1) {
    UnitQuaternion q = edge.rel_rotation;
    const UnitQuaternion& g = gt_relative.rotation;
    if (q.dot(g) < 0.0) q = q.negated();
    r.rot = std::abs(q.w() - g.w()) + std::abs(q.x() - g.x()) + std::abs(q.y() - g.y()) +
            std::abs(q.z() - g.z());
  } else {
    r.rot = quat_geodesic_rad(edge.rel_rotation, gt_relative.rotation);
  }
  r.trans = (edge.rel_translation - gt_relative.translation).lpNorm<1>();
  return r;
}

/// c * residual - alpha * log(c). Minimized over c at c = alpha / residual.
inline double conf_loss(double residual, double c, double alpha) {
  if (!(c > 0.0) || !(alpha > 0.0)) {
    throw Error(ErrorKind::InvalidProblem, "confidence and alpha must be positive");
  }
  return c * residual - alpha * std::log(c);
}

/// Closed-form minimizer of conf_loss over c.
inline double optimal_confidence(double residual, double alpha) { return alpha / residual; }

enum class PairSet {
  Causal,    // ordered pairs with src < dst: past-to-current
  AllPairs,  // every ordered pair with src != dst
};

struct LabeledEdge {
  PoseEdge predicted;
  Pose gt_relative;
};

struct CameraLoss {
  double value = 0.0;
  std::size_t terms = 0;
};

/// Mean of the rotation and translation confidence losses over the pairs
/// of `edges` selected by `pairs`.
inline CameraLoss batch_camera_loss(std::span<const LabeledEdge> edges, PairSet pairs, double alpha,
                                    RotationMetric metric = RotationMetric::QuaternionL1) {
  CameraLoss out;
  double sum = 0.0;
  for (const LabeledEdge& le : edges) {
    const PoseEdge& e = le.predicted;
    if (e.src == e.dst) continue;
    if (pairs == PairSet::Causal && e.src > e.dst) continue;
    const PairResidual r = pair_residual(e, le.gt_relative, metric);
    sum += conf_loss(r.rot, e.conf_rot, alpha) + conf_loss(r.trans, e.conf_trans, alpha);
    ++out.terms;
  }
  if (out.terms == 0) throw Error(ErrorKind::EmptyPairSet, "no pairs selected");
  out.value = sum / static_cast<double>(out.terms);
  return out;
}

/// Pose distance used by the reference losses: geodesic angle (radians)
/// plus translation Euclidean distance.
inline double pose_distance(const Pose& a, const Pose& b) {
  return quat_geodesic_rad(a.rotation, b.rotation) + (a.translation - b.translation).norm();
}

namespace detail {

inline void check_aligned(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::MismatchedIds, "index sets differ");
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) throw Error(ErrorKind::MismatchedIds, "index sets differ");
  }
}

}  // namespace detail

/// Absolute supervision: sum_j d(T_hat_j, T*_j) in one anchored world frame.
inline double reference_abs_loss(const Trajectory& predicted, const Trajectory& gt) {
  detail::check_aligned(predicted, gt);
  double sum = 0.0;
  for (auto ip = predicted.begin(), ig = gt.begin(); ip != predicted.end(); ++ip, ++ig) {
    sum += pose_distance(ip->second, ig->second);
  }
  return sum;
}

/// All-pair relative supervision: sum_{i != j} d(T_hat_i^-1 T_hat_j, T*_i^-1 T*_j).
inline double reference_pi3_loss(const Trajectory& predicted, const Trajectory& gt) {
  detail::check_aligned(predicted, gt);
  double sum = 0.0;
  for (auto ia = predicted.begin(), ga = gt.begin(); ia != predicted.end(); ++ia, ++ga) {
    for (auto ib = predicted.begin(), gb = gt.begin(); ib != predicted.end(); ++ib, ++gb) {
      if (ia->first == ib->first) continue;
      sum += pose_distance(pose_relative(ia->second, ib->second), pose_relative(ga->second, gb->second));
    }
  }
  return sum;
}

}  // namespace relpose
