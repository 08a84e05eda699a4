#pragma once

// Confidence-weighted pose-graph refinement.
//
//   min  sum_{(i,j)}  c^R_ij H_dR(e^R_ij) + c^T_ij H_dT(e^T_ij)
//
// over camera-to-world poses with one node held fixed. Rotation updates are
// right-multiplied axis-angle increments q <- q * exp(w); translation updates
// are additive in world coordinates. Solved with L-BFGS and a backtracking
// line search enforcing sufficient decrease, so accepted iterates never
// increase the objective.

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/geom.hpp"
#include "relpose/posegraph.hpp"

namespace relpose {

enum class RotationResidual { Geodesic, Chordal };

struct RefinementProblem {
  std::map<FrameId, Pose> poses;
  std::vector<PoseEdge> edges;
  double delta_rot = 0.05;    // radians
  double delta_trans = 0.1;   // scene units
  FrameId fixed = 1;
  RotationResidual rotation_residual = RotationResidual::Geodesic;
};

struct RefinementOptions {
  std::size_t max_iters = 100;
  double grad_tol = 1e-8;
  std::size_t memory = 10;
};

struct RefinementResult {
  std::map<FrameId, Pose> poses;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

inline double huber(double r, double delta) {
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

/// d huber / dr.
inline double huber_slope(double r, double delta) { return r <= delta ? r : delta; }

struct EdgeResiduals {
  double rot = 0.0;    // radians
  double trans = 0.0;  // scene units
};

/// Discrepancy between the relative pose induced by (pose_i, pose_j) and the
/// edge prediction: geodesic rotation angle and translation distance, both
/// measured in i's frame.
inline EdgeResiduals edge_residuals(const Pose& pose_i, const Pose& pose_j, const PoseEdge& edge) {
  const Pose rel = pose_relative(pose_i, pose_j);
  return {quat_geodesic_rad(edge.rel_rotation, rel.rotation),
          (rel.translation - edge.rel_translation).norm()};
}

inline void validate(const RefinementProblem& p) {
  if (!(p.delta_rot > 0.0) || !(p.delta_trans > 0.0)) {
    throw Error(ErrorKind::InvalidProblem, "huber deltas must be positive");
  }
  if (!p.poses.contains(p.fixed)) {
    throw Error(ErrorKind::InvalidProblem, "fixed node has no pose");
  }
  for (const PoseEdge& e : p.edges) {
    validate(e);
    if (!p.poses.contains(e.src) || !p.poses.contains(e.dst)) {
      throw Error(ErrorKind::InvalidProblem, "edge endpoint without a node pose");
    }
  }
}

namespace detail {

/// Rotation residual value and the scalar k such that the gradient of the
/// weighted Huber term with respect to the log error vector phi is k * phi.
struct RotationTerm {
  double cost = 0.0;
  double k = 0.0;
};

inline RotationTerm rotation_term(double theta, double delta, RotationResidual kind) {
  if (kind == RotationResidual::Geodesic) {
    // d/dphi H(|phi|) = H'(theta) phi / theta; equals phi in the quadratic zone.
    const double k = theta <= delta ? 1.0 : delta / theta;
    return {huber(theta, delta), k};
  }
  // Chordal distance ||R_err - I||_F = 2 sqrt(2) sin(theta / 2).
  const double e = 2.0 * std::sqrt(2.0) * std::sin(0.5 * theta);
  const double de = std::sqrt(2.0) * std::cos(0.5 * theta);
  double k;
  if (e <= delta) {
    // e * de / theta = 2 sin(theta) / theta.
    k = theta < 1e-6 ? 2.0 * (1.0 - theta * theta / 6.0) : 2.0 * std::sin(theta) / theta;
  } else {
    k = delta * de / theta;
  }
  return {huber(e, delta), k};
}

}  // namespace detail

/// Evaluates the refinement objective and its gradient. Nodes are indexed in
/// ascending id order; the gradient holds [w(3), v(3)] per node, with the
/// fixed node's block left at zero.
class RefinementObjective {
 public:
  explicit RefinementObjective(const RefinementProblem& problem) : problem_(problem) {
    validate(problem_);
    for (const auto& [id, pose] : problem_.poses) {
      index_.emplace(id, ids_.size());
      ids_.push_back(id);
    }
  }

  std::size_t nodes() const { return ids_.size(); }
  const std::vector<FrameId>& ids() const { return ids_; }
  std::size_t fixed_index() const { return index_.at(problem_.fixed); }

  std::vector<Pose> initial() const {
    std::vector<Pose> out;
    out.reserve(ids_.size());
    for (FrameId id : ids_) out.push_back(problem_.poses.at(id));
    return out;
  }

  double value(std::span<const Pose> x) const { return evaluate(x, nullptr); }

  /// Fills `grad` (size 6 * nodes) and returns the objective.
  double value_and_gradient(std::span<const Pose> x, std::vector<double>& grad) const {
    grad.assign(6 * ids_.size(), 0.0);
    return evaluate(x, &grad);
  }

 private:
  double evaluate(std::span<const Pose> x, std::vector<double>* grad) const {
    double f = 0.0;
    const std::size_t fixed = fixed_index();
    for (const PoseEdge& e : problem_.edges) {
      const std::size_t i = index_.at(e.src);
      const std::size_t j = index_.at(e.dst);
      const Pose& pi = x[i];
      const Pose& pj = x[j];

      // Rotation: E = q_hat^-1 q_i^-1 q_j, phi = log(E).
      const UnitQuaternion err = e.rel_rotation.inverse() * (pi.rotation.inverse() * pj.rotation);
      const Vec3 phi = err.log();
      const double theta = phi.norm();
      const detail::RotationTerm rt =
          detail::rotation_term(theta, problem_.delta_rot, problem_.rotation_residual);
      f += e.conf_rot * rt.cost;

      // Translation: r = R_i^T (t_j - t_i) - t_hat.
      const Vec3 a = pi.rotation.inverse().rotate(pj.translation - pi.translation);
      const Vec3 r = a - e.rel_translation;
      const double rn = r.norm();
      f += e.conf_trans * huber(rn, problem_.delta_trans);

      if (!grad) continue;
      const Vec3 g_phi = e.conf_rot * rt.k * phi;
      // d/dw_j = g_phi; d/dw_i = -R_hat g_phi.
      const Vec3 gw_i_rot = -e.rel_rotation.rotate(g_phi);
      const double tk = rn <= problem_.delta_trans ? 1.0 : problem_.delta_trans / rn;
      const Vec3 g_r = e.conf_trans * tk * r;
      const Vec3 gt_j = pi.rotation.rotate(g_r);
      const Vec3 gw_i_trans = g_r.cross(a);

      auto add = [&](std::size_t node, int offset, const Vec3& v) {
        if (node == fixed) return;
        for (int k = 0; k < 3; ++k) (*grad)[6 * node + offset + k] += v(k);
      };
      add(j, 0, g_phi);
      add(i, 0, gw_i_rot + gw_i_trans);
      add(j, 3, gt_j);
      add(i, 3, -gt_j);
    }
    if (!std::isfinite(f)) throw Error(ErrorKind::NonFiniteObjective, "objective is not finite");
    return f;
  }

  const RefinementProblem& problem_;
  std::vector<FrameId> ids_;
  std::map<FrameId, std::size_t> index_;
};

/// x (+) step * d under the local parameterization; the fixed node is untouched.
inline std::vector<Pose> retract(std::span<const Pose> x, std::span<const double> d, double step,
                                 std::size_t fixed) {
  std::vector<Pose> out(x.begin(), x.end());
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (n == fixed) continue;
    const Vec3 w(d[6 * n], d[6 * n + 1], d[6 * n + 2]);
    const Vec3 v(d[6 * n + 3], d[6 * n + 4], d[6 * n + 5]);
    out[n].rotation = out[n].rotation * UnitQuaternion::exp(step * w);
    out[n].translation += step * v;
  }
  return out;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline RefinementResult solve(const RefinementProblem& problem, const RefinementOptions& options = {}) {
  const RefinementObjective objective(problem);
  const std::size_t fixed = objective.fixed_index();
  std::vector<Pose> x = objective.initial();
  std::vector<double> g;
  double f = objective.value_and_gradient(x, g);

  RefinementResult result;
  result.initial_objective = f;

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> memory;
  constexpr double kArmijo = 1e-4;

  std::size_t iter = 0;
  for (; iter < options.max_iters; ++iter) {
    if (std::sqrt(detail::dot(g, g)) < options.grad_tol) {
      result.converged = true;
      break;
    }

    // Two-loop recursion.
    std::vector<double> d(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) d[k] = -g[k];
    std::vector<double> alphas(memory.size());
    for (std::size_t m = memory.size(); m-- > 0;) {
      alphas[m] = memory[m].rho * detail::dot(memory[m].s, d);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] -= alphas[m] * memory[m].y[k];
    }
    double initial_step = 1.0;
    if (!memory.empty()) {
      const Pair& last = memory.back();
      const double gamma = detail::dot(last.s, last.y) / detail::dot(last.y, last.y);
      for (double& v : d) v *= gamma;
    } else {
      initial_step = std::min(1.0, 1.0 / std::sqrt(detail::dot(g, g)));
    }
    for (std::size_t m = 0; m < memory.size(); ++m) {
      const double beta = memory[m].rho * detail::dot(memory[m].y, d);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += memory[m].s[k] * (alphas[m] - beta);
    }

    double slope = detail::dot(g, d);
    if (!(slope < 0.0)) {
      memory.clear();
      for (std::size_t k = 0; k < g.size(); ++k) d[k] = -g[k];
      slope = detail::dot(g, d);
      initial_step = std::min(1.0, 1.0 / std::sqrt(detail::dot(g, g)));
    }

    double step = initial_step;
    bool accepted = false;
    std::vector<Pose> x_new;
    double f_new = f;
    for (int bt = 0; bt < 60; ++bt) {
      x_new = retract(x, d, step, fixed);
      f_new = objective.value(x_new);
      if (f_new <= f + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || !(f_new <= f)) break;  // no further decrease available

    std::vector<double> g_new;
    f_new = objective.value_and_gradient(x_new, g_new);
    Pair p;
    p.s.resize(d.size());
    p.y.resize(d.size());
    for (std::size_t k = 0; k < d.size(); ++k) {
      p.s[k] = step * d[k];
      p.y[k] = g_new[k] - g[k];
    }
    const double sy = detail::dot(p.s, p.y);
    if (sy > 1e-300) {
      p.rho = 1.0 / sy;
      memory.push_back(std::move(p));
      if (memory.size() > options.memory) memory.pop_front();
    }
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
  }
  if (!result.converged && std::sqrt(detail::dot(g, g)) < options.grad_tol) result.converged = true;

  result.iterations = iter;
  result.final_objective = f;
  const std::vector<FrameId>& ids = objective.ids();
  for (std::size_t n = 0; n < ids.size(); ++n) result.poses.emplace(ids[n], x[n]);
  // The fixed node is never retracted, so its pose is preserved bitwise.
  return result;
}

// Problem text format:
//   NODES <n>            followed by n lines "id qw qx qy qz tx ty tz"
//   FIXED <id>
//   DELTAS <delta_rot> <delta_trans>
//   EDGES <m>            followed by m lines in the edge text format

inline void write_problem(std::ostream& os, const RefinementProblem& p) {
  const auto old_precision = os.precision(17);
  os << "NODES " << p.poses.size() << '\n';
  for (const auto& [id, pose] : p.poses) {
    const UnitQuaternion& q = pose.rotation;
    const Vec3& t = pose.translation;
    os << id << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << t.x() << ' '
       << t.y() << ' ' << t.z() << '\n';
  }
  os << "FIXED " << p.fixed << '\n';
  os << "DELTAS " << p.delta_rot << ' ' << p.delta_trans << '\n';
  os << "EDGES " << p.edges.size() << '\n';
  os.precision(old_precision);
  write_edges(os, p.edges);
}

inline RefinementProblem read_problem(std::istream& is) {
  auto next_line = [&is]() {
    std::string line;
    while (std::getline(is, line)) {
      if (!is_blank_or_comment(line)) return line;
    }
    throw Error(ErrorKind::ParseError, "unexpected end of problem file");
  };
  auto header = [&](const std::string& tag) {
    std::istringstream ls(next_line());
    std::string got;
    ls >> got;
    if (got != tag) throw Error(ErrorKind::ParseError, "expected " + tag + ", got '" + got + "'");
    return ls.str().substr(tag.size());
  };

  RefinementProblem p;
  std::size_t n = 0;
  if (!(std::istringstream(header("NODES")) >> n)) throw Error(ErrorKind::ParseError, "bad NODES count");
  for (std::size_t k = 0; k < n; ++k) {
    std::istringstream ls(next_line());
    FrameId id;
    double qw, qx, qy, qz, tx, ty, tz;
    if (!(ls >> id >> qw >> qx >> qy >> qz >> tx >> ty >> tz)) {
      throw Error(ErrorKind::ParseError, "malformed node line");
    }
    p.poses[id] = {UnitQuaternion::from_wxyz(qw, qx, qy, qz), Vec3(tx, ty, tz)};
  }
  if (!(std::istringstream(header("FIXED")) >> p.fixed)) throw Error(ErrorKind::ParseError, "bad FIXED");
  {
    std::istringstream ls(header("DELTAS"));
    if (!(ls >> p.delta_rot >> p.delta_trans)) throw Error(ErrorKind::ParseError, "bad DELTAS");
  }
  std::size_t m = 0;
  if (!(std::istringstream(header("EDGES")) >> m)) throw Error(ErrorKind::ParseError, "bad EDGES count");
  for (std::size_t k = 0; k < m; ++k) p.edges.push_back(parse_edge(next_line()));
  validate(p);
  return p;
}

}  // namespace relpose
