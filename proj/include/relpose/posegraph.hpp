#pragma once

// Directed relative-pose graph: edges, candidate composition and
// confidence-weighted fusion of candidates into one absolute pose.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/geom.hpp"

namespace relpose {

using FrameId = std::uint64_t;

/// Camera-to-world poses keyed by frame id.
using Trajectory = std::map<FrameId, Pose>;

/// One directed pairwise prediction src -> dst. `rel_translation` is the
/// position of dst expressed in src's camera frame.
struct PoseEdge {
  FrameId src = 0;
  FrameId dst = 0;
  UnitQuaternion rel_rotation;
  Vec3 rel_translation = Vec3::Zero();
  double conf_rot = 1.0;
  double conf_trans = 1.0;

  double mean_conf() const { return 0.5 * (conf_rot + conf_trans); }

  Pose relative() const { return {rel_rotation, rel_translation}; }
};

inline void validate(const PoseEdge& e) {
  if (e.src == e.dst) {
    throw Error(ErrorKind::InvalidProblem, "edge src equals dst (" + std::to_string(e.src) + ")");
  }
  if (!(e.conf_rot > 0.0) || !(e.conf_trans > 0.0) || !std::isfinite(e.conf_rot) ||
      !std::isfinite(e.conf_trans)) {
    throw Error(ErrorKind::InvalidProblem, "edge confidences must be positive and finite");
  }
}

struct CandidatePose {
  Pose proposed;
  double conf_rot = 1.0;
  double conf_trans = 1.0;
  FrameId reference = 0;

  double mean_conf() const { return 0.5 * (conf_rot + conf_trans); }
};

/// q_j = q_i * q_ij, t_j = t_i + q_i(t_ij). Confidences pass through.
inline CandidatePose compose_candidate(const Pose& ref_pose, const PoseEdge& edge) {
  return {pose_compose(ref_pose, edge.relative()), edge.conf_rot, edge.conf_trans, edge.src};
}

enum class FusionWeighting {
  Softmax,     // softmax over raw confidences, temperature 1
  LogSoftmax,  // softmax over log-confidences, i.e. weights proportional to c
  Uniform,     // equal weights; ablation baseline
};

struct FusionOptions {
  static constexpr std::size_t kAll = std::numeric_limits<std::size_t>::max();

  std::size_t k = kAll;
  FusionWeighting weighting = FusionWeighting::Softmax;
};

struct FusionDiagnostics {
  std::size_t degenerate_rotation_sums = 0;
};

namespace detail {

/// Descending mean confidence, ties broken by ascending frame id.
template <typename T>
bool ranks_before(const T& a, const T& b, FrameId ida, FrameId idb) {
  const double ca = a.mean_conf();
  const double cb = b.mean_conf();
  if (ca != cb) return ca > cb;
  return ida < idb;
}

inline std::vector<double> normalized_weights(std::span<const double> conf,
                                              FusionWeighting weighting) {
  std::vector<double> w(conf.size());
  switch (weighting) {
    case FusionWeighting::Softmax: {
      const double m = *std::max_element(conf.begin(), conf.end());
      for (std::size_t i = 0; i < conf.size(); ++i) w[i] = std::exp(conf[i] - m);
      break;
    }
    case FusionWeighting::LogSoftmax:
      for (std::size_t i = 0; i < conf.size(); ++i) w[i] = conf[i];
      break;
    case FusionWeighting::Uniform:
      std::fill(w.begin(), w.end(), 1.0);
      break;
  }
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace detail

/// Confidence-weighted fusion of candidate poses for one frame.
///
/// Candidates are ranked by mean confidence (ties by reference id) and the
/// top `options.k` are retained. Translation is the softmax(c^T)-weighted
/// mean; rotation is the normalized softmax(c^R)-weighted sum of quaternions
/// sign-aligned to the retained candidate with the highest c^R. Summation
/// runs in rank order, so the result does not depend on input order.
inline Pose fuse_candidates(std::span<const CandidatePose> candidates,
                            const FusionOptions& options = {},
                            FusionDiagnostics* diagnostics = nullptr) {
  if (candidates.empty()) {
    throw Error(ErrorKind::EmptyCandidates, "fusion needs at least one candidate");
  }
  if (options.k == 0) {
    throw Error(ErrorKind::EmptyCandidates, "fusion k must be positive");
  }
  std::vector<CandidatePose> ranked(candidates.begin(), candidates.end());
  // Total order: rank first, then the remaining fields, so that equal-rank
  // duplicates still sum in a fixed order.
  auto key = [](const CandidatePose& c) {
    const Pose& p = c.proposed;
    return std::array<double, 9>{c.conf_rot, p.translation.x(), p.translation.y(), p.translation.z(),
                                 p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
                                 c.conf_trans};
  };
  std::sort(ranked.begin(), ranked.end(), [&key](const CandidatePose& a, const CandidatePose& b) {
    if (detail::ranks_before(a, b, a.reference, b.reference)) return true;
    if (detail::ranks_before(b, a, b.reference, a.reference)) return false;
    return key(a) < key(b);
  });
  if (ranked.size() > options.k) ranked.resize(options.k);
  if (ranked.size() == 1) return ranked.front().proposed;

  std::vector<double> cr(ranked.size());
  std::vector<double> ct(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    cr[i] = ranked[i].conf_rot;
    ct[i] = ranked[i].conf_trans;
  }
  const std::vector<double> wr = detail::normalized_weights(cr, options.weighting);
  const std::vector<double> wt = detail::normalized_weights(ct, options.weighting);

  std::size_t anchor = 0;
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    if (ranked[i].conf_rot > ranked[anchor].conf_rot ||
        (ranked[i].conf_rot == ranked[anchor].conf_rot &&
         ranked[i].reference < ranked[anchor].reference)) {
      anchor = i;
    }
  }
  const UnitQuaternion& qa = ranked[anchor].proposed.rotation;

  Vec3 t = Vec3::Zero();
  double qw = 0.0, qx = 0.0, qy = 0.0, qz = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    t += wt[i] * ranked[i].proposed.translation;
    UnitQuaternion q = ranked[i].proposed.rotation;
    if (q.dot(qa) < 0.0) q = q.negated();
    qw += wr[i] * q.w();
    qx += wr[i] * q.x();
    qy += wr[i] * q.y();
    qz += wr[i] * q.z();
  }

  Pose out;
  out.translation = t;
  if (std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz) < 1e-9) {
    if (diagnostics) ++diagnostics->degenerate_rotation_sums;
    out.rotation = qa;
  } else {
    out.rotation = UnitQuaternion::from_wxyz(qw, qx, qy, qz);
  }
  return out;
}

/// Source frames of `edges_into_j`, best first, at most `k` of them.
inline std::vector<FrameId> rank_references(std::span<const PoseEdge> edges_into_j,
                                            std::size_t k = FusionOptions::kAll) {
  std::vector<const PoseEdge*> order;
  order.reserve(edges_into_j.size());
  for (const PoseEdge& e : edges_into_j) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const PoseEdge* a, const PoseEdge* b) {
    return detail::ranks_before(*a, *b, a->src, b->src);
  });
  std::vector<FrameId> out;
  for (std::size_t i = 0; i < order.size() && i < k; ++i) out.push_back(order[i]->src);
  return out;
}

/// Directed edges keyed by (src, dst); at most one edge per ordered pair.
/// Const member functions may be called concurrently; mutation is single-writer.
class EdgeStore {
 public:
  /// Inserts or replaces the edge for (src, dst).
  void insert(const PoseEdge& e) {
    validate(e);
    edges_.insert_or_assign({e.src, e.dst}, e);
  }

  const PoseEdge* find(FrameId src, FrameId dst) const {
    auto it = edges_.find({src, dst});
    return it == edges_.end() ? nullptr : &it->second;
  }

  /// Edges i -> j for every i in `refs` that has one, ordered by src.
  std::vector<PoseEdge> edges_into(FrameId j, std::span<const FrameId> refs) const {
    std::vector<FrameId> sorted(refs.begin(), refs.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<PoseEdge> out;
    for (FrameId i : sorted) {
      if (const PoseEdge* e = find(i, j)) out.push_back(*e);
    }
    return out;
  }

  /// Every edge whose dst is `j`, ordered by src.
  std::vector<PoseEdge> edges_into(FrameId j) const {
    std::vector<PoseEdge> out;
    for (const auto& [key, e] : edges_) {
      if (key.second == j) out.push_back(e);
    }
    return out;
  }

  void erase_frame(FrameId id) {
    std::erase_if(edges_, [id](const auto& kv) {
      return kv.first.first == id || kv.first.second == id;
    });
  }

  std::size_t size() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }

  /// All edges in (src, dst) order.
  std::vector<PoseEdge> all() const {
    std::vector<PoseEdge> out;
    out.reserve(edges_.size());
    for (const auto& kv : edges_) out.push_back(kv.second);
    return out;
  }

 private:
  std::map<std::pair<FrameId, FrameId>, PoseEdge> edges_;
};

// Edge text format: one edge per line,
//   src dst qw qx qy qz tx ty tz cR cT
// Blank lines and lines starting with '#' are ignored on read.

inline void write_edge(std::ostream& os, const PoseEdge& e) {
  const auto old_precision = os.precision(17);
  const Vec3& t = e.rel_translation;
  const UnitQuaternion& q = e.rel_rotation;
  os << e.src << ' ' << e.dst << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z()
     << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << e.conf_rot << ' ' << e.conf_trans
     << '\n';
  os.precision(old_precision);
}

inline void write_edges(std::ostream& os, std::span<const PoseEdge> edges) {
  for (const PoseEdge& e : edges) write_edge(os, e);
}

inline PoseEdge parse_edge(const std::string& line) {
  std::istringstream is(line);
  PoseEdge e;
  double qw, qx, qy, qz, tx, ty, tz;
  if (!(is >> e.src >> e.dst >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> e.conf_rot >>
        e.conf_trans)) {
    throw Error(ErrorKind::ParseError, "malformed edge line: " + line);
  }
  std::string extra;
  if (is >> extra) throw Error(ErrorKind::ParseError, "trailing tokens on edge line: " + line);
  e.rel_rotation = UnitQuaternion::from_wxyz(qw, qx, qy, qz);
  e.rel_translation = Vec3(tx, ty, tz);
  validate(e);
  return e;
}

inline bool is_blank_or_comment(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

inline std::vector<PoseEdge> read_edges(std::istream& is) {
  std::vector<PoseEdge> out;
  std::string line;
  while (std::getline(is, line)) {
    if (is_blank_or_comment(line)) continue;
    out.push_back(parse_edge(line));
  }
  return out;
}

}  // namespace relpose
