#pragma once

// Trajectory and robustness metrics.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/geom.hpp"
#include "relpose/oracle.hpp"
#include "relpose/posegraph.hpp"
#include "relpose/stream.hpp"

namespace relpose {

enum class Alignment { Sim3, SE3 };

struct AteResult {
  double ate_rmse = 0.0;
  double ate_norm = 0.0;  // percent of reference path length
  double rot_rmse = 0.0;  // degrees, after alignment
  Sim3Alignment alignment;
};

struct TrajectoryReport {
  double ate_rmse = 0.0;
  double ate_norm = 0.0;
  double rpe_t = 0.0;
  double rpe_r = 0.0;  // degrees
  double rot_rmse = 0.0;
  std::size_t frames = 0;
};

/// Sum of consecutive translation distances, in id order.
inline double path_length(const Trajectory& t) {
  double len = 0.0;
  const Pose* prev = nullptr;
  for (const auto& [id, p] : t) {
    if (prev) len += (p.translation - prev->translation).norm();
    prev = &p;
  }
  return len;
}

/// The poses of `t` whose ids appear in `keep`.
inline Trajectory restrict_to(const Trajectory& t, const Trajectory& keep) {
  Trajectory out;
  for (const auto& [id, p] : t) {
    if (keep.contains(id)) out.emplace(id, p);
  }
  return out;
}

namespace detail {

inline void check_same_ids(const Trajectory& a, const Trajectory& b, std::size_t min_poses) {
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw Error(ErrorKind::MismatchedIds, "trajectories cover different frame ids");
  }
  if (a.size() < min_poses) {
    throw Error(ErrorKind::TooFewPoses, "need at least " + std::to_string(min_poses) + " poses");
  }
}

}  // namespace detail

/// Absolute trajectory error after optimal alignment of `estimated` onto
/// `reference`.
inline AteResult ate(const Trajectory& estimated, const Trajectory& reference,
                     Alignment alignment = Alignment::Sim3) {
  detail::check_same_ids(estimated, reference, 3);
  std::vector<Vec3> src, dst;
  src.reserve(estimated.size());
  dst.reserve(estimated.size());
  for (const auto& [id, p] : estimated) src.push_back(p.translation);
  for (const auto& [id, p] : reference) dst.push_back(p.translation);

  AteResult out;
  out.alignment = alignment == Alignment::Sim3 ? umeyama_sim3(src, dst) : umeyama_se3(src, dst);
  double sq = 0.0, rot_sq = 0.0;
  auto it = reference.begin();
  for (const auto& [id, p] : estimated) {
    const Pose aligned = out.alignment.apply(p);
    sq += (aligned.translation - it->second.translation).squaredNorm();
    const double deg = quat_geodesic_deg(aligned.rotation, it->second.rotation);
    rot_sq += deg * deg;
    ++it;
  }
  const double n = static_cast<double>(estimated.size());
  out.ate_rmse = std::sqrt(sq / n);
  out.rot_rmse = std::sqrt(rot_sq / n);
  const double len = path_length(reference);
  if (!(len > 0.0)) throw Error(ErrorKind::DegenerateInput, "reference path length is zero");
  out.ate_norm = 100.0 * out.ate_rmse / len;
  return out;
}

struct RpeResult {
  double rpe_t = 0.0;
  double rpe_r = 0.0;  // degrees
};

/// Relative pose error over pairs (k, k + delta) of the shared ids in order.
inline RpeResult rpe(const Trajectory& estimated, const Trajectory& reference, std::size_t delta = 1) {
  if (delta == 0) throw Error(ErrorKind::InvalidConfig, "rpe delta must be positive");
  detail::check_same_ids(estimated, reference, delta + 1);
  std::vector<const Pose*> est, ref;
  for (const auto& [id, p] : estimated) est.push_back(&p);
  for (const auto& [id, p] : reference) ref.push_back(&p);

  double t_sq = 0.0, r_sq = 0.0;
  const std::size_t pairs = est.size() - delta;
  for (std::size_t k = 0; k < pairs; ++k) {
    const Pose de = pose_relative(*est[k], *est[k + delta]);
    const Pose dr = pose_relative(*ref[k], *ref[k + delta]);
    const Pose err = pose_relative(dr, de);
    t_sq += err.translation.squaredNorm();
    const double deg = quat_geodesic_deg(de.rotation, dr.rotation);
    r_sq += deg * deg;
  }
  return {std::sqrt(t_sq / static_cast<double>(pairs)), std::sqrt(r_sq / static_cast<double>(pairs))};
}

inline TrajectoryReport evaluate_trajectory(const Trajectory& estimated, const Trajectory& reference,
                                            Alignment alignment = Alignment::Sim3,
                                            std::size_t rpe_delta = 1) {
  const AteResult a = ate(estimated, reference, alignment);
  const RpeResult r = rpe(estimated, reference, rpe_delta);
  return {a.ate_rmse, a.ate_norm, r.rpe_t, r.rpe_r, a.rot_rmse, estimated.size()};
}

/// Fraction of scenes where each method attains the minimum; ties split.
inline std::map<std::string, double> win_rate(
    const std::map<std::string, std::map<std::string, double>>& per_method) {
  std::set<std::string> scenes;
  for (const auto& [m, values] : per_method) {
    for (const auto& [s, v] : values) scenes.insert(s);
  }
  std::map<std::string, double> wins;
  for (const auto& [m, values] : per_method) {
    wins[m] = 0.0;
    for (const std::string& s : scenes) {
      if (!values.contains(s)) throw Error(ErrorKind::MissingScene, m + " lacks scene " + s);
    }
  }
  if (scenes.empty()) return wins;
  for (const std::string& s : scenes) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [m, values] : per_method) best = std::min(best, values.at(s));
    std::vector<std::string> winners;
    for (const auto& [m, values] : per_method) {
      if (values.at(s) == best) winners.push_back(m);
    }
    for (const std::string& m : winners) wins[m] += 1.0 / static_cast<double>(winners.size());
  }
  for (auto& [m, w] : wins) w /= static_cast<double>(scenes.size());
  return wins;
}

enum class ErrorComponent { Rotation, Translation };

struct ConfidenceSample {
  double confidence = 0.0;
  double error = 0.0;
};

struct ConfidenceBin {
  double lo = 0.0;
  double hi = 0.0;
  double center = 0.0;
  double mean_error = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

struct ConfidenceBinSummary {
  ErrorComponent component = ErrorComponent::Rotation;
  std::vector<ConfidenceBin> bins;
};

/// Equal-mass confidence bins (counts differ by at most one), lowest
/// confidence first, with per-bin mean and population std of the error.
inline ConfidenceBinSummary confidence_bins(std::span<const ConfidenceSample> samples, std::size_t n_bins,
                                            ErrorComponent component = ErrorComponent::Rotation) {
  if (n_bins == 0 || samples.size() < n_bins) {
    throw Error(ErrorKind::TooFewSamples, "need at least as many samples as bins");
  }
  std::vector<ConfidenceSample> sorted(samples.begin(), samples.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ConfidenceSample& a, const ConfidenceSample& b) { return a.confidence < b.confidence; });

  ConfidenceBinSummary out;
  out.component = component;
  const std::size_t base = sorted.size() / n_bins;
  const std::size_t extra = sorted.size() % n_bins;
  std::size_t begin = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t count = base + (b < extra ? 1 : 0);
    ConfidenceBin bin;
    bin.count = count;
    bin.lo = sorted[begin].confidence;
    bin.hi = sorted[begin + count - 1].confidence;
    bin.center = 0.5 * (bin.lo + bin.hi);
    double sum = 0.0;
    for (std::size_t k = begin; k < begin + count; ++k) sum += sorted[k].error;
    bin.mean_error = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::size_t k = begin; k < begin + count; ++k) {
      const double d = sorted[k].error - bin.mean_error;
      var += d * d;
    }
    bin.std_error = std::sqrt(var / static_cast<double>(count));
    out.bins.push_back(bin);
    begin += count;
  }
  return out;
}

struct RobustnessReport {
  double distractor_reject_rate = 1.0;
  double clean_accept_rate = 1.0;
  double bfs = 1.0;
  std::size_t distractors = 0;
  std::size_t clean = 0;
};

/// Scores gate decisions against the plan's clean/distractor labels. With no
/// distractors the rejection rate is 1 by convention.
inline RobustnessReport robustness_score(std::span<const StreamEvent> events, const FramePlan& plan) {
  std::map<FrameId, bool> decided;  // frame -> accepted
  for (const StreamEvent& ev : events) {
    if (ev.kind == EventKind::Accepted) decided[ev.frame] = true;
    if (ev.kind == EventKind::Rejected) decided[ev.frame] = false;
  }
  RobustnessReport r;
  std::size_t rejected_distractors = 0, accepted_clean = 0;
  for (const PlanEntry& e : plan.entries) {
    auto it = decided.find(e.stream_id);
    if (it == decided.end()) {
      throw Error(ErrorKind::PlanMismatch, "no decision for stream frame " + std::to_string(e.stream_id));
    }
    if (e.distractor) {
      ++r.distractors;
      if (!it->second) ++rejected_distractors;
    } else {
      ++r.clean;
      if (it->second) ++accepted_clean;
    }
  }
  if (decided.size() != plan.entries.size()) {
    throw Error(ErrorKind::PlanMismatch, "events reference frames outside the plan");
  }
  r.distractor_reject_rate =
      r.distractors == 0 ? 1.0 : static_cast<double>(rejected_distractors) / static_cast<double>(r.distractors);
  r.clean_accept_rate = r.clean == 0 ? 1.0 : static_cast<double>(accepted_clean) / static_cast<double>(r.clean);
  r.bfs = 0.5 * r.distractor_reject_rate + 0.5 * r.clean_accept_rate;
  return r;
}

// TUM trajectory format: "timestamp tx ty tz qx qy qz qw", timestamp = frame id.

inline void write_tum(std::ostream& os, const Trajectory& t) {
  const auto old_precision = os.precision(17);
  for (const auto& [id, p] : t) {
    const Vec3& v = p.translation;
    const UnitQuaternion& q = p.rotation;
    os << id << ' ' << v.x() << ' ' << v.y() << ' ' << v.z() << ' ' << q.x() << ' ' << q.y() << ' '
       << q.z() << ' ' << q.w() << '\n';
  }
  os.precision(old_precision);
}

inline Trajectory read_tum(std::istream& is) {
  Trajectory out;
  std::string line;
  while (std::getline(is, line)) {
    if (is_blank_or_comment(line)) continue;
    std::istringstream ls(line);
    double stamp, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> stamp >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorKind::ParseError, "malformed TUM line: " + line);
    }
    if (!(stamp >= 0.0)) throw Error(ErrorKind::ParseError, "negative TUM timestamp");
    const auto id = static_cast<FrameId>(std::llround(stamp));
    out[id] = {UnitQuaternion::from_wxyz(qw, qx, qy, qz), Vec3(tx, ty, tz)};
  }
  return out;
}

}  // namespace relpose
