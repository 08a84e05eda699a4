#pragma once

// Synthetic stand-in for the learned pairwise pose head.
//
// A scene is a ground-truth trajectory plus a deterministic noise model.
// Each edge i -> j is the true relative pose perturbed by Laplace noise with
// per-pair scales b = b0 * (1 + gap_growth * |i - j|) * (1 + baseline); its
// confidences are alpha / b, the minimizer of c * E|noise| - alpha * log c.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/geom.hpp"
#include "relpose/posegraph.hpp"
#include "relpose/provider.hpp"
#include "relpose/token.hpp"

namespace relpose {

enum class TrajectoryFamily { Circle, RandomWalk, FigureEight };

inline std::string_view to_string(TrajectoryFamily f) {
  switch (f) {
    case TrajectoryFamily::Circle: return "circle";
    case TrajectoryFamily::RandomWalk: return "random-walk";
    case TrajectoryFamily::FigureEight: return "figure-eight";
  }
  return "circle";
}

inline TrajectoryFamily parse_family(std::string_view s) {
  if (s == "circle") return TrajectoryFamily::Circle;
  if (s == "random-walk") return TrajectoryFamily::RandomWalk;
  if (s == "figure-eight") return TrajectoryFamily::FigureEight;
  throw Error(ErrorKind::InvalidConfig, "unknown trajectory family '" + std::string(s) + "'");
}

struct OracleConfig {
  TrajectoryFamily family = TrajectoryFamily::RandomWalk;
  std::size_t frames = 100;
  double radius = 1.0;     // circle / figure-eight size
  double step = 0.05;      // random-walk step length
  double turn_rate = 0.1;  // random-walk heading noise per step (rad)

  double rot_noise = 0.03;    // b0 for rotation, radians per axis-angle component
  double trans_noise = 0.03;  // b0 for translation, scene units per component
  double gap_growth = 0.05;   // gamma in b0 * (1 + gamma * gap) * (1 + baseline)
  double noise_floor = 1e-9;  // noise scales are clamped to at least this

  std::size_t token_dim = 64;
  double token_length_scale = 0.5;
  double token_view_weight = 0.5;

  double alpha = 0.2;
  double conf_jitter = 0.0;   // log-normal sigma on emitted confidences
  double depth_jitter = 0.0;  // log-normal sigma on predicted depth medians
  double distractor_noise_factor = 10.0;
};

inline void validate(const OracleConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (c.frames < 2) fail("scene needs at least 2 frames");
  if (!(c.radius > 0.0) || !(c.step > 0.0)) fail("radius and step must be positive");
  if (!(c.turn_rate >= 0.0)) fail("turn_rate must be non-negative");
  if (!(c.rot_noise >= 0.0) || !(c.trans_noise >= 0.0)) fail("noise scales must be non-negative");
  if (!(c.gap_growth >= 0.0)) fail("gap_growth must be non-negative");
  if (!(c.noise_floor > 0.0)) fail("noise_floor must be positive");
  if (c.token_dim == 0) fail("token_dim must be positive");
  if (!(c.token_length_scale > 0.0) || !(c.token_view_weight >= 0.0)) fail("invalid token scales");
  if (!(c.alpha > 0.0)) fail("alpha must be positive");
  if (!(c.conf_jitter >= 0.0) || !(c.depth_jitter >= 0.0)) fail("jitter must be non-negative");
  if (!(c.distractor_noise_factor > 0.0)) fail("distractor_noise_factor must be positive");
}

namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream key from a parent seed and a label.
inline std::uint64_t split(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                           std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return splitmix64(h ^ c);
}

inline std::uint64_t label(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Uniform in the open interval (0, 1).
inline double uniform01(std::mt19937_64& g) {
  return (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
}

inline double laplace(std::mt19937_64& g, double scale) {
  const double u = uniform01(g) - 0.5;
  const double s = u < 0.0 ? -1.0 : 1.0;
  return -scale * s * std::log(1.0 - 2.0 * std::abs(u));
}

inline double normal(std::mt19937_64& g) {
  // Box-Muller; avoids implementation-defined std::normal_distribution output.
  const double u1 = uniform01(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rng

struct NoiseScales {
  double rot = 0.0;
  double trans = 0.0;
};

class SyntheticScene : public EdgeProvider {
 public:
  SyntheticScene(OracleConfig config, std::uint64_t seed, std::vector<Pose> trajectory)
      : config_(std::move(config)), seed_(seed), trajectory_(std::move(trajectory)) {
    validate(config_);
    if (trajectory_.size() < 2) {
      throw Error(ErrorKind::InvalidConfig, "scene needs at least 2 frames");
    }
    build_token_basis();
  }

  const OracleConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return trajectory_.size(); }

  /// Frames are numbered 1..size().
  bool contains(FrameId id) const { return id >= 1 && id <= trajectory_.size(); }

  const Pose& pose(FrameId id) const {
    check(id);
    return trajectory_[id - 1];
  }

  const std::vector<Pose>& trajectory() const { return trajectory_; }

  Pose true_relative(FrameId i, FrameId j) const { return pose_relative(pose(i), pose(j)); }

  NoiseScales noise_scales(FrameId i, FrameId j) const {
    return scales_for(i, j, pose(i), pose(j), 1.0);
  }

  PoseEdge edge(FrameId src, FrameId dst) const override {
    check(src);
    check(dst);
    if (src == dst) throw Error(ErrorKind::UnknownFrame, "edge needs two distinct frames");
    return noisy_edge(src, dst, pose(src), pose(dst), 1.0, rng::label("edge"));
  }

  /// Edge between frames of two (possibly different) scenes, treating both
  /// poses as if they lived in one world; noise inflated by `factor`.
  PoseEdge foreign_edge(FrameId src, FrameId dst, const Pose& src_pose, const Pose& dst_pose,
                        double factor, std::uint64_t key) const {
    return noisy_edge(src, dst, src_pose, dst_pose, factor, key);
  }

  FrameToken token(FrameId id) const override {
    const Pose& p = pose(id);
    const Vec3 view = p.rotation.rotate(Vec3::UnitX());
    double x[6];
    for (int k = 0; k < 3; ++k) {
      x[k] = p.translation(k) / config_.token_length_scale;
      x[3 + k] = config_.token_view_weight * view(k) / config_.token_length_scale;
    }
    std::vector<double> f(config_.token_dim);
    for (std::size_t d = 0; d < f.size(); ++d) {
      double a = phase_[d];
      for (int k = 0; k < 6; ++k) a += basis_[d * 6 + k] * x[k];
      f[d] = std::cos(a);
    }
    return FrameToken(id, std::move(f));
  }

  std::optional<DepthMedians> depth_medians(FrameId id) const override {
    check(id);
    std::mt19937_64 g(rng::split(seed_, rng::label("depth"), id));
    DepthMedians m;
    m.metric = 2.0 + 0.5 * std::sin(0.1 * static_cast<double>(id));
    m.predicted = m.metric * std::exp(config_.depth_jitter * rng::normal(g));
    return m;
  }

 private:
  void check(FrameId id) const {
    if (!contains(id)) {
      throw Error(ErrorKind::UnknownFrame, "frame " + std::to_string(id) + " not in scene");
    }
  }

  NoiseScales scales_for(FrameId i, FrameId j, const Pose& pi, const Pose& pj,
                         double factor) const {
    const double gap = static_cast<double>(i > j ? i - j : j - i);
    const double baseline = (pi.translation - pj.translation).norm();
    const double growth = factor * (1.0 + config_.gap_growth * gap) * (1.0 + baseline);
    return {std::max(config_.rot_noise * growth, config_.noise_floor),
            std::max(config_.trans_noise * growth, config_.noise_floor)};
  }

  PoseEdge noisy_edge(FrameId src, FrameId dst, const Pose& ps, const Pose& pd, double factor,
                      std::uint64_t key) const {
    const NoiseScales b = scales_for(src, dst, ps, pd, factor);
    std::mt19937_64 g(rng::split(seed_, key, src, dst));
    const Pose rel = pose_relative(ps, pd);

    Vec3 w, dt;
    for (int k = 0; k < 3; ++k) w(k) = b.rot > config_.noise_floor ? rng::laplace(g, b.rot) : 0.0;
    for (int k = 0; k < 3; ++k) {
      dt(k) = b.trans > config_.noise_floor ? rng::laplace(g, b.trans) : 0.0;
    }

    PoseEdge e;
    e.src = src;
    e.dst = dst;
    e.rel_rotation = rel.rotation * UnitQuaternion::exp(w);
    e.rel_translation = rel.translation + dt;
    e.conf_rot = config_.alpha / b.rot;
    e.conf_trans = config_.alpha / b.trans;
    if (config_.conf_jitter > 0.0) {
      e.conf_rot *= std::exp(config_.conf_jitter * rng::normal(g));
      e.conf_trans *= std::exp(config_.conf_jitter * rng::normal(g));
    }
    return e;
  }

  void build_token_basis() {
    std::mt19937_64 g(rng::split(seed_, rng::label("token")));
    basis_.resize(config_.token_dim * 6);
    phase_.resize(config_.token_dim);
    for (double& v : basis_) v = rng::normal(g);
    for (double& v : phase_) v = 2.0 * std::numbers::pi * rng::uniform01(g);
  }

  OracleConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<Pose> trajectory_;
  std::vector<double> basis_;
  std::vector<double> phase_;
};

namespace detail {

/// Camera-to-world rotation whose body x axis points along (yaw, pitch).
inline UnitQuaternion heading(double yaw, double pitch) {
  return UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw) *
         UnitQuaternion::from_axis_angle(Vec3::UnitY(), -pitch);
}

}  // namespace detail

/// Builds a ground-truth trajectory. Deterministic in (config, seed).
inline SyntheticScene generate_scene(const OracleConfig& config, std::uint64_t seed) {
  validate(config);
  const std::size_t n = config.frames;
  std::vector<Pose> traj(n);
  switch (config.family) {
    case TrajectoryFamily::Circle:
      for (std::size_t k = 0; k < n; ++k) {
        const double th = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        traj[k].translation = Vec3(config.radius * std::cos(th), config.radius * std::sin(th), 0.0);
        traj[k].rotation = detail::heading(th + 0.5 * std::numbers::pi, 0.0);
      }
      break;
    case TrajectoryFamily::FigureEight:
      for (std::size_t k = 0; k < n; ++k) {
        const double th = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        const double r = config.radius;
        traj[k].translation = Vec3(r * std::sin(th), 0.5 * r * std::sin(2.0 * th), 0.0);
        traj[k].rotation = detail::heading(std::atan2(r * std::cos(2.0 * th), r * std::cos(th)), 0.0);
      }
      break;
    case TrajectoryFamily::RandomWalk: {
      std::mt19937_64 g(rng::split(seed, rng::label("scene")));
      double yaw = 2.0 * std::numbers::pi * rng::uniform01(g);
      double pitch = 0.0;
      Vec3 p = Vec3::Zero();
      for (std::size_t k = 0; k < n; ++k) {
        traj[k].translation = p;
        traj[k].rotation = detail::heading(yaw, pitch);
        const Vec3 dir(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
                       std::sin(pitch));
        p += config.step * dir;
        yaw += config.turn_rate * rng::normal(g);
        pitch = 0.9 * pitch + config.turn_rate / 3.0 * rng::normal(g);
      }
      break;
    }
  }
  return SyntheticScene(config, seed, std::move(traj));
}

/// One slot of an interleaved clean/distractor stream.
struct PlanEntry {
  FrameId stream_id = 0;     // 1-based position in the stream
  bool distractor = false;
  FrameId source_frame = 0;  // frame id in the clean or the distractor scene
};

struct FramePlan {
  std::vector<PlanEntry> entries;

  std::size_t clean_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const PlanEntry& e) { return !e.distractor; }));
  }
  std::size_t distractor_count() const { return entries.size() - clean_count(); }
};

inline constexpr std::size_t kCleanPrefix = 3;

/// Interleaves `n_distract` frames of `other` into the first `n_clean` frames
/// of `scene`. Clean order is preserved, the first three slots are clean and
/// distractor slots are drawn uniformly from the remaining positions.
inline FramePlan make_distractor_stream(const SyntheticScene& scene, const SyntheticScene& other,
                                        std::size_t n_clean, std::size_t n_distract,
                                        std::uint64_t seed) {
  if (&scene == &other) throw Error(ErrorKind::InvalidCounts, "scenes must be distinct");
  if (n_clean < kCleanPrefix) throw Error(ErrorKind::InvalidCounts, "need at least 3 clean frames");
  if (n_clean > scene.size()) throw Error(ErrorKind::InvalidCounts, "scene has too few frames");
  if (n_distract > 0 && other.size() == 0) throw Error(ErrorKind::InvalidCounts, "empty distractor scene");

  std::mt19937_64 g(rng::split(seed, rng::label("distractor-plan")));
  const std::size_t total = n_clean + n_distract;
  // Partial Fisher-Yates over the free slots [kCleanPrefix, total).
  std::vector<std::size_t> free_slots;
  for (std::size_t s = kCleanPrefix; s < total; ++s) free_slots.push_back(s);
  std::vector<bool> is_distractor(total, false);
  for (std::size_t k = 0; k < n_distract; ++k) {
    const std::size_t r = k + static_cast<std::size_t>(g() % (free_slots.size() - k));
    std::swap(free_slots[k], free_slots[r]);
    is_distractor[free_slots[k]] = true;
  }

  // Distractor source frames: without replacement while the pool lasts.
  std::vector<FrameId> pool(other.size());
  for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k + 1;
  for (std::size_t k = pool.size(); k > 1; --k) std::swap(pool[k - 1], pool[g() % k]);

  FramePlan plan;
  FrameId next_clean = 1;
  std::size_t next_distract = 0;
  for (std::size_t s = 0; s < total; ++s) {
    PlanEntry e;
    e.stream_id = s + 1;
    e.distractor = is_distractor[s];
    if (e.distractor) {
      e.source_frame = pool[next_distract % pool.size()];
      ++next_distract;
    } else {
      e.source_frame = next_clean++;
    }
    plan.entries.push_back(e);
  }
  return plan;
}

/// Serves edges and tokens for an interleaved stream under stream frame ids.
/// Any edge touching a distractor relates poses from different scenes and
/// carries noise inflated by the distractor factor, hence low confidence.
class InterleavedProvider : public EdgeProvider {
 public:
  InterleavedProvider(const SyntheticScene& scene, const SyntheticScene& other, FramePlan plan)
      : scene_(scene), other_(other), plan_(std::move(plan)) {}

  const FramePlan& plan() const { return plan_; }

  PoseEdge edge(FrameId src, FrameId dst) const override {
    const PlanEntry& a = entry(src);
    const PlanEntry& b = entry(dst);
    if (!a.distractor && !b.distractor) {
      PoseEdge e = scene_.edge(a.source_frame, b.source_frame);
      e.src = src;
      e.dst = dst;
      return e;
    }
    const Pose& pa = a.distractor ? other_.pose(a.source_frame) : scene_.pose(a.source_frame);
    const Pose& pb = b.distractor ? other_.pose(b.source_frame) : scene_.pose(b.source_frame);
    return scene_.foreign_edge(src, dst, pa, pb, scene_.config().distractor_noise_factor,
                               rng::label("distractor-edge"));
  }

  FrameToken token(FrameId id) const override {
    const PlanEntry& e = entry(id);
    return (e.distractor ? other_.token(e.source_frame) : scene_.token(e.source_frame)).relabeled(id);
  }

  std::optional<DepthMedians> depth_medians(FrameId id) const override {
    const PlanEntry& e = entry(id);
    return e.distractor ? other_.depth_medians(e.source_frame) : scene_.depth_medians(e.source_frame);
  }

  /// Ground-truth pose of a clean stream frame.
  const Pose& clean_pose(FrameId id) const {
    const PlanEntry& e = entry(id);
    if (e.distractor) throw Error(ErrorKind::UnknownFrame, "frame is a distractor");
    return scene_.pose(e.source_frame);
  }

 private:
  const PlanEntry& entry(FrameId id) const {
    if (id < 1 || id > plan_.entries.size()) {
      throw Error(ErrorKind::UnknownFrame, "stream frame " + std::to_string(id) + " not in plan");
    }
    return plan_.entries[id - 1];
  }

  const SyntheticScene& scene_;
  const SyntheticScene& other_;
  FramePlan plan_;
};

}  // namespace relpose
