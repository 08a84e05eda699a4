#pragma once

// Causal streaming estimator: bounded keyframe bank, confidence outlier gate,
// segment resets with bridge frames.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/geom.hpp"
#include "relpose/posegraph.hpp"
#include "relpose/token.hpp"

namespace relpose {

struct StreamConfig {
  double tau = 0.98;            // token novelty threshold for admission
  std::size_t delta_max = 20;   // force-admit after this many non-admitted accepted frames
  std::size_t m_max = 100;      // bank capacity
  std::size_t n_cal = 3;        // gate calibration frames
  double tau_out = 0.15;        // reject when score < tau_out * baseline
  std::size_t n_rej = 3;        // consecutive rejections that trigger a reset
  std::size_t l_max = 2000;     // frames per segment before a scheduled reset
  std::size_t bridge_len = 5;   // frames carried across a reset, in [3, 10]
  bool recalibrate_on_reset = false;
  FusionOptions fusion;
};

inline constexpr std::size_t kMinBridge = 3;
inline constexpr std::size_t kMaxBridge = 10;

inline void validate(const StreamConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (!(c.tau > -1.0 && c.tau <= 1.0 + 1e-12)) fail("tau must lie in (-1, 1]");
  if (c.delta_max == 0) fail("delta_max must be positive");
  if (c.m_max < 3) fail("m_max must be at least 3");
  if (c.n_cal == 0) fail("n_cal must be positive");
  if (!(c.tau_out >= 0.0)) fail("tau_out must be non-negative");
  if (c.n_rej == 0) fail("n_rej must be positive");
  if (c.l_max < c.bridge_len + 1) fail("l_max must exceed bridge_len");
  if (c.bridge_len < kMinBridge || c.bridge_len > kMaxBridge) fail("bridge_len must lie in [3, 10]");
  if (c.bridge_len > c.m_max) fail("bridge_len must not exceed m_max");
  if (c.fusion.k == 0) fail("fusion k must be positive");
}

/// Force-admit when the staleness counter reached delta_max; otherwise admit
/// when the token is novel against every bank token.
inline bool admit_check(std::span<const FrameToken> bank_tokens, const FrameToken& token, double tau,
                        std::size_t frames_since_admit, std::size_t delta_max) {
  if (frames_since_admit >= delta_max) return true;
  double best = -std::numeric_limits<double>::infinity();
  for (const FrameToken& t : bank_tokens) best = std::max(best, cosine(t, token));
  return best < tau;
}

/// Mean of the averaged-pair confidence over the context edges.
inline double gate_score(std::span<const PoseEdge> edges_into_j) {
  if (edges_into_j.empty()) throw Error(ErrorKind::MissingContextEdges, "no context edges to score");
  double sum = 0.0;
  for (const PoseEdge& e : edges_into_j) sum += e.mean_conf();
  return sum / static_cast<double>(edges_into_j.size());
}

/// Median-based segment scale: metric / predicted.
inline double anchor_scale(double predicted_median, double metric_median) {
  if (!(predicted_median > 0.0) || !(metric_median > 0.0)) {
    throw Error(ErrorKind::NonPositiveDepth, "depth medians must be positive");
  }
  return metric_median / predicted_median;
}

class KeyframeBank {
 public:
  struct Entry {
    FrameId id = 0;
    FrameToken token;
    Pose pose;
    // Per other bank member: token cosine and best evaluated pair confidence.
    std::map<FrameId, double> cosines;
    std::map<FrameId, double> pair_conf;
  };

  explicit KeyframeBank(std::size_t capacity = 100) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::optional<FrameId> protected_id() const { return protected_; }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<FrameId> ids() const {
    std::vector<FrameId> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.id);
    return out;
  }

  std::vector<FrameToken> tokens() const {
    std::vector<FrameToken> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.token);
    return out;
  }

  const Entry* find(FrameId id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                               [](const Entry& e, FrameId v) { return e.id < v; });
    return it != entries_.end() && it->id == id ? &*it : nullptr;
  }

  /// Inserts a frame. `pair_conf` maps bank members to the averaged
  /// confidence of the edge evaluated between them and this frame. The first
  /// frame inserted into an empty bank becomes the protected entry.
  void insert(FrameId id, const FrameToken& token, const Pose& pose,
              const std::map<FrameId, double>& pair_conf = {}) {
    Entry e{id, token, pose, {}, {}};
    for (Entry& other : entries_) {
      const double c = cosine(other.token, token);
      e.cosines[other.id] = c;
      other.cosines[id] = c;
      if (auto it = pair_conf.find(other.id); it != pair_conf.end()) {
        e.pair_conf[other.id] = it->second;
        auto& slot = other.pair_conf[id];
        slot = std::max(slot, it->second);
      }
    }
    if (entries_.empty()) protected_ = id;
    auto pos = std::lower_bound(entries_.begin(), entries_.end(), id,
                                [](const Entry& x, FrameId v) { return x.id < v; });
    entries_.insert(pos, std::move(e));
  }

  /// u_j = d_j * c_j with d_j = min (1 - cos) and c_j = max pair confidence
  /// over the other members.
  double utility(const Entry& e) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& [id, c] : e.cosines) d = std::min(d, 1.0 - c);
    if (e.cosines.empty()) d = 0.0;
    double conf = 0.0;
    for (const auto& [id, c] : e.pair_conf) conf = std::max(conf, c);
    return std::max(d, 0.0) * conf;
  }

  /// Evicts the unprotected entry with the lowest utility (ties: lowest id).
  FrameId cull() {
    const Entry* victim = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const Entry& e : entries_) {
      if (protected_ && e.id == *protected_) continue;
      const double u = utility(e);
      if (u < best) {
        best = u;
        victim = &e;
      }
    }
    if (!victim) throw Error(ErrorKind::InvalidProblem, "no evictable bank entry");
    const FrameId id = victim->id;
    erase(id);
    return id;
  }

  void clear() {
    entries_.clear();
    protected_.reset();
  }

 private:
  void erase(FrameId id) {
    std::erase_if(entries_, [id](const Entry& e) { return e.id == id; });
    for (Entry& e : entries_) {
      e.cosines.erase(id);
      e.pair_conf.erase(id);
    }
  }

  std::size_t capacity_;
  std::vector<Entry> entries_;
  std::optional<FrameId> protected_;
};

class OutlierGate {
 public:
  OutlierGate(std::size_t n_cal = 3, double tau_out = 0.15, std::size_t n_rej = 3)
      : n_cal_(n_cal), tau_out_(tau_out), n_rej_(n_rej) {}

  bool calibrated() const { return baseline_.has_value(); }
  std::optional<double> baseline() const { return baseline_; }
  std::size_t consecutive_rejections() const { return consecutive_; }
  std::size_t scored() const { return scored_; }

  /// Scores one frame. Calibration frames always pass.
  bool accept(double score) {
    if (!baseline_) {
      sum_ += score;
      ++scored_;
      if (++slots_ >= n_cal_) baseline_ = sum_ / static_cast<double>(scored_);
      consecutive_ = 0;
      return true;
    }
    ++scored_;
    if (score < tau_out_ * *baseline_) {
      ++consecutive_;
      return false;
    }
    consecutive_ = 0;
    return true;
  }

  /// The stream origin has no context edges; it fills one calibration slot
  /// without a score, so calibration spans the first N_cal frames.
  void count_unscored() {
    if (!baseline_ && slots_ + 1 < n_cal_) ++slots_;
  }

  bool tracking_lost() const { return consecutive_ >= n_rej_; }

  void reset_counter() { consecutive_ = 0; }

  void reset() {
    baseline_.reset();
    sum_ = 0.0;
    scored_ = 0;
    slots_ = 0;
    consecutive_ = 0;
  }

 private:
  std::size_t n_cal_;
  double tau_out_;
  std::size_t n_rej_;
  double sum_ = 0.0;
  std::size_t scored_ = 0;
  std::size_t slots_ = 0;
  std::size_t consecutive_ = 0;
  std::optional<double> baseline_;
};

enum class EventKind { Accepted, AdmittedToBank, Evicted, Rejected, SegmentReset };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Accepted: return "Accepted";
    case EventKind::AdmittedToBank: return "AdmittedToBank";
    case EventKind::Evicted: return "Evicted";
    case EventKind::Rejected: return "Rejected";
    case EventKind::SegmentReset: return "SegmentReset";
  }
  return "Unknown";
}

struct StreamEvent {
  EventKind kind = EventKind::Accepted;
  FrameId frame = 0;
  std::optional<FrameId> evicted;
  std::optional<double> score;
  std::size_t segment = 0;
  std::size_t bank_size = 0;
};

struct BridgeFrame {
  FrameId id = 0;
  FrameToken token;
  Pose pose;
};

/// Owns the streaming state. Feed frames in increasing id order; for each
/// frame pass exactly one edge i -> j for every i in `context()`.
class StreamEstimator {
 public:
  using ScaleAnchor = std::function<double(FrameId)>;

  explicit StreamEstimator(StreamConfig config = {})
      : config_(config),
        bank_(config.m_max),
        gate_(config.n_cal, config.tau_out, config.n_rej) {
    validate(config_);
  }

  const StreamConfig& config() const { return config_; }
  const KeyframeBank& bank() const { return bank_; }
  const OutlierGate& gate() const { return gate_; }
  const std::map<FrameId, Pose>& trajectory() const { return trajectory_; }
  std::size_t segment() const { return segment_; }
  double segment_scale() const { return segment_scale_; }
  std::size_t frames_since_admit() const { return frames_since_admit_; }
  const FusionDiagnostics& fusion_diagnostics() const { return fusion_diag_; }

  /// Called with the first frame of each new segment; returns its scale.
  void set_scale_anchor(ScaleAnchor anchor) { scale_anchor_ = std::move(anchor); }

  /// Frames the next incoming frame must be paired with.
  std::vector<FrameId> context() const { return bank_.ids(); }

  /// Entries held by the working state, excluding the emitted trajectory.
  std::size_t working_set_entries() const {
    std::size_t n = bank_.size() + recent_.size();
    for (const auto& e : bank_.entries()) n += e.cosines.size() + e.pair_conf.size();
    return n;
  }

  std::vector<StreamEvent> process_frame(const FrameToken& token, std::span<const PoseEdge> edges) {
    const FrameId j = token.id();
    if (last_id_ && j <= *last_id_) {
      throw Error(ErrorKind::NonMonotoneFrameId,
                  "frame " + std::to_string(j) + " after " + std::to_string(*last_id_));
    }

    std::vector<StreamEvent> events;
    if (bank_.empty()) {
      last_id_ = j;
      accept_origin(token, events);
      return events;
    }

    const std::vector<PoseEdge> ctx_edges = match_context(j, edges);
    last_id_ = j;
    ++segment_frames_;

    const double score = gate_score(ctx_edges);
    if (!gate_.accept(score)) {
      events.push_back(event(EventKind::Rejected, j, score));
      if (gate_.tracking_lost()) {
        reset_from_recent();
        events.push_back(event(EventKind::SegmentReset, j));
      }
      return events;
    }

    std::vector<CandidatePose> candidates;
    candidates.reserve(ctx_edges.size());
    for (const PoseEdge& e : ctx_edges) {
      candidates.push_back(compose_candidate(bank_.find(e.src)->pose, e));
    }
    const Pose pose = fuse_candidates(candidates, config_.fusion, &fusion_diag_);
    trajectory_.emplace(j, pose);
    events.push_back(event(EventKind::Accepted, j, score));

    const std::vector<FrameToken> bank_tokens = bank_.tokens();
    if (admit_check(bank_tokens, token, config_.tau, frames_since_admit_, config_.delta_max)) {
      std::map<FrameId, double> pair_conf;
      for (const PoseEdge& e : ctx_edges) pair_conf[e.src] = e.mean_conf();
      bank_.insert(j, token, pose, pair_conf);
      frames_since_admit_ = 0;
      events.push_back(event(EventKind::AdmittedToBank, j));
      if (bank_.size() > config_.m_max) {
        StreamEvent ev = event(EventKind::Evicted, j);
        ev.evicted = bank_.cull();
        ev.bank_size = bank_.size();
        events.push_back(ev);
      }
    } else {
      ++frames_since_admit_;
    }
    remember(j, token, pose);

    if (segment_frames_ >= config_.l_max) {
      reset_from_recent();
      events.push_back(event(EventKind::SegmentReset, j));
    }
    return events;
  }

  /// Clears the bank and gate counter and seeds a new segment from bridge
  /// frames that carry absolute poses from the previous segment.
  void segment_reset(std::span<const BridgeFrame> bridge) {
    if (bridge.size() < kMinBridge) throw Error(ErrorKind::BridgeTooShort, "bridge needs >= 3 frames");
    if (bridge.size() > kMaxBridge) throw Error(ErrorKind::BridgeTooLong, "bridge allows <= 10 frames");
    bank_.clear();
    if (config_.recalibrate_on_reset) {
      gate_.reset();
    } else {
      gate_.reset_counter();
    }
    std::vector<BridgeFrame> sorted(bridge.begin(), bridge.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const BridgeFrame& a, const BridgeFrame& b) { return a.id < b.id; });
    for (const BridgeFrame& b : sorted) bank_.insert(b.id, b.token.relabeled(b.id), b.pose);
    recent_.assign(sorted.begin(), sorted.end());
    if (!last_id_ || sorted.back().id > *last_id_) last_id_ = sorted.back().id;
    frames_since_admit_ = 0;
    segment_frames_ = sorted.size();
    ++segment_;
    segment_scale_ = scale_anchor_ ? scale_anchor_(sorted.front().id) : 1.0;
  }

  /// Resets using the most recent accepted frames as the bridge.
  void reset_from_recent() {
    if (recent_.size() < kMinBridge) {
      // Too little history for a bridge: keep the current segment.
      gate_.reset_counter();
      return;
    }
    const std::vector<BridgeFrame> bridge(recent_.begin(), recent_.end());
    segment_reset(bridge);
  }

 private:
  StreamEvent event(EventKind kind, FrameId frame, std::optional<double> score = std::nullopt) const {
    StreamEvent ev;
    ev.kind = kind;
    ev.frame = frame;
    ev.score = score;
    ev.segment = segment_;
    ev.bank_size = bank_.size();
    return ev;
  }

  void accept_origin(const FrameToken& token, std::vector<StreamEvent>& events) {
    const FrameId j = token.id();
    trajectory_.emplace(j, Pose::identity());
    bank_.insert(j, token, Pose::identity());
    gate_.count_unscored();
    frames_since_admit_ = 0;
    segment_frames_ = 1;
    remember(j, token, Pose::identity());
    events.push_back(event(EventKind::Accepted, j));
    events.push_back(event(EventKind::AdmittedToBank, j));
  }

  std::vector<PoseEdge> match_context(FrameId j, std::span<const PoseEdge> edges) const {
    const std::vector<FrameId> ctx = bank_.ids();
    std::map<FrameId, const PoseEdge*> by_src;
    for (const PoseEdge& e : edges) {
      if (e.dst != j || !bank_.find(e.src) || !by_src.emplace(e.src, &e).second) {
        throw Error(ErrorKind::MissingContextEdges,
                    "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) +
                        " does not match the context of frame " + std::to_string(j));
      }
    }
    std::vector<PoseEdge> out;
    out.reserve(ctx.size());
    for (FrameId i : ctx) {
      auto it = by_src.find(i);
      if (it == by_src.end()) {
        throw Error(ErrorKind::MissingContextEdges,
                    "missing edge " + std::to_string(i) + "->" + std::to_string(j));
      }
      PoseEdge e = *it->second;
      validate(e);
      e.rel_translation *= segment_scale_;
      out.push_back(e);
    }
    return out;
  }

  void remember(FrameId id, const FrameToken& token, const Pose& pose) {
    recent_.push_back({id, token, pose});
    while (recent_.size() > config_.bridge_len) recent_.pop_front();
  }

  StreamConfig config_;
  KeyframeBank bank_;
  OutlierGate gate_;
  std::map<FrameId, Pose> trajectory_;
  std::deque<BridgeFrame> recent_;
  std::optional<FrameId> last_id_;
  std::size_t frames_since_admit_ = 0;
  std::size_t segment_frames_ = 0;
  std::size_t segment_ = 0;
  double segment_scale_ = 1.0;
  ScaleAnchor scale_anchor_;
  FusionDiagnostics fusion_diag_;
};

}  // namespace relpose
