#pragma once

// Drivers that pull edges from a provider and run the estimators end to end.

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "relpose/eval.hpp"
#include "relpose/posegraph.hpp"
#include "relpose/provider.hpp"
#include "relpose/refine.hpp"
#include "relpose/stream.hpp"

namespace relpose {

struct StreamRunOptions {
  bool record_edges = false;          // keep accepted context edges for refinement
  bool anchor_scale = false;          // anchor each new segment with depth medians
  std::optional<FrameId> force_reset_after;  // reset right after this frame
};

struct StreamRun {
  Trajectory trajectory;
  std::vector<StreamEvent> events;
  EdgeStore edges;
  std::size_t max_bank_size = 0;     // after each frame; eviction may briefly exceed it within one
  std::size_t max_admission_gap = 0;  // accepted frames strictly between admissions
  std::size_t max_working_set = 0;
  std::size_t segments = 1;
};

/// Streams frames `ids` (strictly increasing) through a StreamEstimator.
inline StreamRun run_stream(const EdgeProvider& provider, std::span<const FrameId> ids,
                            const StreamConfig& config, const StreamRunOptions& options = {},
                            const std::function<void(const StreamEstimator&)>& observer = {}) {
  StreamEstimator est(config);
  if (options.anchor_scale) {
    est.set_scale_anchor([&provider](FrameId id) {
      const auto m = provider.depth_medians(id);
      return m ? anchor_scale(m->predicted, m->metric) : 1.0;
    });
  }
  StreamRun run;
  std::size_t gap = 0;
  std::vector<PoseEdge> edges;
  for (FrameId j : ids) {
    const FrameToken token = provider.token(j);
    edges.clear();
    for (FrameId i : est.context()) edges.push_back(provider.edge(i, j));
    const std::size_t segment_before = est.segment();
    const double scale = est.segment_scale();
    std::vector<StreamEvent> events = est.process_frame(token, edges);

    bool accepted = false, admitted = false;
    for (const StreamEvent& ev : events) {
      accepted |= ev.kind == EventKind::Accepted;
      admitted |= ev.kind == EventKind::AdmittedToBank;
    }
    if (admitted) {
      gap = 0;
    } else if (accepted) {
      ++gap;
      run.max_admission_gap = std::max(run.max_admission_gap, gap);
    }
    if (est.segment() != segment_before) gap = 0;
    if (options.record_edges && accepted) {
      for (const PoseEdge& e : edges) {
        PoseEdge scaled = e;
        scaled.rel_translation *= scale;
        run.edges.insert(scaled);
      }
    }
    if (options.force_reset_after && *options.force_reset_after == j && accepted) {
      est.reset_from_recent();
      StreamEvent ev;
      ev.kind = EventKind::SegmentReset;
      ev.frame = j;
      ev.segment = est.segment();
      ev.bank_size = est.bank().size();
      events.push_back(ev);
      gap = 0;
    }
    run.max_bank_size = std::max(run.max_bank_size, est.bank().size());
    run.max_working_set = std::max(run.max_working_set, est.working_set_entries());
    run.events.insert(run.events.end(), events.begin(), events.end());
    if (observer) observer(est);
  }
  run.trajectory = est.trajectory();
  run.segments = est.segment() + 1;
  return run;
}

/// Every ordered pair (i, j), i != j, over frames 1..n.
inline EdgeStore all_pair_edges(const EdgeProvider& provider, std::size_t n) {
  EdgeStore store;
  for (FrameId i = 1; i <= n; ++i) {
    for (FrameId j = 1; j <= n; ++j) {
      if (i != j) store.insert(provider.edge(i, j));
    }
  }
  return store;
}

/// Causal full-context aggregation: frame 1 is the origin, every later frame
/// fuses candidates from all earlier frames (top-k by mean confidence).
inline Trajectory aggregate_causal(const EdgeStore& edges, std::size_t n, const FusionOptions& fusion,
                                   FusionDiagnostics* diagnostics = nullptr) {
  Trajectory traj;
  traj.emplace(1, Pose::identity());
  std::vector<CandidatePose> candidates;
  for (FrameId j = 2; j <= n; ++j) {
    candidates.clear();
    for (FrameId i = 1; i < j; ++i) {
      if (const PoseEdge* e = edges.find(i, j)) candidates.push_back(compose_candidate(traj.at(i), *e));
    }
    if (candidates.empty()) {
      throw Error(ErrorKind::MissingContextEdges, "frame " + std::to_string(j) + " has no earlier edges");
    }
    traj.emplace(j, fuse_candidates(candidates, fusion, diagnostics));
  }
  return traj;
}

struct RefineSettings {
  double delta_rot = 0.05;
  double delta_trans = 0.1;
  RotationResidual rotation_residual = RotationResidual::Geodesic;
  RefinementOptions solver;
};

inline RefinementResult refine_trajectory(const Trajectory& init, const EdgeStore& edges,
                                          const RefineSettings& settings) {
  RefinementProblem p;
  p.poses = init;
  p.fixed = init.begin()->first;
  p.delta_rot = settings.delta_rot;
  p.delta_trans = settings.delta_trans;
  p.rotation_residual = settings.rotation_residual;
  for (const PoseEdge& e : edges.all()) {
    if (init.contains(e.src) && init.contains(e.dst)) p.edges.push_back(e);
  }
  return solve(p, settings.solver);
}

}  // namespace relpose
