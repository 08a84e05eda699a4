#pragma once

// Command implementations behind the CLI. Every command writes its artifacts
// into one output directory and is deterministic in (config, seed).

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "relpose/config.hpp"
#include "relpose/eval.hpp"
#include "relpose/oracle.hpp"
#include "relpose/pipeline.hpp"

namespace relpose {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "RELPOSE_OUTPUT_ROOT";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitAssertion = 3 };

namespace fs = std::filesystem;

/// `config.output` if set, else $RELPOSE_OUTPUT_ROOT/<command>, else
/// relpose-out/<command>.
inline fs::path resolve_output(const RunConfig& config, const std::string& command) {
  if (!config.output.empty()) return config.output;
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root && *root ? root : "relpose-out") / command;
}

namespace cmd_detail {

using nlohmann::json;

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorKind::IoError, "cannot write '" + p.string() + "'");
  return os;
}

inline void write_json(const fs::path& p, const json& j) {
  auto os = open_out(p);
  os << j.dump(2) << '\n';
}

inline void write_trajectory(const fs::path& p, const Trajectory& t) {
  auto os = open_out(p);
  write_tum(os, t);
}

inline void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config,
                           const std::vector<std::string>& artifacts) {
  write_json(dir / "manifest.json", json{{"command", command},
                                          {"version", kVersion},
                                          {"seed", config.seed},
                                          {"config_hash", config_hash(config)},
                                          {"config", to_json(config)},
                                          {"artifacts", artifacts}});
}

inline json report_json(const TrajectoryReport& r) {
  return json{{"ate_rmse", r.ate_rmse}, {"ate_norm", r.ate_norm}, {"rpe_t", r.rpe_t},
              {"rpe_r_deg", r.rpe_r}, {"rot_rmse_deg", r.rot_rmse}, {"frames", r.frames}};
}

inline json event_json(const StreamEvent& ev) {
  json j{{"kind", std::string(to_string(ev.kind))},
         {"frame", ev.frame},
         {"segment", ev.segment},
         {"bank_size", ev.bank_size}};
  j["score"] = ev.score ? json(*ev.score) : json(nullptr);
  j["evicted"] = ev.evicted ? json(*ev.evicted) : json(nullptr);
  return j;
}

inline Trajectory scene_trajectory(const SyntheticScene& scene) {
  Trajectory t;
  for (FrameId id = 1; id <= scene.size(); ++id) t.emplace(id, scene.pose(id));
  return t;
}

inline std::vector<FrameId> frame_range(std::size_t n) {
  std::vector<FrameId> ids(n);
  std::iota(ids.begin(), ids.end(), FrameId{1});
  return ids;
}

inline std::string k_label(std::size_t k) {
  return k == FusionOptions::kAll ? "all" : "top-" + std::to_string(k);
}

/// Runs fn(0..n-1) on a small worker pool, results in index order.
template <typename Fn>
auto parallel_map(std::size_t n, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  const std::size_t workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  std::vector<R> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += workers) {
    std::vector<std::future<R>> batch;
    for (std::size_t i = begin; i < std::min(n, begin + workers); ++i) {
      batch.push_back(std::async(std::launch::async, fn, i));
    }
    for (auto& f : batch) out.push_back(f.get());
  }
  return out;
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace cmd_detail

/// Writes scene.tum (ground truth) and scene.json (oracle config and seed).
inline void save_scene(const SyntheticScene& scene, const fs::path& dir) {
  using namespace cmd_detail;
  fs::create_directories(dir);
  write_trajectory(dir / "scene.tum", scene_trajectory(scene));
  RunConfig c;
  c.scene = scene.config();
  write_json(dir / "scene.json", json{{"seed", scene.seed()}, {"scene", to_json(c)["scene"]}});
}

inline SyntheticScene load_scene(const fs::path& dir) {
  std::ifstream cfg(dir / "scene.json");
  std::ifstream tum(dir / "scene.tum");
  if (!cfg || !tum) throw Error(ErrorKind::IoError, "cannot read scene from '" + dir.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
  if (!j.contains("seed") || !config_detail::is_count(j["seed"]) || !j.contains("scene")) {
    throw Error(ErrorKind::ParseError, "scene.json needs 'seed' and 'scene'");
  }
  RunConfig c;
  apply_json(c, nlohmann::json{{"scene", j["scene"]}});
  const Trajectory t = read_tum(tum);
  std::vector<Pose> poses;
  FrameId expect = 1;
  for (const auto& [id, p] : t) {
    if (id != expect++) throw Error(ErrorKind::ParseError, "scene frames must be 1..N");
    poses.push_back(p);
  }
  c.scene.frames = poses.size();
  return SyntheticScene(c.scene, j["seed"].get<std::uint64_t>(), std::move(poses));
}

/// Single streaming pass over a synthetic scene, optionally followed by
/// refinement over the accepted context edges.
inline int cmd_stream(const RunConfig& config, const fs::path& out, std::ostream& log) {
  using namespace cmd_detail;
  validate(config);
  fs::create_directories(out);
  const SyntheticScene scene = generate_scene(config.scene, config.seed);
  const std::vector<FrameId> ids = frame_range(scene.size());

  StreamRunOptions opts;
  opts.record_edges = config.refine;
  opts.anchor_scale = config.anchor_scale;
  const StreamRun run = run_stream(scene, ids, config.stream, opts);

  const Trajectory gt = restrict_to(scene_trajectory(scene), run.trajectory);
  std::size_t rejected = 0, resets = 0;
  {
    auto os = open_out(out / "events.ndjson");
    for (const StreamEvent& ev : run.events) {
      os << event_json(ev).dump() << '\n';
      rejected += ev.kind == EventKind::Rejected;
      resets += ev.kind == EventKind::SegmentReset;
    }
  }
  write_trajectory(out / "groundtruth.tum", gt);
  std::vector<std::string> artifacts = {"events.ndjson", "groundtruth.tum", "trajectory.tum", "report.json"};

  json report{{"frames", scene.size()},
              {"estimated_frames", run.trajectory.size()},
              {"rejected", rejected},
              {"segment_resets", resets},
              {"segments", run.segments},
              {"max_bank_size", run.max_bank_size},
              {"max_admission_gap", run.max_admission_gap},
              {"max_working_set", run.max_working_set},
              {"stream", report_json(evaluate_trajectory(run.trajectory, gt, config.alignment, config.rpe_delta))}};

  Trajectory final_traj = run.trajectory;
  if (config.refine) {
    const RefinementResult r = refine_trajectory(run.trajectory, run.edges, config.refine_settings);
    final_traj = r.poses;
    write_trajectory(out / "trajectory_stream.tum", run.trajectory);
    artifacts.push_back("trajectory_stream.tum");
    report["refined"] = report_json(evaluate_trajectory(final_traj, gt, config.alignment, config.rpe_delta));
    report["refinement"] = json{{"edges", run.edges.size()},
                                {"initial_objective", r.initial_objective},
                                {"final_objective", r.final_objective},
                                {"iterations", r.iterations},
                                {"converged", r.converged}};
  }
  write_trajectory(out / "trajectory.tum", final_traj);
  write_json(out / "report.json", report);
  write_manifest(out, "stream", config, artifacts);

  const json& headline = config.refine ? report["refined"] : report["stream"];
  log << "stream: " << run.trajectory.size() << "/" << scene.size() << " frames, " << run.segments
      << " segment(s), ATE " << headline["ate_rmse"].get<double>() << " (" << headline["ate_norm"].get<double>()
      << "% of path)\n";
  return kExitOk;
}

struct SweepRow {
  std::size_t seed_index = 0;
  std::string method;
  TrajectoryReport report;
};

/// Paired-seed comparison of top-k aggregation, uniform weighting, all-pairs
/// refinement and the streaming estimator.
inline std::vector<SweepRow> offline_sweep(const RunConfig& config) {
  using namespace cmd_detail;
  auto one = [&config](std::size_t s) {
    const std::uint64_t seed = rng::split(config.seed, rng::label("sweep"), s);
    const SyntheticScene scene = generate_scene(config.scene, seed);
    const std::size_t n = scene.size();
    const Trajectory gt = scene_trajectory(scene);
    const EdgeStore edges = all_pair_edges(scene, n);
    std::vector<SweepRow> rows;
    auto add = [&](const std::string& method, const Trajectory& est) {
      rows.push_back({s, method, evaluate_trajectory(est, restrict_to(gt, est), config.alignment, config.rpe_delta)});
    };
    FusionOptions fusion = config.stream.fusion;
    for (std::size_t k : config.k_sweep) {
      fusion.k = k;
      add(k_label(k), aggregate_causal(edges, n, fusion));
    }
    fusion.k = FusionOptions::kAll;
    const Trajectory all = aggregate_causal(edges, n, fusion);
    add("all+refine", refine_trajectory(all, edges, config.refine_settings).poses);
    FusionOptions uniform = fusion;
    uniform.weighting = FusionWeighting::Uniform;
    add("uniform", aggregate_causal(edges, n, uniform));
    add("stream", run_stream(scene, frame_range(n), config.stream).trajectory);
    return rows;
  };
  std::vector<SweepRow> rows;
  for (auto& batch : parallel_map(config.sweep_seeds, one)) rows.insert(rows.end(), batch.begin(), batch.end());
  return rows;
}

/// All-pairs edges, causal aggregation as initialization, then refinement.
inline int cmd_offline(const RunConfig& config, const fs::path& out, std::ostream& log) {
  using namespace cmd_detail;
  validate(config);
  fs::create_directories(out);
  const SyntheticScene scene = generate_scene(config.scene, config.seed);
  const std::size_t n = scene.size();
  const Trajectory gt = scene_trajectory(scene);
  const EdgeStore edges = all_pair_edges(scene, n);
  FusionDiagnostics diag;
  const Trajectory init = aggregate_causal(edges, n, config.stream.fusion, &diag);
  const RefinementResult r = refine_trajectory(init, edges, config.refine_settings);

  {
    auto os = open_out(out / "edges.txt");
    os << "# src dst qw qx qy qz tx ty tz conf_rot conf_trans\n";
    write_edges(os, edges.all());
  }
  write_trajectory(out / "groundtruth.tum", gt);
  write_trajectory(out / "trajectory_init.tum", init);
  write_trajectory(out / "trajectory.tum", r.poses);
  std::vector<std::string> artifacts = {"edges.txt", "groundtruth.tum", "trajectory_init.tum", "trajectory.tum",
                                        "report.json"};

  json report{{"frames", n},
              {"edges", edges.size()},
              {"degenerate_rotation_sums", diag.degenerate_rotation_sums},
              {"init", report_json(evaluate_trajectory(init, gt, config.alignment, config.rpe_delta))},
              {"refined", report_json(evaluate_trajectory(r.poses, gt, config.alignment, config.rpe_delta))},
              {"refinement",
               {{"initial_objective", r.initial_objective},
                {"final_objective", r.final_objective},
                {"iterations", r.iterations},
                {"converged", r.converged}}}};

  if (config.sweep_seeds > 0) {
    const std::vector<SweepRow> rows = offline_sweep(config);
    {
      auto os = open_out(out / "sweep.csv");
      os << "seed_index,method,ate_rmse,ate_norm,rot_rmse_deg,rpe_t,rpe_r_deg\n";
      for (const SweepRow& row : rows) {
        os << row.seed_index << ',' << row.method << ',' << csv_number(row.report.ate_rmse) << ','
           << csv_number(row.report.ate_norm) << ',' << csv_number(row.report.rot_rmse) << ','
           << csv_number(row.report.rpe_t) << ',' << csv_number(row.report.rpe_r) << '\n';
      }
    }
    std::map<std::string, std::map<std::string, double>> per_method;
    std::map<std::string, double> mean;
    for (const SweepRow& row : rows) {
      per_method[row.method][std::to_string(row.seed_index)] = row.report.ate_rmse;
      mean[row.method] += row.report.ate_rmse / static_cast<double>(config.sweep_seeds);
    }
    report["sweep"] = json{{"seeds", config.sweep_seeds}, {"mean_ate_rmse", mean}, {"win_rate", win_rate(per_method)}};
    artifacts.push_back("sweep.csv");
  }
  write_json(out / "report.json", report);
  write_manifest(out, "offline", config, artifacts);
  log << "offline: ATE " << report["init"]["ate_rmse"].get<double>() << " -> "
      << report["refined"]["ate_rmse"].get<double>() << " after " << r.iterations << " iterations\n";
  return kExitOk;
}

struct RobustRow {
  std::size_t distractors = 0;
  std::size_t trial = 0;
  RobustnessReport score;
  double ate_rmse = 0.0;  // over accepted clean frames; NaN if fewer than 3
};

inline std::vector<RobustRow> robust_trials(const RunConfig& config) {
  using namespace cmd_detail;
  const std::size_t per = config.robust_trials;
  auto one = [&config, per](std::size_t idx) {
    const std::size_t nd = config.robust_distractors[idx / per];
    const std::size_t trial = idx % per;
    const std::uint64_t seed = rng::split(config.seed, rng::label("robust"), nd, trial);
    OracleConfig clean_cfg = config.scene;
    clean_cfg.frames = std::max(clean_cfg.frames, config.robust_clean);
    OracleConfig other_cfg = config.scene;
    other_cfg.frames = config.robust_distractor_frames;
    const SyntheticScene scene = generate_scene(clean_cfg, rng::split(seed, rng::label("clean")));
    const SyntheticScene other = generate_scene(other_cfg, rng::split(seed, rng::label("other")));
    const FramePlan plan = make_distractor_stream(scene, other, config.robust_clean, nd, seed);
    const InterleavedProvider provider(scene, other, plan);
    const StreamRun run = run_stream(provider, frame_range(plan.entries.size()), config.stream);

    RobustRow row{nd, trial, robustness_score(run.events, plan), std::numeric_limits<double>::quiet_NaN()};
    Trajectory est, gt;
    for (const PlanEntry& e : plan.entries) {
      if (e.distractor || !run.trajectory.contains(e.stream_id)) continue;
      est.emplace(e.stream_id, run.trajectory.at(e.stream_id));
      gt.emplace(e.stream_id, provider.clean_pose(e.stream_id));
    }
    if (est.size() >= 3) row.ate_rmse = ate(est, gt, config.alignment).ate_rmse;
    return row;
  };
  return parallel_map(config.robust_distractors.size() * per, one);
}

/// Distractor-injection sweep: per-setting gate rejection rate and BFS.
inline int cmd_robust(const RunConfig& config, const fs::path& out, std::ostream& log) {
  using namespace cmd_detail;
  validate(config);
  fs::create_directories(out);
  const std::vector<RobustRow> rows = robust_trials(config);
  {
    auto os = open_out(out / "robust.csv");
    os << "distractors,trial,sr,clean_accept,bfs,ate_rmse\n";
    for (const RobustRow& r : rows) {
      os << r.distractors << ',' << r.trial << ',' << csv_number(r.score.distractor_reject_rate) << ','
         << csv_number(r.score.clean_accept_rate) << ',' << csv_number(r.score.bfs) << ','
         << csv_number(r.ate_rmse) << '\n';
    }
  }
  json summary = json::array();
  {
    auto os = open_out(out / "robust_summary.csv");
    os << "distractors,trials,mean_sr,mean_clean_accept,mean_bfs\n";
    for (std::size_t nd : config.robust_distractors) {
      double sr = 0.0, ca = 0.0, bfs = 0.0;
      std::size_t count = 0;
      for (const RobustRow& r : rows) {
        if (r.distractors != nd) continue;
        sr += r.score.distractor_reject_rate;
        ca += r.score.clean_accept_rate;
        bfs += r.score.bfs;
        ++count;
      }
      const double c = static_cast<double>(count);
      os << nd << ',' << count << ',' << csv_number(sr / c) << ',' << csv_number(ca / c) << ','
         << csv_number(bfs / c) << '\n';
      summary.push_back({{"distractors", nd}, {"mean_sr", sr / c}, {"mean_clean_accept", ca / c}, {"mean_bfs", bfs / c}});
      log << "robust: " << nd << " distractors, SR " << sr / c << ", BFS " << bfs / c << '\n';
    }
  }
  write_json(out / "report.json", json{{"clean", config.robust_clean}, {"trials", config.robust_trials},
                                       {"settings", summary}});
  write_manifest(out, "robust", config, {"robust.csv", "robust_summary.csv", "report.json"});
  return kExitOk;
}

struct DiagResult {
  ConfidenceBinSummary rotation;
  ConfidenceBinSummary translation;
};

/// Samples `config.diag_edges` distinct oracle edges (drawing further scenes
/// when one runs out of pairs) and bins their errors by confidence.
inline DiagResult confidence_diagnostics(const RunConfig& config) {
  std::vector<ConfidenceSample> rot, trans;
  std::mt19937_64 g(rng::split(config.seed, rng::label("diag")));
  for (std::uint64_t r = 0; rot.size() < config.diag_edges; ++r) {
    const SyntheticScene scene = generate_scene(config.scene, rng::split(config.seed, rng::label("diag-scene"), r));
    std::vector<std::pair<FrameId, FrameId>> pairs;
    for (FrameId i = 1; i <= scene.size(); ++i) {
      for (FrameId j = 1; j <= scene.size(); ++j) {
        if (i != j) pairs.emplace_back(i, j);
      }
    }
    std::shuffle(pairs.begin(), pairs.end(), g);
    for (const auto& [i, j] : pairs) {
      if (rot.size() == config.diag_edges) break;
      const PoseEdge e = scene.edge(i, j);
      const Pose truth = scene.true_relative(i, j);
      rot.push_back({e.conf_rot, quat_geodesic_deg(e.rel_rotation, truth.rotation)});
      trans.push_back({e.conf_trans, (e.rel_translation - truth.translation).norm()});
    }
  }
  return {confidence_bins(rot, config.diag_bins, ErrorComponent::Rotation),
          confidence_bins(trans, config.diag_bins, ErrorComponent::Translation)};
}

/// True when mean error strictly decreases from the lowest- to the
/// highest-confidence bin.
inline bool strictly_decreasing(const ConfidenceBinSummary& s) {
  for (std::size_t b = 1; b < s.bins.size(); ++b) {
    if (!(s.bins[b].mean_error < s.bins[b - 1].mean_error)) return false;
  }
  return true;
}

inline int cmd_diag(const RunConfig& config, bool assert_monotone, const fs::path& out, std::ostream& log) {
  using namespace cmd_detail;
  validate(config);
  fs::create_directories(out);
  const DiagResult d = confidence_diagnostics(config);
  json report;
  {
    auto os = open_out(out / "confidence_bins.csv");
    os << "component,bin,lo,hi,center,mean_error,std_error,count\n";
    for (const auto* s : {&d.rotation, &d.translation}) {
      const std::string name = s->component == ErrorComponent::Rotation ? "rotation" : "translation";
      json bins = json::array();
      for (std::size_t b = 0; b < s->bins.size(); ++b) {
        const ConfidenceBin& bin = s->bins[b];
        os << name << ',' << b << ',' << csv_number(bin.lo) << ',' << csv_number(bin.hi) << ','
           << csv_number(bin.center) << ',' << csv_number(bin.mean_error) << ',' << csv_number(bin.std_error)
           << ',' << bin.count << '\n';
        bins.push_back({{"center", bin.center}, {"mean_error", bin.mean_error}, {"std_error", bin.std_error},
                        {"count", bin.count}});
      }
      report[name] = {{"bins", bins}, {"strictly_decreasing", strictly_decreasing(*s)}};
    }
  }
  report["edges"] = config.diag_edges;
  report["error_units"] = {{"rotation", "degrees"}, {"translation", "scene units"}};
  write_json(out / "report.json", report);
  write_manifest(out, "diag", config, {"confidence_bins.csv", "report.json"});

  const bool ok = strictly_decreasing(d.rotation) && strictly_decreasing(d.translation);
  log << "diag: " << config.diag_edges << " edges, " << config.diag_bins << " bins, error "
      << (ok ? "strictly decreasing" : "NOT strictly decreasing") << " in confidence\n";
  return assert_monotone && !ok ? kExitAssertion : kExitOk;
}

/// Metrics for an estimated TUM trajectory against a reference one.
inline int cmd_eval(const RunConfig& config, const fs::path& est_path, const fs::path& ref_path,
                    const fs::path& out, std::ostream& log) {
  using namespace cmd_detail;
  auto load = [](const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw Error(ErrorKind::IoError, "cannot open '" + p.string() + "'");
    return read_tum(is);
  };
  const TrajectoryReport r = evaluate_trajectory(load(est_path), load(ref_path), config.alignment, config.rpe_delta);
  fs::create_directories(out);
  write_json(out / "report.json", report_json(r));
  write_manifest(out, "eval", config, {"report.json"});
  log << report_json(r).dump() << '\n';
  return kExitOk;
}

}  // namespace relpose
