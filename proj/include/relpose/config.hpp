#pragma once

// Run configuration: one JSON document with nested sections. Precedence is
// built-in defaults < config file < command-line flags. Unknown keys are
// rejected.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/oracle.hpp"
#include "relpose/pipeline.hpp"
#include "relpose/stream.hpp"

namespace relpose {

struct RunConfig {
  OracleConfig scene;
  StreamConfig stream;
  bool anchor_scale = false;
  bool refine = false;                              // stream: refine after the pass
  RefineSettings refine_settings;
  Alignment alignment = Alignment::Sim3;
  std::size_t rpe_delta = 1;

  std::size_t sweep_seeds = 0;                      // offline: paired-seed k sweep when > 0
  std::vector<std::size_t> k_sweep = {1, 5, 10, FusionOptions::kAll};

  std::size_t robust_clean = 30;
  std::vector<std::size_t> robust_distractors = {10, 30, 50};
  std::size_t robust_trials = 10;
  std::size_t robust_distractor_frames = 60;

  std::size_t diag_edges = 10000;
  std::size_t diag_bins = 5;

  std::uint64_t seed = 0;
  std::string output;  // empty: derived from the environment
};

namespace config_detail {

using nlohmann::json;

inline bool is_count(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

inline json k_to_json(std::size_t k) { return k == FusionOptions::kAll ? json("all") : json(k); }

inline std::size_t k_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "all") return FusionOptions::kAll;
    throw Error(ErrorKind::InvalidConfig, "k must be a positive integer or \"all\"");
  }
  if (!is_count(j) || j.get<std::size_t>() == 0) {
    throw Error(ErrorKind::InvalidConfig, "k must be a positive integer or \"all\"");
  }
  return j.get<std::size_t>();
}

inline std::string weighting_name(FusionWeighting w) {
  switch (w) {
    case FusionWeighting::Softmax: return "softmax";
    case FusionWeighting::LogSoftmax: return "log-softmax";
    case FusionWeighting::Uniform: return "uniform";
  }
  return "softmax";
}

inline FusionWeighting parse_weighting(const std::string& s) {
  if (s == "softmax") return FusionWeighting::Softmax;
  if (s == "log-softmax") return FusionWeighting::LogSoftmax;
  if (s == "uniform") return FusionWeighting::Uniform;
  throw Error(ErrorKind::InvalidConfig, "unknown fusion weighting '" + s + "'");
}

/// Reads `key` from `obj` into `out` when present, with type checking.
template <typename T>
void read(const json& obj, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw Error(ErrorKind::InvalidConfig, "");
    } else if constexpr (std::is_integral_v<T>) {
      if (!is_count(*it)) throw Error(ErrorKind::InvalidConfig, "");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw Error(ErrorKind::InvalidConfig, "");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "'");
  }
}

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items()) {
    if (!keys.contains(k)) throw Error(ErrorKind::InvalidConfig, "unknown key '" + where + "." + k + "'");
  }
}

}  // namespace config_detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  using namespace config_detail;
  json sweep = json::array();
  for (std::size_t k : c.k_sweep) sweep.push_back(k_to_json(k));
  return json{
      {"scene",
       {{"family", std::string(to_string(c.scene.family))},
        {"frames", c.scene.frames},
        {"radius", c.scene.radius},
        {"step", c.scene.step},
        {"turn_rate", c.scene.turn_rate},
        {"rot_noise", c.scene.rot_noise},
        {"trans_noise", c.scene.trans_noise},
        {"gap_growth", c.scene.gap_growth},
        {"noise_floor", c.scene.noise_floor},
        {"token_dim", c.scene.token_dim},
        {"token_length_scale", c.scene.token_length_scale},
        {"token_view_weight", c.scene.token_view_weight},
        {"alpha", c.scene.alpha},
        {"conf_jitter", c.scene.conf_jitter},
        {"depth_jitter", c.scene.depth_jitter},
        {"distractor_noise_factor", c.scene.distractor_noise_factor}}},
      {"stream",
       {{"tau", c.stream.tau},
        {"delta_max", c.stream.delta_max},
        {"m_max", c.stream.m_max},
        {"n_cal", c.stream.n_cal},
        {"tau_out", c.stream.tau_out},
        {"n_rej", c.stream.n_rej},
        {"l_max", c.stream.l_max},
        {"bridge_len", c.stream.bridge_len},
        {"recalibrate_on_reset", c.stream.recalibrate_on_reset},
        {"anchor_scale", c.anchor_scale}}},
      {"fusion", {{"k", k_to_json(c.stream.fusion.k)}, {"weighting", weighting_name(c.stream.fusion.weighting)}}},
      {"refine",
       {{"enabled", c.refine},
        {"delta_rot", c.refine_settings.delta_rot},
        {"delta_trans", c.refine_settings.delta_trans},
        {"max_iters", c.refine_settings.solver.max_iters},
        {"grad_tol", c.refine_settings.solver.grad_tol},
        {"rotation_residual",
         c.refine_settings.rotation_residual == RotationResidual::Geodesic ? "geodesic" : "chordal"}}},
      {"eval", {{"alignment", c.alignment == Alignment::Sim3 ? "sim3" : "se3"}, {"rpe_delta", c.rpe_delta}}},
      {"offline", {{"sweep_seeds", c.sweep_seeds}, {"k_sweep", sweep}}},
      {"robust",
       {{"clean", c.robust_clean},
        {"distractors", c.robust_distractors},
        {"trials", c.robust_trials},
        {"distractor_frames", c.robust_distractor_frames}}},
      {"diag", {{"edges", c.diag_edges}, {"bins", c.diag_bins}}},
      {"seed", c.seed},
      {"output", c.output},
  };
}

inline void validate(const RunConfig& c) {
  validate(c.scene);
  validate(c.stream);
  if (!(c.refine_settings.delta_rot > 0.0) || !(c.refine_settings.delta_trans > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "refine deltas must be positive");
  }
  if (c.rpe_delta == 0) throw Error(ErrorKind::InvalidConfig, "rpe_delta must be positive");
  if (c.k_sweep.empty()) throw Error(ErrorKind::InvalidConfig, "k_sweep must not be empty");
  if (c.robust_clean < kCleanPrefix) throw Error(ErrorKind::InvalidConfig, "robust.clean must be >= 3");
  if (c.robust_trials == 0) throw Error(ErrorKind::InvalidConfig, "robust.trials must be positive");
  if (c.robust_distractor_frames < 2) throw Error(ErrorKind::InvalidConfig, "robust.distractor_frames must be >= 2");
  if (c.diag_bins == 0 || c.diag_edges < c.diag_bins) {
    throw Error(ErrorKind::InvalidConfig, "diag needs edges >= bins > 0");
  }
}

/// Overlays `j` onto `c`.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  using namespace config_detail;
  reject_unknown(j, "config", {"scene", "stream", "fusion", "refine", "eval", "offline", "robust", "diag", "seed", "output"});
  if (auto it = j.find("scene"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "scene",
                   {"family", "frames", "radius", "step", "turn_rate", "rot_noise", "trans_noise", "gap_growth",
                    "noise_floor", "token_dim", "token_length_scale", "token_view_weight", "alpha", "conf_jitter",
                    "depth_jitter", "distractor_noise_factor"});
    if (auto f = s.find("family"); f != s.end()) {
      if (!f->is_string()) throw Error(ErrorKind::InvalidConfig, "scene.family must be a string");
      c.scene.family = parse_family(f->get<std::string>());
    }
    read(s, "frames", c.scene.frames);
    read(s, "radius", c.scene.radius);
    read(s, "step", c.scene.step);
    read(s, "turn_rate", c.scene.turn_rate);
    read(s, "rot_noise", c.scene.rot_noise);
    read(s, "trans_noise", c.scene.trans_noise);
    read(s, "gap_growth", c.scene.gap_growth);
    read(s, "noise_floor", c.scene.noise_floor);
    read(s, "token_dim", c.scene.token_dim);
    read(s, "token_length_scale", c.scene.token_length_scale);
    read(s, "token_view_weight", c.scene.token_view_weight);
    read(s, "alpha", c.scene.alpha);
    read(s, "conf_jitter", c.scene.conf_jitter);
    read(s, "depth_jitter", c.scene.depth_jitter);
    read(s, "distractor_noise_factor", c.scene.distractor_noise_factor);
  }
  if (auto it = j.find("stream"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "stream",
                   {"tau", "delta_max", "m_max", "n_cal", "tau_out", "n_rej", "l_max", "bridge_len",
                    "recalibrate_on_reset", "anchor_scale"});
    read(s, "tau", c.stream.tau);
    read(s, "delta_max", c.stream.delta_max);
    read(s, "m_max", c.stream.m_max);
    read(s, "n_cal", c.stream.n_cal);
    read(s, "tau_out", c.stream.tau_out);
    read(s, "n_rej", c.stream.n_rej);
    read(s, "l_max", c.stream.l_max);
    read(s, "bridge_len", c.stream.bridge_len);
    read(s, "recalibrate_on_reset", c.stream.recalibrate_on_reset);
    read(s, "anchor_scale", c.anchor_scale);
  }
  if (auto it = j.find("fusion"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "fusion", {"k", "weighting"});
    if (auto k = s.find("k"); k != s.end()) c.stream.fusion.k = k_from_json(*k);
    if (auto w = s.find("weighting"); w != s.end()) {
      if (!w->is_string()) throw Error(ErrorKind::InvalidConfig, "fusion.weighting must be a string");
      c.stream.fusion.weighting = parse_weighting(w->get<std::string>());
    }
  }
  if (auto it = j.find("refine"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "refine", {"enabled", "delta_rot", "delta_trans", "max_iters", "grad_tol", "rotation_residual"});
    read(s, "enabled", c.refine);
    read(s, "delta_rot", c.refine_settings.delta_rot);
    read(s, "delta_trans", c.refine_settings.delta_trans);
    read(s, "max_iters", c.refine_settings.solver.max_iters);
    read(s, "grad_tol", c.refine_settings.solver.grad_tol);
    if (auto r = s.find("rotation_residual"); r != s.end()) {
      const std::string v = r->is_string() ? r->get<std::string>() : "";
      if (v == "geodesic") {
        c.refine_settings.rotation_residual = RotationResidual::Geodesic;
      } else if (v == "chordal") {
        c.refine_settings.rotation_residual = RotationResidual::Chordal;
      } else {
        throw Error(ErrorKind::InvalidConfig, "refine.rotation_residual must be geodesic or chordal");
      }
    }
  }
  if (auto it = j.find("eval"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "eval", {"alignment", "rpe_delta"});
    if (auto a = s.find("alignment"); a != s.end()) {
      const std::string v = a->is_string() ? a->get<std::string>() : "";
      if (v == "sim3") {
        c.alignment = Alignment::Sim3;
      } else if (v == "se3") {
        c.alignment = Alignment::SE3;
      } else {
        throw Error(ErrorKind::InvalidConfig, "eval.alignment must be sim3 or se3");
      }
    }
    read(s, "rpe_delta", c.rpe_delta);
  }
  if (auto it = j.find("offline"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "offline", {"sweep_seeds", "k_sweep"});
    read(s, "sweep_seeds", c.sweep_seeds);
    if (auto k = s.find("k_sweep"); k != s.end()) {
      if (!k->is_array()) throw Error(ErrorKind::InvalidConfig, "offline.k_sweep must be an array");
      c.k_sweep.clear();
      for (const json& v : *k) c.k_sweep.push_back(k_from_json(v));
    }
  }
  if (auto it = j.find("robust"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "robust", {"clean", "distractors", "trials", "distractor_frames"});
    read(s, "clean", c.robust_clean);
    if (auto d = s.find("distractors"); d != s.end()) {
      if (!d->is_array()) throw Error(ErrorKind::InvalidConfig, "robust.distractors must be an array");
      c.robust_distractors.clear();
      for (const json& v : *d) {
        if (!is_count(v)) throw Error(ErrorKind::InvalidConfig, "robust.distractors entries must be counts");
        c.robust_distractors.push_back(v.get<std::size_t>());
      }
    }
    read(s, "trials", c.robust_trials);
    read(s, "distractor_frames", c.robust_distractor_frames);
  }
  if (auto it = j.find("diag"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "diag", {"edges", "bins"});
    read(s, "edges", c.diag_edges);
    read(s, "bins", c.diag_bins);
  }
  read(j, "seed", c.seed);
  if (auto it = j.find("output"); it != j.end()) {
    if (!it->is_string()) throw Error(ErrorKind::InvalidConfig, "output must be a string");
    c.output = it->get<std::string>();
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  validate(c);
  return c;
}

/// Hex FNV-1a digest of the canonical JSON form.
inline std::string config_hash(const RunConfig& c) {
  const std::uint64_t h = rng::label(to_json(c).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace relpose
