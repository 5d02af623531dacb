#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "springtwin/core.hpp"
#include "springtwin/model.hpp"
#include "springtwin/scene.hpp"
#include "springtwin/spatial.hpp"

namespace springtwin {

/// Symmetric Chamfer distance with unsquared distances: the two directed
/// means are averaged.
inline double metric_cd(const Points& pred, const Points& target) {
  if (pred.empty() || target.empty()) throw SchemaError("chamfer", "point sets must be non-empty");
  const KdTree tt(target), pt(pred);
  double a = 0.0, b = 0.0;
  for (const auto& p : pred) a += std::sqrt(tt.nearest(p).dist2);
  for (const auto& q : target) b += std::sqrt(pt.nearest(q).dist2);
  return 0.5 * (a / static_cast<double>(pred.size()) + b / static_cast<double>(target.size()));
}

/// Mean Euclidean distance over matched trajectories [point][frame].
inline double metric_track(const std::vector<Points>& pred, const std::vector<Points>& target) {
  if (pred.empty()) throw SchemaError("tracked", "empty correspondence set");
  if (pred.size() != target.size()) throw DimensionError("tracked", "trajectory counts differ");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].size() != target[k].size()) throw DimensionError("tracked", "frame counts differ");
    for (std::size_t t = 0; t < pred[k].size(); ++t, ++n) acc += (pred[k][t] - target[k][t]).norm();
  }
  if (n == 0) throw SchemaError("tracked", "no frames to compare");
  return acc / static_cast<double>(n);
}

struct SplitMetrics {
  std::string name;
  std::size_t first_frame = 0;
  std::size_t frame_count = 0;
  double chamfer = 0.0;  // meters, mean over frames
  double track = 0.0;    // meters
};

struct EvalReport {
  std::string scene_id;
  SplitMetrics resimulation;
  SplitMetrics future;
};

namespace detail {

inline SplitMetrics split_metrics(const char* name, const Scene& scene,
                                  const std::vector<Points>& traj, std::size_t begin,
                                  std::size_t end) {
  SplitMetrics m;
  m.name = name;
  m.first_frame = begin;
  m.frame_count = end - begin;
  if (m.frame_count == 0) return m;
  for (std::size_t t = begin; t < end; ++t) m.chamfer += metric_cd(traj[t], scene.target_clouds[t]);
  m.chamfer /= static_cast<double>(m.frame_count);
  if (scene.tracked_indices.empty()) return m;
  std::vector<Points> pred, target;
  for (std::size_t k = 0; k < scene.tracked_indices.size(); ++k) {
    Points p, q;
    for (std::size_t t = begin; t < end; ++t) {
      p.push_back(traj[t][scene.tracked_indices[k]]);
      q.push_back(scene.tracked_targets[k][t]);
    }
    pred.push_back(std::move(p));
    target.push_back(std::move(q));
  }
  m.track = metric_track(pred, target);
  return m;
}

}  // namespace detail

/// Metrics for the observed window [0, T_train) and the held-out window [T_train, T).
inline EvalReport evaluate_trajectory(const Scene& scene, const std::vector<Points>& traj) {
  if (traj.size() != scene.frames)
    throw DimensionError("trajectory", "has " + std::to_string(traj.size()) + " frames, scene has " +
                                           std::to_string(scene.frames));
  for (std::size_t t = 0; t < traj.size(); ++t)
    if (traj[t].size() != scene.point_count())
      throw DimensionError("trajectory[" + std::to_string(t) + "]", "point count does not match scene");
  EvalReport r;
  r.scene_id = scene.id;
  r.resimulation = detail::split_metrics("resimulation", scene, traj, 0, scene.train_frames);
  r.future = detail::split_metrics("future", scene, traj, scene.train_frames, scene.frames);
  return r;
}

/// Track error over the held-out window of holding the last observed
/// tracked positions fixed.
inline double persistence_track_error(const Scene& scene) {
  if (scene.train_frames >= scene.frames) throw SchemaError("train_frames", "no held-out window");
  std::vector<Points> pred, target;
  for (const auto& tr : scene.tracked_targets) {
    Points p, q;
    for (std::size_t t = scene.train_frames; t < scene.frames; ++t) {
      p.push_back(tr[scene.train_frames - 1]);
      q.push_back(tr[t]);
    }
    pred.push_back(std::move(p));
    target.push_back(std::move(q));
  }
  return metric_track(pred, target);
}

inline constexpr int kTrajectoryVersion = 1;

/// Trajectory file: {version, scene, frames, positions[frame][point]}.
inline json trajectory_to_json(const std::string& scene_id, const std::vector<Points>& traj) {
  json frames = json::array();
  for (const auto& f : traj) frames.push_back(io::to_json(f));
  return {{"version", kTrajectoryVersion}, {"scene", scene_id}, {"frames", traj.size()}, {"positions", frames}};
}

inline std::vector<Points> trajectory_from_json(const json& j) {
  using namespace io;
  if (!j.is_object()) throw SchemaError("$", "trajectory must be a JSON object");
  if (count(req(j, "version", ""), "version") != static_cast<std::size_t>(kTrajectoryVersion))
    throw SchemaError("version", "unsupported trajectory version");
  const std::size_t frames = count(req(j, "frames", ""), "frames");
  const auto& pos = array(req(j, "positions", ""), "positions");
  if (pos.size() != frames) throw DimensionError("positions", "length must equal frames");
  std::vector<Points> traj;
  for (std::size_t t = 0; t < frames; ++t) {
    traj.push_back(points(pos[t], at("positions", t)));
    if (traj[t].size() != traj[0].size()) throw DimensionError(at("positions", t), "point count changes");
  }
  return traj;
}

inline json report_to_json(const EvalReport& r) {
  auto split = [](const SplitMetrics& m) {
    return json{{"split", m.name},
                {"first_frame", m.first_frame},
                {"frames", m.frame_count},
                {"chamfer_m", m.chamfer},
                {"track_m", m.track}};
  };
  return {{"scene", r.scene_id}, {"splits", json::array({split(r.resimulation), split(r.future)})}};
}

struct ParameterStats {
  std::string parameter;
  bool log_space = false;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double cv = 0.0;   // std / |mean|
};

struct CategoryConsistency {
  std::string category;
  std::size_t scenes = 0;
  std::vector<ParameterStats> parameters;
};

struct ConsistencyReport {
  std::vector<CategoryConsistency> categories;  // sorted by name
  std::vector<std::string> skipped;             // categories with a single scene
};

/// Sample mean, sample standard deviation and coefficient of variation.
inline ParameterStats sample_stats(const std::string& name, const std::vector<double>& v,
                                   bool log_space) {
  if (v.size() < 2) throw SchemaError(name, "need at least two values");
  ParameterStats s;
  s.parameter = name;
  s.log_space = log_space;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  s.cv = s.mean != 0.0 ? s.std / std::abs(s.mean) : (s.std == 0.0 ? 0.0 : INFINITY);
  return s;
}

/// Per-category spread of fitted parameters; stiffnesses and gamma in log-space.
inline ConsistencyReport consistency_report(const std::vector<ParameterSummary>& fits) {
  std::map<std::string, std::vector<const ParameterSummary*>> by_cat;
  for (const auto& f : fits) by_cat[f.category].push_back(&f);
  ConsistencyReport r;
  for (const auto& [cat, list] : by_cat) {
    if (list.size() < 2) {
      r.skipped.push_back(cat);
      continue;
    }
    CategoryConsistency c;
    c.category = cat;
    c.scenes = list.size();
    auto collect = [&](auto get) {
      std::vector<double> v;
      for (const auto* f : list) v.push_back(get(*f));
      return v;
    };
    c.parameters.push_back(sample_stats(
        "stiffness", collect([](const ParameterSummary& f) { return f.mean_log_stiffness; }), true));
    c.parameters.push_back(sample_stats(
        "controller_stiffness",
        collect([](const ParameterSummary& f) { return std::log(f.controller_stiffness); }), true));
    c.parameters.push_back(
        sample_stats("gamma", collect([](const ParameterSummary& f) { return std::log(f.gamma); }), true));
    c.parameters.push_back(
        sample_stats("delta", collect([](const ParameterSummary& f) { return f.delta; }), false));
    c.parameters.push_back(
        sample_stats("mu", collect([](const ParameterSummary& f) { return f.mu; }), false));
    c.parameters.push_back(
        sample_stats("epsilon", collect([](const ParameterSummary& f) { return f.epsilon; }), false));
    r.categories.push_back(std::move(c));
  }
  return r;
}

inline json summary_to_json(const ParameterSummary& s) {
  return {{"id", s.id},
          {"category", s.category},
          {"mean_log_stiffness", s.mean_log_stiffness},
          {"part_mean_log_stiffness", s.part_mean_log_stiffness},
          {"controller_stiffness", s.controller_stiffness},
          {"gamma", s.gamma},
          {"delta", s.delta},
          {"mu", s.mu},
          {"epsilon", s.epsilon}};
}

inline ParameterSummary summary_from_json(const json& j) {
  using namespace io;
  ParameterSummary s;
  const auto& id = req(j, "id", "");
  const auto& cat = req(j, "category", "");
  if (!id.is_string()) throw SchemaError("id", "expected a string");
  if (!cat.is_string()) throw SchemaError("category", "expected a string");
  s.id = id.get<std::string>();
  s.category = cat.get<std::string>();
  s.mean_log_stiffness = num(req(j, "mean_log_stiffness", ""), "mean_log_stiffness");
  const auto& parts = array(req(j, "part_mean_log_stiffness", ""), "part_mean_log_stiffness");
  for (const auto& v : parts) s.part_mean_log_stiffness.push_back(v.is_null() ? NAN : v.get<double>());
  s.controller_stiffness = num(req(j, "controller_stiffness", ""), "controller_stiffness");
  s.gamma = num(req(j, "gamma", ""), "gamma");
  s.delta = num(req(j, "delta", ""), "delta");
  s.mu = num(req(j, "mu", ""), "mu");
  s.epsilon = num(req(j, "epsilon", ""), "epsilon");
  return s;
}

inline json consistency_to_json(const ConsistencyReport& r) {
  json cats = json::array();
  for (const auto& c : r.categories) {
    json params = json::array();
    for (const auto& p : c.parameters)
      params.push_back({{"parameter", p.parameter},
                        {"log_space", p.log_space},
                        {"mean", p.mean},
                        {"std", p.std},
                        {"cv", p.cv}});
    cats.push_back({{"category", c.category}, {"scenes", c.scenes}, {"parameters", params}});
  }
  return {{"categories", cats}, {"skipped", r.skipped}};
}

}  // namespace springtwin
