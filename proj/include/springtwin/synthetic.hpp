#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "springtwin/core.hpp"
#include "springtwin/model.hpp"
#include "springtwin/scene.hpp"
#include "springtwin/sim.hpp"

namespace springtwin {

enum class Preset { rope_chain, cloth_grid, two_material_block };

inline const char* to_string(Preset p) {
  switch (p) {
    case Preset::rope_chain: return "rope-chain";
    case Preset::cloth_grid: return "cloth-grid";
    case Preset::two_material_block: return "two-material-block";
  }
  return "?";
}

inline Preset parse_preset(const std::string& s) {
  if (s == "rope-chain") return Preset::rope_chain;
  if (s == "cloth-grid") return Preset::cloth_grid;
  if (s == "two-material-block") return Preset::two_material_block;
  throw SchemaError("preset", "unknown preset '" + s + "'");
}

/// Recipe for one synthetic scene with known parameters.
struct SyntheticSpec {
  Preset preset = Preset::rope_chain;
  std::string script = "lift";  // lift | push | pull | oscillate
  std::size_t resolution = 60;  // rope: points; cloth: points per side; block: unused
  std::vector<double> part_stiffness{800.0};  // per true part, N/m
  double controller_stiffness = 2000.0;
  double gamma = 2.0;
  double delta = 0.98;
  double mu = 0.5;
  double epsilon = 0.1;
  double speed = 0.3;  // controller speed, m/s
  double noise_std = 1e-3;
  std::uint64_t seed = 0;
  std::size_t frames = 90;
  double frame_rate = 60.0;
  int substeps = 15;
  double train_ratio = 0.7;
  std::string id;
  std::string category;

  static SyntheticSpec defaults(Preset p) {
    SyntheticSpec s;
    s.preset = p;
    switch (p) {
      case Preset::rope_chain:
        break;
      case Preset::cloth_grid:
        s.resolution = 20;
        s.part_stiffness = {300.0};
        s.controller_stiffness = 1000.0;
        s.gamma = 0.3;
        s.delta = 0.99;
        s.substeps = 30;
        break;
      case Preset::two_material_block:
        s.script = "pull";
        s.resolution = 6;
        s.part_stiffness = {50.0, 5000.0};
        s.controller_stiffness = 3000.0;
        s.gamma = 0.5;
        s.delta = 0.995;
        s.speed = 0.2;
        s.substeps = 40;
        break;
    }
    return s;
  }

  std::size_t true_parts() const { return preset == Preset::two_material_block ? 2 : 1; }

  void validate() const {
    if (part_stiffness.size() != true_parts())
      throw DimensionError("part_stiffness", "one ground-truth stiffness per part required");
    const ParamRanges r;
    for (std::size_t p = 0; p < part_stiffness.size(); ++p)
      if (!(part_stiffness[p] >= r.stiffness.lo && part_stiffness[p] <= r.stiffness.hi))
        throw SchemaError("part_stiffness[" + std::to_string(p) + "]", "outside [1, 1e5] N/m");
    if (!(controller_stiffness > 0)) throw SchemaError("controller_stiffness", "must be positive");
    if (!(gamma >= 0)) throw SchemaError("gamma", "must be >= 0");
    if (!(delta > 0 && delta <= 1)) throw SchemaError("delta", "must lie in (0, 1]");
    if (!(mu >= 0)) throw SchemaError("mu", "must be >= 0");
    if (!(epsilon >= 0 && epsilon <= 1)) throw SchemaError("epsilon", "must lie in [0, 1]");
    if (!(noise_std >= 0)) throw SchemaError("noise_std", "must be >= 0");
    if (frames < 2) throw SchemaError("frames", "must be >= 2");
    if (!(frame_rate > 0)) throw SchemaError("frame_rate", "must be positive");
    if (substeps < 1) throw SchemaError("substeps", "must be >= 1");
    if (!(train_ratio > 0 && train_ratio <= 1)) throw SchemaError("train_ratio", "must lie in (0, 1]");
    if (resolution < 2) throw SchemaError("resolution", "must be >= 2");
    if (script != "lift" && script != "push" && script != "pull" && script != "oscillate")
      throw SchemaError("script", "must be one of lift, push, pull, oscillate");
  }
};

/// Parameters the observations were generated with. Never stored in the scene.
struct GroundTruth {
  std::string preset;
  std::vector<int> part_labels;         // true part of each point
  std::vector<double> part_stiffness;   // per true part
  std::vector<double> edge_stiffness;   // per edge of the generated graph
  double controller_stiffness = 0.0;
  double gamma = 0.0;
  double delta = 1.0;
  double mu = 0.0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;

  double mean_log_stiffness() const {
    double acc = 0.0;
    for (double k : edge_stiffness) acc += std::log(k);
    return edge_stiffness.empty() ? 0.0 : acc / static_cast<double>(edge_stiffness.size());
  }
};

struct SyntheticScene {
  Scene scene;
  GroundTruth truth;
};

namespace detail {

struct PresetGeometry {
  Points positions;
  std::vector<int> labels;
  Points controllers;  // positions at t = 0
  double total_mass = 1.0;
  std::vector<MaterialDistribution> materials;  // per true part
};

inline MaterialDistribution mix(const MaterialClassTable& t,
                                std::initializer_list<std::pair<const char*, double>> parts) {
  MaterialDistribution m;
  m.weights.assign(t.size(), 0.0);
  for (const auto& [name, w] : parts) m.weights[t.index_of(name)] = w;
  return m;
}

inline PresetGeometry preset_geometry(const SyntheticSpec& spec, const MaterialClassTable& table) {
  PresetGeometry g;
  switch (spec.preset) {
    case Preset::rope_chain: {
      const std::size_t n = spec.resolution;
      for (std::size_t i = 0; i < n; ++i)
        g.positions.emplace_back(static_cast<double>(i) / static_cast<double>(n - 1), 0.0, 0.0);
      g.labels.assign(n, 0);
      g.controllers = {g.positions.back() + Vec3(0.0, 0.0, 0.02)};
      g.materials = {mix(table, {{"rope", 0.7}, {"leather", 0.2}, {"cloth", 0.1}})};
      break;
    }
    case Preset::cloth_grid: {
      const std::size_t n = spec.resolution;
      const double h = 0.05;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
          g.positions.emplace_back(static_cast<double>(c) * h, static_cast<double>(r) * h, 0.0);
      g.labels.assign(n * n, 0);
      const double side = static_cast<double>(n - 1) * h;
      g.controllers = {Vec3(0.0, 0.0, 0.02), Vec3(side, 0.0, 0.02)};
      g.total_mass = 4.0;
      g.materials = {mix(table, {{"cloth", 0.8}, {"plush", 0.2}})};
      break;
    }
    case Preset::two_material_block: {
      const std::size_t n = spec.resolution;
      const std::size_t layers = 4;
      const double h = 0.04;
      const double width = static_cast<double>(n - 1) * h;
      for (int part = 0; part < 2; ++part) {
        const double x0 = part == 0 ? 0.0 : width + h;
        for (std::size_t k = 0; k < layers; ++k)
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
              g.positions.emplace_back(x0 + static_cast<double>(c) * h, static_cast<double>(r) * h,
                                       static_cast<double>(k) * h);
              g.labels.push_back(part);
            }
      }
      const double mid_y = width / 2.0, mid_z = static_cast<double>(layers - 1) * h / 2.0;
      g.controllers = {Vec3(-0.02, mid_y, mid_z), Vec3(2.0 * width + h + 0.02, mid_y, mid_z)};
      g.total_mass = 4.0;
      g.materials = {mix(table, {{"sponge", 0.5}, {"foam", 0.5}}),
                     mix(table, {{"rubber", 0.5}, {"plastic", 0.5}})};
      break;
    }
  }
  return g;
}

/// Controller trajectory for `script`, driven relative to the object centroid.
inline ControllerTrack script_track(const SyntheticSpec& spec, const Points& object,
                                    const Points& start) {
  Vec3 centre = Vec3::Zero();
  for (const auto& p : object) centre += p;
  centre /= static_cast<double>(object.size());
  ControllerTrack track;
  const double dt = 1.0 / spec.frame_rate;
  for (const auto& c0 : start) {
    Vec3 out = c0 - centre;
    out.z() = 0.0;
    out = out.norm() > 0 ? Vec3(out.normalized()) : Vec3::UnitX();
    const Vec3 side(-out.y(), out.x(), 0.0);
    Points p;
    for (std::size_t t = 0; t < spec.frames; ++t) {
      const double time = static_cast<double>(t) * dt;
      Vec3 d = Vec3::Zero();
      if (spec.script == "lift") {
        d = spec.speed * time * Vec3::UnitZ();
      } else if (spec.script == "push") {
        d = spec.speed * time * side;
      } else if (spec.script == "pull") {
        d = spec.speed * time * out;
      } else {
        const double w = 2.0 * std::numbers::pi * 1.2;
        const double a = spec.speed / w;
        d = a * std::sin(w * time) * side + a * (1.0 - std::cos(w * time)) * Vec3::UnitZ();
      }
      p.push_back(c0 + d);
    }
    track.positions.push_back(std::move(p));
  }
  return track;
}

}  // namespace detail

/// Builds a preset, simulates it with the ground-truth parameters through
/// the same topology pipeline used for fitting, and adds observation noise.
inline SyntheticScene gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> feature_noise(0.0, 0.05);
  std::normal_distribution<double> obs_noise(0.0, 1.0);

  SyntheticScene out;
  Scene& s = out.scene;
  const auto geo = detail::preset_geometry(spec, s.material_table);
  const std::size_t n = geo.positions.size();
  s.id = spec.id.empty() ? std::string(to_string(spec.preset)) + "-" + spec.script + "-" +
                               std::to_string(spec.seed)
                         : spec.id;
  s.category = spec.category.empty() ? to_string(spec.preset) : spec.category;
  s.frame_rate = spec.frame_rate;
  s.frames = spec.frames;
  s.train_frames = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::lround(spec.train_ratio * static_cast<double>(spec.frames))));
  s.train_frames = std::min(s.train_frames, s.frames);
  s.sim.dt = 1.0 / spec.frame_rate;
  s.sim.substeps = spec.substeps;
  s.initial = MassState::at_rest(geo.positions, geo.total_mass);

  const std::size_t d_feat = 4;
  s.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_feat));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d_feat; ++c)
      s.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          (static_cast<int>(c) == geo.labels[i] ? 1.0 : 0.0) + feature_noise(rng);
  for (std::size_t p = 0; p < geo.materials.size(); ++p) {
    PartMaterial pm;
    pm.centroid.assign(d_feat, 0.0);
    pm.centroid[p] = 1.0;
    pm.distribution = geo.materials[p];
    s.part_materials.push_back(std::move(pm));
  }
  s.controllers = detail::script_track(spec, geo.positions, geo.controllers);
  s.n_attach = 5;
  // placeholders so the scene validates before observations exist
  for (std::size_t i = 0; i < n; i += 2) {
    s.tracked_indices.push_back(i);
    s.tracked_targets.emplace_back(s.frames, geo.positions[i]);
  }
  s.target_clouds.assign(s.frames, geo.positions);

  ModelConfig cfg;
  cfg.seed = spec.seed;
  const auto structure = build_structure(s, cfg);
  const auto& graph = structure.graph;

  GroundTruth& gt = out.truth;
  gt.preset = to_string(spec.preset);
  gt.part_labels = geo.labels;
  gt.part_stiffness = spec.part_stiffness;
  for (const auto& e : graph.edges) {
    const double ka = spec.part_stiffness[static_cast<std::size_t>(geo.labels[e.i])];
    const double kb = spec.part_stiffness[static_cast<std::size_t>(geo.labels[e.j])];
    gt.edge_stiffness.push_back(ka == kb ? ka : std::sqrt(ka * kb));
  }
  gt.controller_stiffness = spec.controller_stiffness;
  gt.gamma = spec.gamma;
  gt.delta = spec.delta;
  gt.mu = spec.mu;
  gt.epsilon = spec.epsilon;
  gt.seed = spec.seed;

  PhysParams params;
  params.edge_stiffness = gt.edge_stiffness;
  params.controller_stiffness = gt.controller_stiffness;
  params.gamma = gt.gamma;
  params.delta = gt.delta;
  params.mu = gt.mu;
  params.epsilon = gt.epsilon;
  Rollout r;
  try {
    r = rollout(s.initial, graph, params, s.controllers, s.frames, s.sim);
  } catch (const InstabilityError& e) {
    throw InstabilityError(e.frame(), "ground-truth rollout diverged; use more substeps (smaller dt) "
                                      "or a softer ground-truth stiffness");
  }

  const double sd = spec.noise_std;
  for (std::size_t k = 0; k < s.tracked_indices.size(); ++k)
    for (std::size_t t = 0; t < s.frames; ++t) {
      const Vec3 noise(obs_noise(rng), obs_noise(rng), obs_noise(rng));
      s.tracked_targets[k][t] = r.trajectory[t][s.tracked_indices[k]] + sd * noise;
    }
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 noise(obs_noise(rng), obs_noise(rng), obs_noise(rng));
      s.target_clouds[t][i] = r.trajectory[t][i] + sd * noise;
    }
  validate_scene(s);
  return out;
}

/// The noiseless ground-truth trajectory of a generated scene.
inline std::vector<Points> ground_truth_trajectory(const Scene& scene, const GroundTruth& gt) {
  ModelConfig cfg;
  cfg.seed = gt.seed;
  const auto structure = build_structure(scene, cfg);
  if (structure.graph.edges.size() != gt.edge_stiffness.size())
    throw DimensionError("edge_stiffness", "does not match the scene's generated graph");
  PhysParams p{gt.edge_stiffness, gt.controller_stiffness, gt.gamma, gt.delta, gt.mu, gt.epsilon};
  return rollout(scene.initial, structure.graph, p, scene.controllers, scene.frames, scene.sim).trajectory;
}

inline json truth_to_json(const GroundTruth& gt) {
  return {{"preset", gt.preset},
          {"part_labels", gt.part_labels},
          {"part_stiffness", gt.part_stiffness},
          {"edge_stiffness", gt.edge_stiffness},
          {"controller_stiffness", gt.controller_stiffness},
          {"gamma", gt.gamma},
          {"delta", gt.delta},
          {"mu", gt.mu},
          {"epsilon", gt.epsilon},
          {"seed", gt.seed}};
}

inline GroundTruth truth_from_json(const json& j) {
  using namespace io;
  GroundTruth gt;
  const auto& preset = req(j, "preset", "");
  if (!preset.is_string()) throw SchemaError("preset", "expected a string");
  gt.preset = preset.get<std::string>();
  const auto& labels = array(req(j, "part_labels", ""), "part_labels");
  for (std::size_t i = 0; i < labels.size(); ++i)
    gt.part_labels.push_back(static_cast<int>(count(labels[i], at("part_labels", i))));
  gt.part_stiffness = numbers(req(j, "part_stiffness", ""), "part_stiffness");
  gt.edge_stiffness = numbers(req(j, "edge_stiffness", ""), "edge_stiffness");
  gt.controller_stiffness = num(req(j, "controller_stiffness", ""), "controller_stiffness");
  gt.gamma = num(req(j, "gamma", ""), "gamma");
  gt.delta = num(req(j, "delta", ""), "delta");
  gt.mu = num(req(j, "mu", ""), "mu");
  gt.epsilon = num(req(j, "epsilon", ""), "epsilon");
  gt.seed = count(req(j, "seed", ""), "seed");
  return gt;
}

/// Reads a generation recipe; absent fields keep the preset's defaults.
inline SyntheticSpec spec_from_json(const json& j) {
  using namespace io;
  const auto& preset = req(j, "preset", "");
  if (!preset.is_string()) throw SchemaError("preset", "expected a string");
  SyntheticSpec s = SyntheticSpec::defaults(parse_preset(preset.get<std::string>()));
  auto opt_num = [&](const char* key, double& into) {
    if (auto it = j.find(key); it != j.end()) into = num(*it, key);
  };
  auto opt_count = [&](const char* key, auto& into) {
    if (auto it = j.find(key); it != j.end())
      into = static_cast<std::remove_reference_t<decltype(into)>>(count(*it, key));
  };
  auto opt_str = [&](const char* key, std::string& into) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_string()) throw SchemaError(key, "expected a string");
      into = it->get<std::string>();
    }
  };
  opt_str("script", s.script);
  opt_str("id", s.id);
  opt_str("category", s.category);
  opt_count("resolution", s.resolution);
  if (auto it = j.find("part_stiffness"); it != j.end()) s.part_stiffness = numbers(*it, "part_stiffness");
  opt_num("controller_stiffness", s.controller_stiffness);
  opt_num("gamma", s.gamma);
  opt_num("delta", s.delta);
  opt_num("mu", s.mu);
  opt_num("epsilon", s.epsilon);
  opt_num("speed", s.speed);
  opt_num("noise_std", s.noise_std);
  opt_count("seed", s.seed);
  opt_count("frames", s.frames);
  opt_num("frame_rate", s.frame_rate);
  opt_count("substeps", s.substeps);
  opt_num("train_ratio", s.train_ratio);
  s.validate();
  return s;
}

}  // namespace springtwin
