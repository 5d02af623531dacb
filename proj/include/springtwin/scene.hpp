#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "springtwin/core.hpp"
#include "springtwin/material.hpp"
#include "springtwin/predictor.hpp"
#include "springtwin/sim.hpp"

namespace springtwin {

using json = nlohmann::json;

inline constexpr int kSceneVersion = 1;

/// Upstream material query for one part, keyed by its feature centroid.
struct PartMaterial {
  std::vector<double> centroid;
  MaterialDistribution distribution;
};

/// Observations of one interaction.
struct Scene {
  std::string id;
  std::string category;
  double frame_rate = 60.0;
  std::size_t frames = 1;
  std::size_t train_frames = 1;
  SimConfig sim;  // dt is derived from frame_rate
  MassState initial;
  Eigen::MatrixXd features;            // N x d_feat
  std::optional<json> appearance;      // opaque per-point payload
  ControllerTrack controllers;
  std::size_t n_attach = 5;
  std::vector<std::size_t> tracked_indices;
  std::vector<Points> tracked_targets;  // [tracked][frame]
  std::vector<Points> target_clouds;    // [frame][point]
  MaterialClassTable material_table = MaterialClassTable::defaults();
  std::vector<PartMaterial> part_materials;
  std::optional<MaterialDistribution> object_material;
  std::optional<MotionFeature> motion_feature;

  std::size_t point_count() const { return initial.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
};

namespace io {

inline std::string at(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}
inline std::string at(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

inline const json& req(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path.empty() ? "$" : path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(at(path, key), "missing required field");
  return *it;
}

inline double num(const json& j, const std::string& path) {
  if (j.is_null()) throw NonFiniteError(path, "non-finite number");
  if (!j.is_number()) throw SchemaError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw NonFiniteError(path, "non-finite number");
  return v;
}

inline std::size_t count(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::size_t>();
  if (!j.is_number_integer() || j.get<long long>() < 0)
    throw SchemaError(path, "expected a non-negative integer");
  return j.get<std::size_t>();
}

inline const json& array(const json& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path, "expected an array");
  return j;
}

inline std::vector<double> numbers(const json& j, const std::string& path) {
  array(j, path);
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(num(j[i], at(path, i)));
  return out;
}

inline Vec3 vec3(const json& j, const std::string& path) {
  array(j, path);
  if (j.size() != 3) throw DimensionError(path, "expected 3 components");
  return {num(j[0], at(path, 0)), num(j[1], at(path, 1)), num(j[2], at(path, 2))};
}

inline Points points(const json& j, const std::string& path) {
  array(j, path);
  Points out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(vec3(j[i], at(path, i)));
  return out;
}

inline Interval interval(const json& j, const std::string& path) {
  const auto v = numbers(j, path);
  if (v.size() != 2) throw DimensionError(path, "expected [lo, hi]");
  if (v[0] > v[1]) throw SchemaError(path, "lo must be <= hi");
  return {v[0], v[1]};
}

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json to_json(const Points& p) {
  json a = json::array();
  for (const auto& v : p) a.push_back(to_json(v));
  return a;
}
inline json to_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }

inline json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path.string(), "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string(), std::string("parse error: ") + e.what());
  }
}

inline void write_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError(path.string(), "cannot write file");
  out << j.dump() << '\n';
}

inline MaterialClassTable table_from_json(const json& j, const std::string& path) {
  MaterialClassTable t;
  array(j, path);
  for (std::size_t q = 0; q < j.size(); ++q) {
    const auto p = at(path, q);
    const auto& r = j[q];
    MaterialClass c;
    const auto& name = req(r, "name", p);
    if (!name.is_string()) throw SchemaError(at(p, "name"), "expected a string");
    c.name = name.get<std::string>();
    c.log_stiffness_mean = num(req(r, "log_stiffness_mean", p), at(p, "log_stiffness_mean"));
    c.log_stiffness_std = num(req(r, "log_stiffness_std", p), at(p, "log_stiffness_std"));
    c.damping = interval(req(r, "damping_range", p), at(p, "damping_range"));
    c.drag = interval(req(r, "drag_range", p), at(p, "drag_range"));
    c.friction = interval(req(r, "friction_range", p), at(p, "friction_range"));
    c.elasticity = interval(req(r, "elasticity_range", p), at(p, "elasticity_range"));
    t.classes.push_back(std::move(c));
  }
  t.validate(path);
  return t;
}

inline json table_to_json(const MaterialClassTable& t) {
  json a = json::array();
  for (const auto& c : t.classes)
    a.push_back({{"name", c.name},
                 {"log_stiffness_mean", c.log_stiffness_mean},
                 {"log_stiffness_std", c.log_stiffness_std},
                 {"damping_range", to_json(c.damping)},
                 {"drag_range", to_json(c.drag)},
                 {"friction_range", to_json(c.friction)},
                 {"elasticity_range", to_json(c.elasticity)}});
  return a;
}

}  // namespace io

/// Checks every scene invariant; throws with the offending field path.
inline void validate_scene(const Scene& s) {
  const std::size_t n = s.initial.size();
  if (!(s.frame_rate > 0) || !std::isfinite(s.frame_rate))
    throw SchemaError("frame_rate", "must be positive");
  if (s.frames < 1) throw SchemaError("frames", "must be >= 1");
  if (s.train_frames < 1) throw SchemaError("train_frames", "must be >= 1");
  if (s.train_frames > s.frames) throw SchemaError("train_frames", "must not exceed frames");
  if (s.sim.substeps < 1) throw SchemaError("sim.substeps", "must be >= 1");
  if (!s.sim.gravity.allFinite()) throw NonFiniteError("sim.gravity", "non-finite");
  if (!std::isfinite(s.sim.ground_height)) throw NonFiniteError("sim.ground_height", "non-finite");
  if (n == 0) throw SchemaError("initial.positions", "must contain at least one point");
  if (s.initial.velocities.size() != n)
    throw DimensionError("initial.velocities", "length must equal number of points");
  if (s.initial.masses.size() != n)
    throw DimensionError("initial.masses", "length must equal number of points");
  for (std::size_t i = 0; i < n; ++i) {
    if (!s.initial.positions[i].allFinite())
      throw NonFiniteError(io::at("initial.positions", i), "non-finite");
    if (!s.initial.velocities[i].allFinite())
      throw NonFiniteError(io::at("initial.velocities", i), "non-finite");
    if (!std::isfinite(s.initial.masses[i]))
      throw NonFiniteError(io::at("initial.masses", i), "non-finite");
    if (!(s.initial.masses[i] > 0)) throw SchemaError(io::at("initial.masses", i), "must be positive");
  }
  if (static_cast<std::size_t>(s.features.rows()) != n)
    throw DimensionError("features", "one feature vector per point required");
  if (s.features.cols() < 1) throw DimensionError("features", "feature dimension must be >= 1");
  if (!s.features.allFinite()) throw NonFiniteError("features", "non-finite feature value");
  if (s.appearance && s.appearance->is_array() && s.appearance->size() != n)
    throw DimensionError("appearance", "one entry per point required");

  for (std::size_t c = 0; c < s.controllers.count(); ++c) {
    const auto& track = s.controllers.positions[c];
    if (track.size() != s.frames)
      throw DimensionError(io::at("controllers.positions", c), "needs one position per frame");
    for (std::size_t t = 0; t < track.size(); ++t)
      if (!track[t].allFinite())
        throw NonFiniteError(io::at(io::at("controllers.positions", c), t), "non-finite");
  }
  if (s.n_attach < 1) throw SchemaError("controllers.n_attach", "must be >= 1");

  if (s.tracked_targets.size() != s.tracked_indices.size())
    throw DimensionError("tracked.targets", "one trajectory per tracked index");
  for (std::size_t k = 0; k < s.tracked_indices.size(); ++k) {
    if (s.tracked_indices[k] >= n) throw SchemaError(io::at("tracked.indices", k), "index out of range");
    if (s.tracked_targets[k].size() != s.frames)
      throw DimensionError(io::at("tracked.targets", k), "needs one position per frame");
    for (std::size_t t = 0; t < s.frames; ++t)
      if (!s.tracked_targets[k][t].allFinite())
        throw NonFiniteError(io::at(io::at("tracked.targets", k), t), "non-finite");
  }
  if (s.target_clouds.size() != s.frames)
    throw DimensionError("target_clouds", "needs one cloud per frame");
  for (std::size_t t = 0; t < s.frames; ++t) {
    if (s.target_clouds[t].empty()) throw SchemaError(io::at("target_clouds", t), "cloud is empty");
    if (!all_finite(s.target_clouds[t])) throw NonFiniteError(io::at("target_clouds", t), "non-finite");
  }

  s.material_table.validate("materials.classes");
  if (s.part_materials.empty() && !s.object_material)
    throw SchemaError("materials", "needs per-part distributions or an object distribution");
  for (std::size_t p = 0; p < s.part_materials.size(); ++p) {
    const auto f = io::at("materials.parts", p);
    if (s.part_materials[p].centroid.size() != s.feature_dim())
      throw DimensionError(f + ".centroid", "must match feature dimension");
    for (double c : s.part_materials[p].centroid)
      if (!std::isfinite(c)) throw NonFiniteError(f + ".centroid", "non-finite");
    if (s.part_materials[p].distribution.size() != s.material_table.size())
      throw DimensionError(f + ".distribution", "length must equal material class count");
    s.part_materials[p].distribution.validate(f + ".distribution");
  }
  if (s.object_material) {
    if (s.object_material->size() != s.material_table.size())
      throw DimensionError("materials.object", "length must equal material class count");
    s.object_material->validate("materials.object");
  }
  if (s.motion_feature)
    for (std::size_t d = 0; d < kMotionDim; ++d)
      if (!std::isfinite((*s.motion_feature)[d]))
        throw NonFiniteError(io::at("motion_feature", d), "non-finite");
}

inline Scene scene_from_json(const json& j) {
  using namespace io;
  Scene s;
  if (!j.is_object()) throw SchemaError("$", "scene must be a JSON object");
  const auto version = count(req(j, "version", ""), "version");
  if (version != kSceneVersion) throw SchemaError("version", "unsupported scene version");
  const auto& id = req(j, "id", "");
  const auto& cat = req(j, "category", "");
  if (!id.is_string()) throw SchemaError("id", "expected a string");
  if (!cat.is_string()) throw SchemaError("category", "expected a string");
  s.id = id.get<std::string>();
  s.category = cat.get<std::string>();
  s.frame_rate = num(req(j, "frame_rate", ""), "frame_rate");
  if (!(s.frame_rate > 0)) throw SchemaError("frame_rate", "must be positive");
  s.frames = count(req(j, "frames", ""), "frames");
  s.train_frames = count(req(j, "train_frames", ""), "train_frames");

  const auto& sim = req(j, "sim", "");
  s.sim.dt = 1.0 / s.frame_rate;
  s.sim.substeps = static_cast<int>(count(req(sim, "substeps", "sim"), "sim.substeps"));
  s.sim.gravity = vec3(req(sim, "gravity", "sim"), "sim.gravity");
  s.sim.ground_height = num(req(sim, "ground_height", "sim"), "sim.ground_height");
  const auto& contact = req(sim, "contact", "sim");
  if (!contact.is_boolean()) throw SchemaError("sim.contact", "expected a boolean");
  s.sim.contact_enabled = contact.get<bool>();

  const auto& init = req(j, "initial", "");
  s.initial.positions = points(req(init, "positions", "initial"), "initial.positions");
  s.initial.velocities = points(req(init, "velocities", "initial"), "initial.velocities");
  s.initial.masses = numbers(req(init, "masses", "initial"), "initial.masses");

  const auto& feats = array(req(j, "features", ""), "features");
  const std::size_t d = feats.empty() ? 0 : array(feats[0], "features[0]").size();
  s.features.resize(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto row = numbers(feats[i], at("features", i));
    if (row.size() != d) throw DimensionError(at("features", i), "inconsistent feature dimension");
    for (std::size_t c = 0; c < d; ++c)
      s.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
  }
  if (auto it = j.find("appearance"); it != j.end()) s.appearance = *it;

  const auto& ctrl = req(j, "controllers", "");
  s.n_attach = count(req(ctrl, "n_attach", "controllers"), "controllers.n_attach");
  const auto& cp = array(req(ctrl, "positions", "controllers"), "controllers.positions");
  for (std::size_t c = 0; c < cp.size(); ++c)
    s.controllers.positions.push_back(points(cp[c], at("controllers.positions", c)));

  const auto& tracked = req(j, "tracked", "");
  const auto& idx = array(req(tracked, "indices", "tracked"), "tracked.indices");
  for (std::size_t k = 0; k < idx.size(); ++k) s.tracked_indices.push_back(count(idx[k], at("tracked.indices", k)));
  const auto& tt = array(req(tracked, "targets", "tracked"), "tracked.targets");
  for (std::size_t k = 0; k < tt.size(); ++k) s.tracked_targets.push_back(points(tt[k], at("tracked.targets", k)));

  const auto& clouds = array(req(j, "target_clouds", ""), "target_clouds");
  for (std::size_t t = 0; t < clouds.size(); ++t) s.target_clouds.push_back(points(clouds[t], at("target_clouds", t)));

  const auto& mat = req(j, "materials", "");
  s.material_table = table_from_json(req(mat, "classes", "materials"), "materials.classes");
  if (auto it = mat.find("parts"); it != mat.end()) {
    array(*it, "materials.parts");
    for (std::size_t p = 0; p < it->size(); ++p) {
      const auto f = at("materials.parts", p);
      PartMaterial pm;
      pm.centroid = numbers(req((*it)[p], "centroid", f), f + ".centroid");
      pm.distribution.weights = numbers(req((*it)[p], "distribution", f), f + ".distribution");
      s.part_materials.push_back(std::move(pm));
    }
  }
  if (auto it = mat.find("object"); it != mat.end())
    s.object_material = MaterialDistribution{numbers(*it, "materials.object")};

  if (auto it = j.find("motion_feature"); it != j.end()) {
    const auto v = numbers(*it, "motion_feature");
    if (v.size() != kMotionDim) throw DimensionError("motion_feature", "expected 16 values");
    MotionFeature m{};
    std::copy(v.begin(), v.end(), m.begin());
    s.motion_feature = m;
  }
  validate_scene(s);
  return s;
}

inline json scene_to_json(const Scene& s) {
  using namespace io;
  json j;
  j["version"] = kSceneVersion;
  j["id"] = s.id;
  j["category"] = s.category;
  j["frame_rate"] = s.frame_rate;
  j["frames"] = s.frames;
  j["train_frames"] = s.train_frames;
  j["sim"] = {{"substeps", s.sim.substeps},
              {"gravity", to_json(s.sim.gravity)},
              {"ground_height", s.sim.ground_height},
              {"contact", s.sim.contact_enabled}};
  j["initial"] = {{"positions", to_json(s.initial.positions)},
                  {"velocities", to_json(s.initial.velocities)},
                  {"masses", s.initial.masses}};
  json feats = json::array();
  for (Eigen::Index i = 0; i < s.features.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < s.features.cols(); ++c) row.push_back(s.features(i, c));
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  if (s.appearance) j["appearance"] = *s.appearance;
  json cp = json::array();
  for (const auto& track : s.controllers.positions) cp.push_back(to_json(track));
  j["controllers"] = {{"n_attach", s.n_attach}, {"positions", std::move(cp)}};
  json tt = json::array();
  for (const auto& t : s.tracked_targets) tt.push_back(to_json(t));
  j["tracked"] = {{"indices", s.tracked_indices}, {"targets", std::move(tt)}};
  json clouds = json::array();
  for (const auto& c : s.target_clouds) clouds.push_back(to_json(c));
  j["target_clouds"] = std::move(clouds);
  json mat;
  mat["classes"] = table_to_json(s.material_table);
  if (!s.part_materials.empty()) {
    json parts = json::array();
    for (const auto& pm : s.part_materials)
      parts.push_back({{"centroid", pm.centroid}, {"distribution", pm.distribution.weights}});
    mat["parts"] = std::move(parts);
  }
  if (s.object_material) mat["object"] = s.object_material->weights;
  j["materials"] = std::move(mat);
  if (s.motion_feature) j["motion_feature"] = *s.motion_feature;
  return j;
}

inline Scene load_scene(const std::filesystem::path& path) { return scene_from_json(io::read_file(path)); }

inline void save_scene(const Scene& scene, const std::filesystem::path& path) {
  validate_scene(scene);
  io::write_file(path, scene_to_json(scene));
}

}  // namespace springtwin
