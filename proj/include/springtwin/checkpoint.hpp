#pragma once

#include <filesystem>

#include "springtwin/model.hpp"
#include "springtwin/scene.hpp"

namespace springtwin {

inline constexpr int kCheckpointVersion = 1;

namespace io {

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& path) {
  array(j, path);
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? array(j[0], at(path, 0)).size() : 0;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = numbers(j[r], at(path, r));
    if (row.size() != cols) throw DimensionError(at(path, r), "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& path) {
  const auto v = numbers(j, path);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline json mlp_to_json(const Mlp& net) {
  json layers = json::array();
  for (const auto& l : net.layers)
    layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  return layers;
}

inline Mlp mlp_from_json(const json& j, const std::string& path) {
  array(j, path);
  Mlp net;
  for (std::size_t l = 0; l < j.size(); ++l) {
    const auto p = at(path, l);
    net.layers.push_back({matrix_from_json(req(j[l], "weight", p), p + ".weight"),
                          vector_from_json(req(j[l], "bias", p), p + ".bias")});
  }
  net.validate(path);
  return net;
}

inline bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw SchemaError(path, "expected a boolean");
  return j.get<bool>();
}

}  // namespace io

inline json model_to_json(const Model& m) {
  using namespace io;
  const auto& c = m.config;
  const auto& r = m.ranges;
  return {
      {"version", kCheckpointVersion},
      {"feature_dim", m.feature_dim},
      {"material_classes", m.material_classes()},
      {"config",
       {{"embedding_dim", c.embedding_dim},
        {"hidden", c.hidden},
        {"parts", c.parts},
        {"seed", c.seed},
        {"disable_codebook", c.disable_codebook},
        {"disable_parts", c.disable_parts},
        {"topology",
         {{"base_knn", c.topology.base_knn},
          {"base_radius_scale", c.topology.base_radius_scale},
          {"boundary_pairs", c.topology.boundary_pairs},
          {"k_ref", c.topology.k_ref}}}}},
      {"codebook", matrix_to_json(m.codebook.entries)},
      {"codebook_learnable", m.codebook_learnable},
      {"edge_decoder", mlp_to_json(m.edge_decoder)},
      {"global_decoder", mlp_to_json(m.global_decoder)},
      {"ranges",
       {{"stiffness", to_json(r.stiffness)},
        {"gamma", to_json(r.gamma)},
        {"delta", to_json(r.delta)},
        {"mu", to_json(r.mu)},
        {"epsilon", to_json(r.epsilon)},
        {"controller_stiffness", to_json(r.controller_stiffness)}}},
      {"motion_standardization",
       {{"mean", vector_to_json(m.motion.mean)}, {"std", vector_to_json(m.motion.std)}}},
  };
}

inline Model model_from_json(const json& j) {
  using namespace io;
  if (!j.is_object()) throw SchemaError("$", "checkpoint must be a JSON object");
  if (count(req(j, "version", ""), "version") != static_cast<std::size_t>(kCheckpointVersion))
    throw SchemaError("version", "unsupported checkpoint version");
  Model m;
  m.feature_dim = count(req(j, "feature_dim", ""), "feature_dim");
  const auto& c = req(j, "config", "");
  m.config.embedding_dim = count(req(c, "embedding_dim", "config"), "config.embedding_dim");
  m.config.hidden = count(req(c, "hidden", "config"), "config.hidden");
  const auto& parts = req(c, "parts", "config");
  if (!parts.is_number_integer()) throw SchemaError("config.parts", "expected an integer");
  m.config.parts = parts.get<int>();
  m.config.seed = count(req(c, "seed", "config"), "config.seed");
  m.config.disable_codebook = boolean(req(c, "disable_codebook", "config"), "config.disable_codebook");
  m.config.disable_parts = boolean(req(c, "disable_parts", "config"), "config.disable_parts");
  const auto& t = req(c, "topology", "config");
  m.config.topology.base_knn = static_cast<int>(count(req(t, "base_knn", "config.topology"), "config.topology.base_knn"));
  m.config.topology.base_radius_scale =
      num(req(t, "base_radius_scale", "config.topology"), "config.topology.base_radius_scale");
  m.config.topology.boundary_pairs =
      static_cast<int>(count(req(t, "boundary_pairs", "config.topology"), "config.topology.boundary_pairs"));
  m.config.topology.k_ref = num(req(t, "k_ref", "config.topology"), "config.topology.k_ref");

  m.codebook.entries = matrix_from_json(req(j, "codebook", ""), "codebook");
  if (count(req(j, "material_classes", ""), "material_classes") != m.codebook.classes())
    throw DimensionError("codebook", "row count must equal material_classes");
  if (m.codebook.dim() != m.config.embedding_dim)
    throw DimensionError("codebook", "column count must equal config.embedding_dim");
  m.codebook_learnable = boolean(req(j, "codebook_learnable", ""), "codebook_learnable");
  m.edge_decoder = mlp_from_json(req(j, "edge_decoder", ""), "edge_decoder");
  m.global_decoder = mlp_from_json(req(j, "global_decoder", ""), "global_decoder");
  const auto& r = req(j, "ranges", "");
  m.ranges.stiffness = interval(req(r, "stiffness", "ranges"), "ranges.stiffness");
  m.ranges.gamma = interval(req(r, "gamma", "ranges"), "ranges.gamma");
  m.ranges.delta = interval(req(r, "delta", "ranges"), "ranges.delta");
  m.ranges.mu = interval(req(r, "mu", "ranges"), "ranges.mu");
  m.ranges.epsilon = interval(req(r, "epsilon", "ranges"), "ranges.epsilon");
  m.ranges.controller_stiffness =
      interval(req(r, "controller_stiffness", "ranges"), "ranges.controller_stiffness");
  const auto& ms = req(j, "motion_standardization", "");
  m.motion.mean = vector_from_json(req(ms, "mean", "motion_standardization"), "motion_standardization.mean");
  m.motion.std = vector_from_json(req(ms, "std", "motion_standardization"), "motion_standardization.std");
  m.validate();
  return m;
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return model_from_json(io::read_file(path));
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  model.validate();
  io::write_file(path, model_to_json(model));
}

}  // namespace springtwin
