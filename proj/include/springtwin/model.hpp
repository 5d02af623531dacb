#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "springtwin/adjoint.hpp"
#include "springtwin/losses.hpp"
#include "springtwin/material.hpp"
#include "springtwin/predictor.hpp"
#include "springtwin/scene.hpp"
#include "springtwin/sim.hpp"
#include "springtwin/topology.hpp"

namespace springtwin {

struct ModelConfig {
  std::size_t embedding_dim = 16;
  std::size_t hidden = 64;
  int parts = 0;  // 0: one per scene material part, else 5
  TopologyConfig topology;
  std::uint64_t seed = 0;
  bool disable_codebook = false;
  bool disable_parts = false;
};

inline constexpr int kDefaultPartCount = 5;

/// Learnable state: codebook, both decoders, and motion standardization.
struct Model {
  ModelConfig config;
  std::size_t feature_dim = 0;
  Codebook codebook;
  bool codebook_learnable = true;
  Mlp edge_decoder;
  Mlp global_decoder;
  ParamRanges ranges;
  MotionStandardization motion;

  std::size_t material_classes() const { return codebook.classes(); }

  static Model create(const ModelConfig& cfg, std::size_t feature_dim, std::size_t n_mat) {
    if (feature_dim < 1) throw DimensionError("features", "feature dimension must be >= 1");
    if (n_mat < 1) throw DimensionError("materials.classes", "need at least one material class");
    if (cfg.embedding_dim < 1 || cfg.hidden < 1)
      throw SchemaError("model", "embedding and hidden widths must be >= 1");
    Model m;
    m.config = cfg;
    m.feature_dim = feature_dim;
    m.codebook_learnable = !cfg.disable_codebook;
    m.codebook = cfg.disable_codebook ? Codebook::identity(n_mat, cfg.embedding_dim)
                                      : Codebook::random(n_mat, cfg.embedding_dim, cfg.seed);
    const std::size_t de = cfg.embedding_dim, h = cfg.hidden;
    m.edge_decoder = Mlp::create({kMotionDim + de + kGeoDim, h, h, 1}, cfg.seed + 1);
    m.global_decoder = Mlp::create({kMotionDim + de, h, kGlobalOutputs}, cfg.seed + 2);
    return m;
  }

  void validate() const {
    if (feature_dim < 1) throw DimensionError("feature_dim", "must be >= 1");
    if (codebook.classes() < 1) throw DimensionError("codebook", "needs at least one entry");
    if (!codebook.entries.allFinite()) throw NonFiniteError("codebook", "non-finite entry");
    const std::size_t de = codebook.dim();
    edge_decoder.validate("edge_decoder");
    global_decoder.validate("global_decoder");
    if (edge_decoder.input_dim() != kMotionDim + de + kGeoDim || edge_decoder.output_dim() != 1)
      throw DimensionError("edge_decoder", "shape must be (16 + d_e + 10) -> ... -> 1");
    if (global_decoder.input_dim() != kMotionDim + de || global_decoder.output_dim() != kGlobalOutputs)
      throw DimensionError("global_decoder", "shape must be (16 + d_e) -> ... -> 5");
    ranges.validate();
    if (motion.mean.size() != static_cast<Eigen::Index>(kMotionDim) ||
        motion.std.size() != static_cast<Eigen::Index>(kMotionDim))
      throw DimensionError("motion_standardization", "expected 16 means and 16 deviations");
    if (!motion.mean.allFinite() || !motion.std.allFinite())
      throw NonFiniteError("motion_standardization", "non-finite statistic");
    if ((motion.std.array() <= 0).any())
      throw SchemaError("motion_standardization.std", "must be positive");
  }

  /// Same shapes with zero values; doubles as a gradient accumulator.
  Model zeros_like() const {
    Model z = *this;
    z.codebook.entries.setZero();
    z.edge_decoder = edge_decoder.zeros_like();
    z.global_decoder = global_decoder.zeros_like();
    return z;
  }

  /// Trainable values in a fixed order: codebook (when learnable), then
  /// each decoder's weights and biases layer by layer.
  template <typename F>
  void for_each_tensor(F&& f) {
    if (codebook_learnable) f(codebook.entries.data(), codebook.entries.size());
    for (Mlp* net : {&edge_decoder, &global_decoder})
      for (auto& l : net->layers) {
        f(l.weight.data(), l.weight.size());
        f(l.bias.data(), l.bias.size());
      }
  }

  Eigen::VectorXd flatten() const {
    std::vector<double> out;
    const_cast<Model*>(this)->for_each_tensor(
        [&](double* p, Eigen::Index n) { out.insert(out.end(), p, p + n); });
    return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
  }

  void unflatten(const Eigen::VectorXd& v) {
    Eigen::Index off = 0;
    for_each_tensor([&](double* p, Eigen::Index n) {
      if (off + n > v.size()) throw DimensionError("parameters", "vector too short");
      std::copy(v.data() + off, v.data() + off + n, p);
      off += n;
    });
    if (off != v.size()) throw DimensionError("parameters", "vector too long");
  }
};

/// Everything about a scene that depends only on geometry, features and
/// materials: parts, priors, and the spring graph with controller edges.
struct TwinStructure {
  PartDecomposition parts;
  std::vector<MaterialDistribution> part_materials;
  std::vector<PartPrior> priors;
  MaterialDistribution global_material;
  PartPrior global_prior;
  SpringGraph graph;
};

inline int resolve_part_count(const Scene& scene, const ModelConfig& cfg) {
  if (cfg.disable_parts) return 1;
  if (cfg.parts > 0) return cfg.parts;
  if (!scene.part_materials.empty()) return static_cast<int>(scene.part_materials.size());
  return kDefaultPartCount;
}

namespace detail {

/// Material distribution of each point: that of the nearest scene part
/// centroid in raw feature space, or the object distribution.
inline std::vector<const MaterialDistribution*> point_materials(const Scene& scene) {
  const std::size_t n = scene.point_count();
  std::vector<const MaterialDistribution*> out(n);
  if (scene.part_materials.empty()) {
    std::fill(out.begin(), out.end(), &*scene.object_material);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& pm : scene.part_materials) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < pm.centroid.size(); ++c) {
        const double d = scene.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) -
                         pm.centroid[c];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        out[i] = &pm.distribution;
      }
    }
  }
  return out;
}

inline MaterialDistribution mean_distribution(const std::vector<const MaterialDistribution*>& ds,
                                              const std::vector<std::size_t>& members) {
  MaterialDistribution m;
  m.weights.assign(ds.front()->size(), 0.0);
  for (auto i : members)
    for (std::size_t q = 0; q < m.weights.size(); ++q) m.weights[q] += ds[i]->weights[q];
  double total = 0.0;
  for (double w : m.weights) total += w;
  for (double& w : m.weights) w /= total;
  return m;
}

}  // namespace detail

inline TwinStructure build_structure(const Scene& scene, const ModelConfig& cfg) {
  validate_scene(scene);
  const std::size_t n = scene.point_count();
  const int K = resolve_part_count(scene, cfg);
  if (static_cast<std::size_t>(K) > n) throw SchemaError("parts", "more parts than points");

  TwinStructure s;
  s.parts = K == 1 ? PartDecomposition::single(n) : cluster_parts(scene.features, K, cfg.seed);
  const auto point_mat = detail::point_materials(scene);
  const auto members = s.parts.members();
  for (const auto& mem : members) {
    s.part_materials.push_back(detail::mean_distribution(point_mat, mem));
    s.priors.push_back(part_prior(s.part_materials.back(), scene.material_table));
  }
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  s.global_material = detail::mean_distribution(point_mat, all);
  s.global_prior = part_prior(s.global_material, scene.material_table);

  const Points& x0 = scene.initial.positions;
  const double global_nn = median_nn_distance(x0);
  std::vector<PartTopology> topo;
  for (std::size_t p = 0; p < members.size(); ++p) {
    Points pts;
    for (auto i : members[p]) pts.push_back(x0[i]);
    topo.push_back(topology_hyperparams(s.priors[p], pts, cfg.topology, global_nn));
  }
  s.graph = build_graph(x0, s.parts, topo, cfg.topology.boundary_pairs);
  if (scene.controllers.count() > 0) {
    const Points c0 = scene.controllers.at_frame(0);
    s.graph.controller_edges =
        attach_controllers(scene.initial, c0, scene.n_attach, scene.sim.rest_length_floor);
    s.graph.controller_count = scene.controllers.count();
  }
  s.graph.validate();
  return s;
}

/// A scene prepared for prediction and fitting.
struct Twin {
  std::string id;
  std::string category;
  TwinStructure structure;
  std::vector<EdgeGeometryFeature> geometry;
  std::vector<Interval> edge_ranges;  // natural stiffness range per edge
  ParamRanges ranges;                 // global ranges narrowed by the object prior
  MotionFeature motion_raw{};
  MassState initial;
  ControllerTrack controllers;
  SimConfig sim;
  SimObservations observations;
  std::size_t frames = 1;
  std::size_t train_frames = 1;
  std::vector<std::vector<std::size_t>> part_edges;  // intra edge indices per part

  const SpringGraph& graph() const { return structure.graph; }
};

namespace detail {

inline Interval intersect_or(const Interval& a, const Interval& b, const Interval& fallback) {
  const Interval r{std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
  return r.lo < r.hi ? r : fallback;
}

inline Interval prior_stiffness_interval(const PartPrior& p) {
  return {std::exp(p.log_stiffness_mean - 3.0 * p.log_stiffness_std),
          std::exp(p.log_stiffness_mean + 3.0 * p.log_stiffness_std)};
}

}  // namespace detail

inline Twin prepare_twin(const Scene& scene, const Model& model) {
  if (scene.feature_dim() != model.feature_dim)
    throw DimensionError("features", "scene feature dimension " + std::to_string(scene.feature_dim()) +
                                         " does not match checkpoint " +
                                         std::to_string(model.feature_dim));
  if (scene.material_table.size() != model.material_classes())
    throw DimensionError("materials.classes", "class count does not match checkpoint codebook");
  Twin t;
  t.id = scene.id;
  t.category = scene.category;
  t.structure = build_structure(scene, model.config);
  const auto& g = t.structure.graph;
  t.geometry = edge_geometry_features(g, scene.initial.positions);

  const auto& priors = t.structure.priors;
  const Interval global_k = model.ranges.stiffness;
  t.part_edges.resize(priors.size());
  t.edge_ranges.reserve(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const Edge& ed = g.edges[e];
    Interval iv;
    if (ed.kind == EdgeKind::intra) {
      iv = detail::prior_stiffness_interval(priors[static_cast<std::size_t>(ed.part)]);
      t.part_edges[static_cast<std::size_t>(ed.part)].push_back(e);
    } else {
      const auto a = detail::prior_stiffness_interval(priors[static_cast<std::size_t>(g.part_of[ed.i])]);
      const auto b = detail::prior_stiffness_interval(priors[static_cast<std::size_t>(g.part_of[ed.j])]);
      iv = {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
    }
    t.edge_ranges.push_back(detail::intersect_or(global_k, iv, global_k));
  }

  const auto& gp = t.structure.global_prior;
  t.ranges = model.ranges;
  t.ranges.gamma = detail::intersect_or(model.ranges.gamma, gp.damping, model.ranges.gamma);
  t.ranges.delta = detail::intersect_or(model.ranges.delta, gp.drag, model.ranges.delta);
  t.ranges.mu = detail::intersect_or(model.ranges.mu, gp.friction, model.ranges.mu);
  t.ranges.epsilon = detail::intersect_or(model.ranges.epsilon, gp.elasticity, model.ranges.epsilon);

  t.frames = scene.frames;
  t.train_frames = scene.train_frames;
  t.initial = scene.initial;
  t.controllers = scene.controllers;
  t.sim = scene.sim;
  t.observations = {scene.tracked_indices, scene.tracked_targets, scene.target_clouds};
  // only the observed training window feeds the descriptor
  t.motion_raw = scene.motion_feature
                     ? *scene.motion_feature
                     : motion_descriptor(scene.controllers, scene.tracked_targets, scene.sim.dt,
                                         scene.train_frames);
  return t;
}

namespace detail {

/// Column-batched forward pass; `acts` receives every layer's output.
inline Eigen::MatrixXd mlp_forward_batch(const Mlp& net, const Eigen::MatrixXd& in,
                                         std::vector<Eigen::MatrixXd>* acts) {
  Eigen::MatrixXd a = in;
  if (acts) {
    acts->clear();
    acts->push_back(in);
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Eigen::MatrixXd z = net.layers[l].weight * a;
    z.colwise() += net.layers[l].bias;
    if (l + 1 < net.layers.size()) z = z.array().tanh().matrix();
    a = std::move(z);
    if (acts) acts->push_back(a);
  }
  return a;
}

inline Eigen::MatrixXd mlp_backward_batch(const Mlp& net, const std::vector<Eigen::MatrixXd>& acts,
                                          const Eigen::MatrixXd& dout, Mlp& grad) {
  Eigen::MatrixXd g = dout;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    if (l + 1 < net.layers.size())
      g = (g.array() * (1.0 - acts[l + 1].array().square())).matrix();
    grad.layers[l].weight.noalias() += g * acts[l].transpose();
    grad.layers[l].bias += g.rowwise().sum();
    g = net.layers[l].weight.transpose() * g;
  }
  return g;
}

}  // namespace detail

/// Feed-forward parameter prediction plus what backprop needs.
struct Prediction {
  PhysParams params;
  Eigen::VectorXd z_vid;
  std::vector<Eigen::VectorXd> part_embeddings;
  Eigen::VectorXd z_global;
  std::vector<Eigen::MatrixXd> edge_acts;
  Mlp::Cache global_cache;
  Eigen::VectorXd raw_edge;
  Eigen::VectorXd raw_global;
};

inline Prediction predict(const Model& model, const Twin& twin) {
  const auto& g = twin.graph();
  const auto& st = twin.structure;
  const auto de = static_cast<Eigen::Index>(model.codebook.dim());
  const auto dv = static_cast<Eigen::Index>(kMotionDim);
  Prediction p;
  p.z_vid = model.motion.apply(twin.motion_raw);
  for (const auto& m : st.part_materials) p.part_embeddings.push_back(embed_material(m, model.codebook));
  p.z_global = global_material_feature(p.part_embeddings, st.parts.part_sizes);

  const auto E = static_cast<Eigen::Index>(g.edges.size());
  Eigen::MatrixXd in(dv + de + static_cast<Eigen::Index>(kGeoDim), E);
  for (Eigen::Index e = 0; e < E; ++e) {
    const auto k = static_cast<std::size_t>(e);
    in.col(e).head(dv) = p.z_vid;
    in.col(e).segment(dv, de) = edge_material_feature(g.edges[k], g.part_of, p.part_embeddings);
    in.col(e).tail(static_cast<Eigen::Index>(kGeoDim)) = to_vector(twin.geometry[k]);
  }
  if (E > 0) {
    p.raw_edge = detail::mlp_forward_batch(model.edge_decoder, in, &p.edge_acts).row(0).transpose();
  } else {
    p.raw_edge.resize(0);
  }
  p.params.edge_stiffness.resize(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    p.params.edge_stiffness[e] = log_squash(p.raw_edge[static_cast<Eigen::Index>(e)], twin.edge_ranges[e]);

  const Eigen::VectorXd gin = concat({&p.z_vid, &p.z_global});
  p.raw_global = model.global_decoder.forward(gin, &p.global_cache);
  const auto gl = squash_globals(p.raw_global, twin.ranges);
  p.params.gamma = gl.gamma;
  p.params.delta = gl.delta;
  p.params.mu = gl.mu;
  p.params.epsilon = gl.epsilon;
  p.params.controller_stiffness = gl.controller_stiffness;
  return p;
}

/// Chains d loss / d params through the squashes, both decoders and the
/// codebook, accumulating into `grad` (shaped like `model`).
inline void backprop_prediction(const Model& model, const Twin& twin, const Prediction& p,
                                const ParamGradients& dparams, Model& grad) {
  const auto& g = twin.graph();
  const auto& st = twin.structure;
  const auto de = static_cast<Eigen::Index>(model.codebook.dim());
  const auto dv = static_cast<Eigen::Index>(kMotionDim);
  std::vector<Eigen::VectorXd> dpart(st.part_materials.size(), Eigen::VectorXd::Zero(de));

  const auto E = static_cast<Eigen::Index>(g.edges.size());
  if (E > 0) {
    Eigen::MatrixXd dy(1, E);
    for (Eigen::Index e = 0; e < E; ++e) {
      const auto k = static_cast<std::size_t>(e);
      dy(0, e) = dparams.edge_stiffness[k] * log_squash_grad(p.raw_edge[e], twin.edge_ranges[k]);
    }
    const Eigen::MatrixXd din = detail::mlp_backward_batch(model.edge_decoder, p.edge_acts, dy, grad.edge_decoder);
    for (Eigen::Index e = 0; e < E; ++e) {
      const Edge& ed = g.edges[static_cast<std::size_t>(e)];
      const Eigen::VectorXd dz = din.col(e).segment(dv, de);
      if (ed.kind == EdgeKind::intra) {
        dpart[static_cast<std::size_t>(ed.part)] += dz;
      } else {
        dpart[static_cast<std::size_t>(g.part_of[ed.i])] += 0.5 * dz;
        dpart[static_cast<std::size_t>(g.part_of[ed.j])] += 0.5 * dz;
      }
    }
  }

  const auto& r = twin.ranges;
  const auto& y = p.raw_global;
  Eigen::VectorXd dyg(static_cast<Eigen::Index>(kGlobalOutputs));
  dyg[0] = dparams.gamma * log_squash_grad(y[0], r.gamma);
  dyg[1] = dparams.delta * lin_squash_grad(y[1], r.delta);
  dyg[2] = dparams.mu * lin_squash_grad(y[2], r.mu);
  dyg[3] = dparams.epsilon * lin_squash_grad(y[3], r.epsilon);
  dyg[4] = dparams.controller_stiffness * log_squash_grad(y[4], r.controller_stiffness);
  const Eigen::VectorXd dgin = model.global_decoder.backward(p.global_cache, dyg, grad.global_decoder);
  const Eigen::VectorXd dzg = dgin.segment(dv, de);
  double total = 0.0;
  for (auto s : st.parts.part_sizes) total += static_cast<double>(s);
  for (std::size_t k = 0; k < dpart.size(); ++k)
    dpart[k] += (static_cast<double>(st.parts.part_sizes[k]) / total) * dzg;

  if (!model.codebook_learnable) return;
  for (std::size_t k = 0; k < dpart.size(); ++k) {
    const auto& w = st.part_materials[k].weights;
    for (std::size_t q = 0; q < w.size(); ++q)
      grad.codebook.entries.row(static_cast<Eigen::Index>(q)) += w[q] * dpart[k].transpose();
  }
}

/// Log-stiffness of each part's intra edges.
inline std::vector<std::vector<double>> log_stiffness_by_part(const Twin& twin, const PhysParams& params) {
  std::vector<std::vector<double>> out(twin.part_edges.size());
  for (std::size_t m = 0; m < out.size(); ++m)
    for (auto e : twin.part_edges[m]) out[m].push_back(std::log(params.edge_stiffness[e]));
  return out;
}

struct SceneEvaluation {
  LossParts loss;
  double total = 0.0;
};

/// Total loss of one scene over its training window; when `grad` is given,
/// d total / d model is accumulated into it.
inline SceneEvaluation evaluate_scene(const Model& model, const Twin& twin, const LossWeights& w,
                                      Model* grad = nullptr) {
  const Prediction p = predict(model, twin);
  SceneEvaluation out;
  ParamGradients dparams;
  if (grad) {
    const auto rg = rollout_grad(twin.initial, twin.graph(), p.params, twin.controllers,
                                 twin.train_frames, twin.sim, twin.observations, w);
    out.loss = rg.loss;
    dparams = rg.grad;
  } else {
    out.loss = evaluate_rollout_loss(twin.initial, twin.graph(), p.params, twin.controllers,
                                     twin.train_frames, twin.sim, twin.observations, w);
  }
  std::vector<std::vector<double>> dlk;
  out.loss.prior = prior_loss_log(log_stiffness_by_part(twin, p.params), twin.structure.priors,
                                  grad ? &dlk : nullptr);
  out.total = total_loss(w, out.loss);
  if (!grad) return out;
  for (std::size_t m = 0; m < dlk.size(); ++m)
    for (std::size_t a = 0; a < dlk[m].size(); ++a) {
      const auto e = twin.part_edges[m][a];
      dparams.edge_stiffness[e] += w.prior * dlk[m][a] / p.params.edge_stiffness[e];
    }
  backprop_prediction(model, twin, p, dparams, *grad);
  return out;
}

/// Per-scene summary of predicted parameters, the input to consistency reports.
struct ParameterSummary {
  std::string id;
  std::string category;
  double mean_log_stiffness = 0.0;  // over all object edges
  std::vector<double> part_mean_log_stiffness;
  double controller_stiffness = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
  double mu = 0.0;
  double epsilon = 0.0;
};

inline ParameterSummary summarize(const Twin& twin, const PhysParams& params) {
  ParameterSummary s;
  s.id = twin.id;
  s.category = twin.category;
  double acc = 0.0;
  for (double k : params.edge_stiffness) acc += std::log(k);
  s.mean_log_stiffness = params.edge_stiffness.empty() ? 0.0 : acc / static_cast<double>(params.edge_stiffness.size());
  for (const auto& lk : log_stiffness_by_part(twin, params)) {
    double m = 0.0;
    for (double v : lk) m += v;
    s.part_mean_log_stiffness.push_back(lk.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                   : m / static_cast<double>(lk.size()));
  }
  s.controller_stiffness = params.controller_stiffness;
  s.gamma = params.gamma;
  s.delta = params.delta;
  s.mu = params.mu;
  s.epsilon = params.epsilon;
  return s;
}

}  // namespace springtwin
