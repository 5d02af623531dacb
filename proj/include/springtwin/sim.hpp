#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "springtwin/core.hpp"

namespace springtwin {

enum class EdgeKind : std::uint8_t { intra, boundary, controller };

inline const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::intra: return "intra";
    case EdgeKind::boundary: return "boundary";
    case EdgeKind::controller: return "controller";
  }
  return "?";
}

/// A spring. For controller edges `i` is the mass point and `j` the
/// controller index; otherwise i < j are mass point indices.
struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  EdgeKind kind = EdgeKind::intra;
  int part = -1;  // owning part of an intra edge
  double rest_length = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }
  std::size_t components() {
    std::size_t c = 0;
    for (std::size_t i = 0; i < parent_.size(); ++i)
      if (find(i) == i) ++c;
    return c;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
};

struct SpringGraph {
  std::size_t point_count = 0;
  std::vector<int> part_of;
  std::vector<Edge> edges;             // intra + boundary; canonical i < j, sorted
  std::vector<Edge> controller_edges;  // (mass point, controller)
  std::size_t controller_count = 0;

  int part_count() const {
    int k = 0;
    for (int p : part_of) k = std::max(k, p + 1);
    return k;
  }

  bool connected() const {
    if (point_count == 0) return false;
    UnionFind uf(point_count);
    for (const auto& e : edges) uf.unite(e.i, e.j);
    return uf.components() == 1;
  }

  void validate() const {
    if (point_count == 0) throw SchemaError("graph.point_count", "must be >= 1");
    if (part_of.size() != point_count)
      throw DimensionError("graph.part_of", "length must equal point_count");
    const int k = part_count();
    for (std::size_t i = 0; i < part_of.size(); ++i)
      if (part_of[i] < 0 || part_of[i] >= k)
        throw SchemaError("graph.part_of[" + std::to_string(i) + "]", "part id out of range");
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    seen.reserve(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto& ed = edges[e];
      const std::string f = "graph.edges[" + std::to_string(e) + "]";
      if (ed.kind == EdgeKind::controller)
        throw SchemaError(f, "controller edge in object edge list");
      if (ed.i >= ed.j) throw SchemaError(f, "requires i < j (no self-loops)");
      if (ed.j >= point_count) throw SchemaError(f, "index out of range");
      if (!(ed.rest_length > 0) || !std::isfinite(ed.rest_length))
        throw SchemaError(f, "rest_length must be positive and finite");
      if (ed.kind == EdgeKind::intra &&
          (part_of[ed.i] != ed.part || part_of[ed.j] != ed.part))
        throw SchemaError(f, "intra edge endpoints must lie in its part");
      if (ed.kind == EdgeKind::boundary && part_of[ed.i] == part_of[ed.j])
        throw SchemaError(f, "boundary edge must span two parts");
      seen.emplace_back(ed.i, ed.j);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
      throw SchemaError("graph.edges", "duplicate (i, j) pair");
    for (std::size_t e = 0; e < controller_edges.size(); ++e) {
      const auto& ed = controller_edges[e];
      const std::string f = "graph.controller_edges[" + std::to_string(e) + "]";
      if (ed.kind != EdgeKind::controller) throw SchemaError(f, "kind must be controller");
      if (ed.i >= point_count || ed.j >= controller_count)
        throw SchemaError(f, "index out of range");
      if (!(ed.rest_length > 0)) throw SchemaError(f, "rest_length must be positive");
    }
    if (!connected()) throw SchemaError("graph.edges", "object edges do not connect all points");
  }
};

struct MassState {
  Points positions;
  Points velocities;
  std::vector<double> masses;

  std::size_t size() const { return positions.size(); }

  /// Uniform masses summing to `total_mass`, zero velocity.
  static MassState at_rest(Points positions, double total_mass = 1.0) {
    MassState s;
    const std::size_t n = positions.size();
    s.velocities.assign(n, Vec3::Zero());
    s.masses.assign(n, n ? total_mass / static_cast<double>(n) : 0.0);
    s.positions = std::move(positions);
    return s;
  }

  void validate() const {
    const std::size_t n = positions.size();
    if (n == 0) throw SchemaError("state.positions", "must contain at least one point");
    if (velocities.size() != n) throw DimensionError("state.velocities", "length must equal N");
    if (masses.size() != n) throw DimensionError("state.masses", "length must equal N");
    for (std::size_t i = 0; i < n; ++i) {
      if (!positions[i].allFinite())
        throw NonFiniteError("state.positions[" + std::to_string(i) + "]", "non-finite");
      if (!velocities[i].allFinite())
        throw NonFiniteError("state.velocities[" + std::to_string(i) + "]", "non-finite");
      if (!std::isfinite(masses[i]))
        throw NonFiniteError("state.masses[" + std::to_string(i) + "]", "non-finite");
      if (!(masses[i] > 0))
        throw SchemaError("state.masses[" + std::to_string(i) + "]", "must be positive");
    }
  }
};

/// Simulator parameters. `edge_stiffness` aligns with SpringGraph::edges.
struct PhysParams {
  std::vector<double> edge_stiffness;
  double controller_stiffness = 1e3;
  double gamma = 0.0;    // dashpot damping, N s / m
  double delta = 1.0;    // per-step drag damping
  double mu = 0.0;       // ground friction
  double epsilon = 0.0;  // collision elasticity

  void validate(std::size_t edge_count) const {
    if (edge_stiffness.size() != edge_count)
      throw DimensionError("params.edge_stiffness", "length must equal edge count");
    for (std::size_t e = 0; e < edge_stiffness.size(); ++e)
      if (!(edge_stiffness[e] > 0) || !std::isfinite(edge_stiffness[e]))
        throw SchemaError("params.edge_stiffness[" + std::to_string(e) + "]",
                          "must be positive and finite");
    if (!(controller_stiffness > 0) || !std::isfinite(controller_stiffness))
      throw SchemaError("params.controller_stiffness", "must be positive and finite");
    if (!(gamma >= 0) || !std::isfinite(gamma))
      throw SchemaError("params.gamma", "must be >= 0 and finite");
    if (!(delta > 0 && delta <= 1)) throw SchemaError("params.delta", "must lie in (0, 1]");
    if (!(mu >= 0) || !std::isfinite(mu)) throw SchemaError("params.mu", "must be >= 0");
    if (!(epsilon >= 0 && epsilon <= 1))
      throw SchemaError("params.epsilon", "must lie in [0, 1]");
  }
};

struct SimConfig {
  double dt = 1.0 / 60.0;  // one frame
  int substeps = 10;
  Vec3 gravity{0.0, 0.0, -9.81};
  double ground_height = 0.0;
  bool contact_enabled = true;
  double instability_bound = 1e3;
  double rest_length_floor = 1e-4;

  double step() const { return dt / substeps; }

  void validate() const {
    if (!(dt > 0) || !std::isfinite(dt)) throw SchemaError("sim.dt", "must be positive");
    if (substeps < 1) throw SchemaError("sim.substeps", "must be >= 1");
    if (!gravity.allFinite()) throw NonFiniteError("sim.gravity", "non-finite");
    if (!std::isfinite(ground_height)) throw NonFiniteError("sim.ground_height", "non-finite");
  }
};

/// Prescribed controller trajectories, indexed [controller][frame].
struct ControllerTrack {
  std::vector<Points> positions;

  std::size_t count() const { return positions.size(); }
  std::size_t frames() const { return positions.empty() ? 0 : positions.front().size(); }

  Points at_frame(std::size_t t) const {
    Points out(count());
    for (std::size_t c = 0; c < count(); ++c) out[c] = positions[c][t];
    return out;
  }

  void validate() const {
    const std::size_t t = frames();
    for (std::size_t c = 0; c < count(); ++c) {
      if (positions[c].size() != t)
        throw DimensionError("controllers.positions[" + std::to_string(c) + "]",
                             "all controllers need the same frame count");
      for (std::size_t f = 0; f < t; ++f)
        if (!positions[c][f].allFinite())
          throw NonFiniteError(
              "controllers.positions[" + std::to_string(c) + "][" + std::to_string(f) + "]",
              "non-finite");
    }
    if (count() > 0 && t < 1) throw SchemaError("controllers.positions", "needs >= 1 frame");
  }
};

/// Force on i from the spring (i, j).
inline Vec3 spring_force(const Vec3& xi, const Vec3& xj, double k, double rest_length) {
  const Vec3 d = xj - xi;
  const double len = d.norm();
  if (len == 0.0) throw DegenerateEdgeError(0, 1);
  return (k * (len - rest_length) / len) * d;
}

/// Dashpot force on i; the force on j is its negation.
inline Vec3 dashpot_force(const Vec3& vi, const Vec3& vj, double gamma) {
  return -gamma * (vi - vj);
}

namespace detail {

/// Accumulates per-point forces into `out` (resized to N).
inline void accumulate_forces(const Points& x, const Points& v, const std::vector<double>& m,
                              const SpringGraph& graph, const PhysParams& params,
                              const Points& ctrl, const Vec3& gravity, Points& out) {
  const std::size_t n = x.size();
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = m[i] * gravity;
  const double gamma = params.gamma;
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const Edge& ed = graph.edges[e];
    const Vec3 d = x[ed.j] - x[ed.i];
    const double len = d.norm();
    if (len == 0.0) throw DegenerateEdgeError(ed.i, ed.j);
    // shared subexpression so force on j is the exact negation
    const Vec3 f = (params.edge_stiffness[e] * (len - ed.rest_length) / len) * d -
                   gamma * (v[ed.i] - v[ed.j]);
    out[ed.i] += f;
    out[ed.j] -= f;
  }
  const double kc = params.controller_stiffness;
  for (const Edge& ed : graph.controller_edges) {
    const Vec3 d = ctrl[ed.j] - x[ed.i];
    const double len = d.norm();
    if (len == 0.0) continue;  // coincident with a floored rest length: no direction
    out[ed.i] += (kc * (len - ed.rest_length) / len) * d;
  }
}

inline void integrate_in_place(Points& x, Points& v, const std::vector<double>& m,
                               const Points& f, double delta, double h) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    v[i] = delta * (v[i] + (h / m[i]) * f[i]);
    x[i] += h * v[i];
  }
}

inline void contact_point(Vec3& x, Vec3& v, double mu, double eps, double ground) {
  if (!(x.z() < ground && v.z() < 0.0)) return;
  x.z() = ground;
  const double vn = v.z();
  v.z() = -eps * vn;
  const double dvn = (1.0 + eps) * -vn;
  const double vt = std::hypot(v.x(), v.y());
  if (vt > 0.0) {
    const double s = std::max(0.0, 1.0 - mu * dvn / vt);
    v.x() *= s;
    v.y() *= s;
  }
}

inline void contact_in_place(Points& x, Points& v, double mu, double eps, double ground) {
  for (std::size_t i = 0; i < x.size(); ++i) contact_point(x[i], v[i], mu, eps, ground);
}

/// Controller positions at substep `s` of the frame t -> t+1 advance.
inline void interpolate_controllers(const ControllerTrack& track, std::size_t t, int s,
                                    int substeps, Points& out) {
  const std::size_t c = track.count();
  out.resize(c);
  const double alpha = static_cast<double>(s + 1) / substeps;
  for (std::size_t k = 0; k < c; ++k) {
    const Vec3& a = track.positions[k][t];
    const Vec3& b = track.positions[k][t + 1];
    out[k] = a + alpha * (b - a);
  }
}

/// One full substep: forces, Euler update, ground contact.
inline void substep(Points& x, Points& v, const std::vector<double>& m, const SpringGraph& graph,
                    const PhysParams& params, const Points& ctrl, const SimConfig& cfg,
                    Points& forces) {
  accumulate_forces(x, v, m, graph, params, ctrl, cfg.gravity, forces);
  integrate_in_place(x, v, m, forces, params.delta, cfg.step());
  if (cfg.contact_enabled) contact_in_place(x, v, params.mu, params.epsilon, cfg.ground_height);
}

inline void check_stable(const Points& x, const Points& v, const SimConfig& cfg,
                         std::size_t frame) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i].allFinite() || !v[i].allFinite())
      throw InstabilityError(frame, "non-finite state at point " + std::to_string(i));
    if (x[i].cwiseAbs().maxCoeff() > cfg.instability_bound)
      throw InstabilityError(frame, "point " + std::to_string(i) + " exceeded coordinate bound");
  }
}

inline void check_controller_inputs(const SpringGraph& graph, std::size_t ctrl_count) {
  if (!graph.controller_edges.empty() && ctrl_count != graph.controller_count)
    throw DimensionError("controllers", "controller positions must match controller_count");
}

}  // namespace detail

/// Per-point total force: springs, dashpots, controller springs, gravity.
inline Points total_forces(const MassState& state, const SpringGraph& graph,
                           const PhysParams& params, const Points& controllers,
                           const SimConfig& config) {
  if (state.size() != graph.point_count)
    throw DimensionError("state.positions", "length must equal graph.point_count");
  params.validate(graph.edges.size());
  detail::check_controller_inputs(graph, controllers.size());
  Points out;
  detail::accumulate_forces(state.positions, state.velocities, state.masses, graph, params,
                            controllers, config.gravity, out);
  return out;
}

/// Explicit Euler with drag: v' = delta (v + h F / m), x' = x + h v'.
inline MassState integrate_step(const MassState& state, const Points& forces,
                                const PhysParams& params, const SimConfig& config) {
  config.validate();
  if (forces.size() != state.size()) throw DimensionError("forces", "length must equal N");
  for (std::size_t i = 0; i < forces.size(); ++i)
    if (!forces[i].allFinite()) throw NonFiniteForceError(i);
  MassState out = state;
  detail::integrate_in_place(out.positions, out.velocities, out.masses, forces, params.delta,
                             config.step());
  return out;
}

/// Velocity-level ground plane response (plane normal +z).
inline MassState resolve_ground_contact(const MassState& state, double mu, double epsilon,
                                        double ground_height) {
  MassState out = state;
  detail::contact_in_place(out.positions, out.velocities, mu, epsilon, ground_height);
  return out;
}

/// Attaches each controller to its `n_attach` nearest mass points. Ties go
/// to the lower point index; rest lengths are floored at `rest_length_floor`.
inline std::vector<Edge> attach_controllers(const MassState& state,
                                            std::span<const Vec3> controllers_t0,
                                            std::size_t n_attach,
                                            double rest_length_floor = 1e-4,
                                            std::size_t first_controller_index = 0) {
  if (n_attach < 1) throw SchemaError("n_attach", "must be >= 1");
  if (controllers_t0.empty()) throw SchemaError("controllers", "need at least one controller");
  const std::size_t n = state.size();
  const std::size_t take = std::min(n_attach, n);
  std::vector<Edge> out;
  std::vector<std::pair<double, std::size_t>> cand(n);
  for (std::size_t c = 0; c < controllers_t0.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i)
      cand[i] = {(state.positions[i] - controllers_t0[c]).norm(), i};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    for (std::size_t a = 0; a < take; ++a) {
      Edge e;
      e.i = cand[a].second;
      e.j = first_controller_index + c;
      e.kind = EdgeKind::controller;
      e.rest_length = std::max(cand[a].first, rest_length_floor);
      out.push_back(e);
    }
  }
  return out;
}

struct Rollout {
  std::vector<Points> trajectory;  // [frame][point]
  MassState final_state;
};

/// Simulates `frames` frames; frame 0 is the initial configuration.
inline Rollout rollout(const MassState& initial, const SpringGraph& graph,
                       const PhysParams& params, const ControllerTrack& controllers,
                       std::size_t frames, const SimConfig& config) {
  initial.validate();
  graph.validate();
  params.validate(graph.edges.size());
  config.validate();
  controllers.validate();
  if (initial.size() != graph.point_count)
    throw DimensionError("state.positions", "length must equal graph.point_count");
  if (frames < 1) throw SchemaError("frames", "must be >= 1");
  if (!graph.controller_edges.empty()) {
    detail::check_controller_inputs(graph, controllers.count());
    if (controllers.frames() < frames)
      throw DimensionError("controllers.positions", "track shorter than requested frames");
  }

  Rollout r;
  r.trajectory.reserve(frames);
  r.trajectory.push_back(initial.positions);
  Points x = initial.positions, v = initial.velocities, forces, ctrl;
  const bool has_ctrl = !graph.controller_edges.empty();
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    for (int s = 0; s < config.substeps; ++s) {
      if (has_ctrl) detail::interpolate_controllers(controllers, t, s, config.substeps, ctrl);
      detail::substep(x, v, initial.masses, graph, params, ctrl, config, forces);
    }
    detail::check_stable(x, v, config, t + 1);
    r.trajectory.push_back(x);
  }
  r.final_state.positions = std::move(x);
  r.final_state.velocities = std::move(v);
  r.final_state.masses = initial.masses;
  return r;
}

}  // namespace springtwin
