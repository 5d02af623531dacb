#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "springtwin/core.hpp"
#include "springtwin/losses.hpp"
#include "springtwin/sim.hpp"

namespace springtwin {

/// Observed motion a rollout is scored against.
struct SimObservations {
  std::vector<std::size_t> tracked_indices;
  std::vector<Points> tracked_targets;  // [tracked][frame]
  std::vector<Points> target_clouds;    // [frame][point]
};

struct ParamGradients {
  std::vector<double> edge_stiffness;
  double controller_stiffness = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
  double mu = 0.0;
  double epsilon = 0.0;

  bool all_finite() const {
    for (double g : edge_stiffness)
      if (!std::isfinite(g)) return false;
    return std::isfinite(controller_stiffness) && std::isfinite(gamma) && std::isfinite(delta) &&
           std::isfinite(mu) && std::isfinite(epsilon);
  }
};

struct RolloutGradient {
  LossParts loss;  // prior left at 0
  double objective = 0.0;  // trk * tracking + cham * chamfer
  ParamGradients grad;
};

namespace detail {

inline LossParts score(const std::vector<Points>& traj, const SimObservations& obs,
                       std::size_t frames, const LossWeights& w,
                       std::vector<Points>* grad = nullptr) {
  LossParts p;
  if (w.trk > 0 || !obs.tracked_indices.empty())
    p.tracking = tracking_loss(traj, obs.tracked_indices, obs.tracked_targets, frames, grad, w.trk);
  if (w.cham > 0) p.chamfer = chamfer_loss(traj, obs.target_clouds, frames, grad, w.cham);
  return p;
}

/// Reverse pass of one substep. On entry (ax, av) hold the adjoint of the
/// post-step state; on exit the adjoint of the pre-step state (x, v).
inline void substep_backward(const Points& x, const Points& v, const std::vector<double>& m,
                             const SpringGraph& graph, const PhysParams& p, const Points& ctrl,
                             const SimConfig& cfg, Points& ax, Points& av, ParamGradients& g,
                             Points& forces) {
  const std::size_t n = x.size();
  const double h = cfg.step();
  accumulate_forces(x, v, m, graph, p, ctrl, cfg.gravity, forces);

  // contact, with the branch pattern of the forward pass frozen
  if (cfg.contact_enabled) {
    const double mu = p.mu, eps = p.epsilon;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 v1 = p.delta * (v[i] + (h / m[i]) * forces[i]);
      const Vec3 x1 = x[i] + h * v1;
      if (!(x1.z() < cfg.ground_height && v1.z() < 0.0)) continue;
      ax[i].z() = 0.0;
      const double a_vz2 = av[i].z();
      double a_vz1 = -eps * a_vz2;
      g.epsilon += -v1.z() * a_vz2;
      const double nrm = -v1.z();
      const double dvn = (1.0 + eps) * nrm;
      const double vt = std::hypot(v1.x(), v1.y());
      double ax1 = av[i].x(), ay1 = av[i].y();
      if (vt > 0.0) {
        const double s = 1.0 - mu * dvn / vt;
        if (s > 0.0) {
          const double q = av[i].x() * v1.x() + av[i].y() * v1.y();
          const double ds_dvt = mu * dvn / (vt * vt * vt);  // times v1_t
          ax1 = s * av[i].x() + q * ds_dvt * v1.x();
          ay1 = s * av[i].y() + q * ds_dvt * v1.y();
          a_vz1 += q * mu * (1.0 + eps) / vt;
          g.mu += q * (-dvn / vt);
          g.epsilon += q * (-mu * nrm / vt);
        } else {
          ax1 = ay1 = 0.0;
        }
      } else if (mu * dvn > 0.0) {
        ax1 = ay1 = 0.0;
      }
      av[i] = Vec3(ax1, ay1, a_vz1);
    }
  }

  // Euler update
  Points& a_force = forces;  // reuse: forces no longer needed past this point
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a_v1 = av[i] + h * ax[i];
    const Vec3 pre = v[i] + (h / m[i]) * forces[i];
    g.delta += a_v1.dot(pre);
    av[i] = p.delta * a_v1;
    a_force[i] = (p.delta * h / m[i]) * a_v1;
  }

  // springs and dashpots
  const double gamma = p.gamma;
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const Edge& ed = graph.edges[e];
    const Vec3 d = x[ed.j] - x[ed.i];
    const double len = d.norm();
    const Vec3 u = d / len;
    const Vec3 a = a_force[ed.i] - a_force[ed.j];
    const double k = p.edge_stiffness[e];
    const double ua = u.dot(a);
    g.edge_stiffness[e] += (len - ed.rest_length) * ua;
    const double r = ed.rest_length / len;
    const Vec3 dd = k * ((1.0 - r) * a + (r * ua) * u);
    ax[ed.j] += dd;
    ax[ed.i] -= dd;
    const Vec3 dv = v[ed.i] - v[ed.j];
    g.gamma += -dv.dot(a);
    av[ed.i] -= gamma * a;
    av[ed.j] += gamma * a;
  }
  const double kc = p.controller_stiffness;
  for (const Edge& ed : graph.controller_edges) {
    const Vec3 d = ctrl[ed.j] - x[ed.i];
    const double len = d.norm();
    if (len == 0.0) continue;
    const Vec3 u = d / len;
    const Vec3& a = a_force[ed.i];
    const double ua = u.dot(a);
    g.controller_stiffness += (len - ed.rest_length) * ua;
    const double r = ed.rest_length / len;
    ax[ed.i] -= kc * ((1.0 - r) * a + (r * ua) * u);
  }
}

inline void check_rollout_inputs(const MassState& initial, const SpringGraph& graph,
                                 const PhysParams& params, const ControllerTrack& controllers,
                                 std::size_t frames, const SimConfig& config) {
  initial.validate();
  params.validate(graph.edges.size());
  config.validate();
  if (initial.size() != graph.point_count)
    throw DimensionError("state.positions", "length must equal graph.point_count");
  if (frames < 1) throw SchemaError("frames", "must be >= 1");
  if (!graph.controller_edges.empty()) {
    check_controller_inputs(graph, controllers.count());
    if (controllers.frames() < frames)
      throw DimensionError("controllers.positions", "track shorter than requested frames");
  }
}

/// Forward pass without validation; optionally keeps every pre-substep state.
inline std::vector<Points> simulate(const MassState& initial, const SpringGraph& graph,
                                    const PhysParams& params, const ControllerTrack& controllers,
                                    std::size_t frames, const SimConfig& config,
                                    std::vector<Points>* xs = nullptr,
                                    std::vector<Points>* vs = nullptr) {
  std::vector<Points> traj;
  traj.reserve(frames);
  traj.push_back(initial.positions);
  Points x = initial.positions, v = initial.velocities, forces, ctrl;
  const bool has_ctrl = !graph.controller_edges.empty();
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    for (int s = 0; s < config.substeps; ++s) {
      if (xs) {
        xs->push_back(x);
        vs->push_back(v);
      }
      if (has_ctrl) interpolate_controllers(controllers, t, s, config.substeps, ctrl);
      substep(x, v, initial.masses, graph, params, ctrl, config, forces);
    }
    check_stable(x, v, config, t + 1);
    traj.push_back(x);
  }
  return traj;
}

}  // namespace detail

/// Loss of a rollout against observations over frames [0, frames).
inline LossParts evaluate_rollout_loss(const MassState& initial, const SpringGraph& graph,
                                       const PhysParams& params, const ControllerTrack& controllers,
                                       std::size_t frames, const SimConfig& config,
                                       const SimObservations& obs, const LossWeights& weights) {
  detail::check_rollout_inputs(initial, graph, params, controllers, frames, config);
  const auto traj = detail::simulate(initial, graph, params, controllers, frames, config);
  return detail::score(traj, obs, frames, weights);
}

/// Reverse-mode adjoint of trk * L_trk + cham * L_cham through the exact
/// forward recurrence. Pre-substep states are stored during the forward
/// pass; contact branches are taken from the forward pass.
inline RolloutGradient rollout_grad(const MassState& initial, const SpringGraph& graph,
                                    const PhysParams& params, const ControllerTrack& controllers,
                                    std::size_t frames, const SimConfig& config,
                                    const SimObservations& obs, const LossWeights& weights) {
  detail::check_rollout_inputs(initial, graph, params, controllers, frames, config);
  const std::size_t n = initial.size();
  std::vector<Points> xs, vs;
  xs.reserve((frames - 1) * static_cast<std::size_t>(config.substeps));
  vs.reserve(xs.capacity());
  const auto traj = detail::simulate(initial, graph, params, controllers, frames, config, &xs, &vs);

  std::vector<Points> dframe(frames, Points(n, Vec3::Zero()));
  RolloutGradient out;
  out.loss = detail::score(traj, obs, frames, weights, &dframe);
  out.objective = weights.trk * out.loss.tracking + weights.cham * out.loss.chamfer;
  out.grad.edge_stiffness.assign(graph.edges.size(), 0.0);

  Points ax(n, Vec3::Zero()), av(n, Vec3::Zero()), scratch, ctrl;
  const bool has_ctrl = !graph.controller_edges.empty();
  const auto S = static_cast<std::size_t>(config.substeps);
  for (std::size_t t = frames; t-- > 1;) {
    for (std::size_t i = 0; i < n; ++i) ax[i] += dframe[t][i];
    for (std::size_t s = S; s-- > 0;) {
      if (has_ctrl)
        detail::interpolate_controllers(controllers, t - 1, static_cast<int>(s), config.substeps,
                                        ctrl);
      const std::size_t idx = (t - 1) * S + s;
      detail::substep_backward(xs[idx], vs[idx], initial.masses, graph, params, ctrl, config, ax,
                               av, out.grad, scratch);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (!ax[i].allFinite() || !av[i].allFinite())
        throw InstabilityError(t, "non-finite adjoint");
  }
  if (!out.grad.all_finite()) throw InstabilityError(0, "non-finite parameter gradient");
  return out;
}

/// Central difference of f at x. With `log_space`, the step is taken in
/// log x and the result converted back to d f / d x.
inline double central_difference(const std::function<double(double)>& f, double x, double h,
                                 bool log_space) {
  if (!(h > 0)) throw SchemaError("h", "must be positive");
  if (log_space) {
    const double hi = f(x * std::exp(h)), lo = f(x * std::exp(-h));
    return (hi - lo) / (2.0 * h) / x;
  }
  const double step = h * std::max(std::abs(x), 1.0);
  return (f(x + step) - f(x - step)) / (2.0 * step);
}

/// Finite-difference oracle for rollout_grad. Stiffnesses and a positive
/// gamma are stepped in log-space; delta, mu and epsilon linearly.
inline ParamGradients finite_diff_grad(const MassState& initial, const SpringGraph& graph,
                                       const PhysParams& params,
                                       const ControllerTrack& controllers, std::size_t frames,
                                       const SimConfig& config, const SimObservations& obs,
                                       const LossWeights& weights, double h = 1e-4) {
  detail::check_rollout_inputs(initial, graph, params, controllers, frames, config);
  auto objective = [&](const PhysParams& p) {
    const auto traj = detail::simulate(initial, graph, p, controllers, frames, config);
    const auto parts = detail::score(traj, obs, frames, weights);
    return weights.trk * parts.tracking + weights.cham * parts.chamfer;
  };
  auto probe = [&](auto setter, double x0, bool log_space) {
    return central_difference(
        [&](double x) {
          PhysParams p = params;
          setter(p, x);
          return objective(p);
        },
        x0, h, log_space);
  };
  ParamGradients g;
  g.edge_stiffness.resize(graph.edges.size());
  for (std::size_t e = 0; e < graph.edges.size(); ++e)
    g.edge_stiffness[e] =
        probe([e](PhysParams& p, double x) { p.edge_stiffness[e] = x; }, params.edge_stiffness[e], true);
  g.controller_stiffness = probe([](PhysParams& p, double x) { p.controller_stiffness = x; },
                                 params.controller_stiffness, true);
  g.gamma = probe([](PhysParams& p, double x) { p.gamma = x; }, params.gamma, params.gamma > 0);
  g.delta = probe([](PhysParams& p, double x) { p.delta = x; }, params.delta, false);
  g.mu = probe([](PhysParams& p, double x) { p.mu = x; }, params.mu, false);
  g.epsilon = probe([](PhysParams& p, double x) { p.epsilon = x; }, params.epsilon, false);
  return g;
}

}  // namespace springtwin
