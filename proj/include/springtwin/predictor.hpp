#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "springtwin/core.hpp"
#include "springtwin/material.hpp"
#include "springtwin/sim.hpp"

namespace springtwin {

inline constexpr std::size_t kGeoDim = 10;
inline constexpr std::size_t kMotionDim = 16;
inline constexpr std::size_t kGlobalOutputs = 5;  // gamma, delta, mu, epsilon, controller k

/// Layout:
///  0     rest length / bounding-box diagonal
///  1     current length / rest length
///  2..4  unit direction from i to j
///  5, 6  endpoint degrees / max degree
///  7, 8  mean incident rest length at i, j / mean rest length
///  9     1 for intra-part edges, 0 for boundary edges
using EdgeGeometryFeature = std::array<double, kGeoDim>;
using MotionFeature = std::array<double, kMotionDim>;

inline double bounding_box_diagonal(const Points& pts) {
  if (pts.empty()) return 0.0;
  Vec3 lo = pts.front(), hi = pts.front();
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

/// Geometry features for every object edge of `graph` at `positions`.
inline std::vector<EdgeGeometryFeature> edge_geometry_features(const SpringGraph& graph,
                                                               const Points& positions) {
  const std::size_t n = graph.point_count;
  std::vector<double> degree(n, 0.0), incident(n, 0.0);
  double mean_rest = 0.0;
  for (const auto& e : graph.edges) {
    degree[e.i] += 1;
    degree[e.j] += 1;
    incident[e.i] += e.rest_length;
    incident[e.j] += e.rest_length;
    mean_rest += e.rest_length;
  }
  if (!graph.edges.empty()) mean_rest /= static_cast<double>(graph.edges.size());
  double max_deg = 1.0;
  for (double d : degree) max_deg = std::max(max_deg, d);
  double diag = bounding_box_diagonal(positions);
  if (!(diag > 0)) diag = 1.0;

  std::vector<EdgeGeometryFeature> out(graph.edges.size());
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const Edge& e = graph.edges[k];
    const Vec3 d = positions[e.j] - positions[e.i];
    const double len = d.norm();
    if (len == 0.0) throw DegenerateEdgeError(e.i, e.j);
    const Vec3 u = d / len;
    auto& f = out[k];
    f[0] = e.rest_length / diag;
    f[1] = len / e.rest_length;
    f[2] = u.x();
    f[3] = u.y();
    f[4] = u.z();
    f[5] = degree[e.i] / max_deg;
    f[6] = degree[e.j] / max_deg;
    f[7] = incident[e.i] / degree[e.i] / mean_rest;
    f[8] = incident[e.j] / degree[e.j] / mean_rest;
    f[9] = e.kind == EdgeKind::intra ? 1.0 : 0.0;
  }
  return out;
}

inline EdgeGeometryFeature edge_geometry_feature(const SpringGraph& graph, const Points& positions,
                                                 std::size_t edge) {
  if (edge >= graph.edges.size()) throw SchemaError("edge", "index out of range");
  return edge_geometry_features(graph, positions).at(edge);
}

namespace detail {

/// Six motion statistics over a set of trajectories [point][frame].
inline std::array<double, 6> motion_stats(const std::vector<Points>& tracks, double dt) {
  std::array<double, 6> s{};
  if (tracks.empty()) return s;
  const std::size_t t = tracks.front().size();
  double speed_sum = 0.0, max_speed = 0.0, acc_sum = 0.0, disp = 0.0, path = 0.0, crossings = 0.0;
  std::size_t speed_n = 0, acc_n = 0;
  for (const auto& p : tracks) {
    std::vector<Vec3> vel(t - 1);
    for (std::size_t f = 0; f + 1 < t; ++f) {
      vel[f] = (p[f + 1] - p[f]) / dt;
      const double sp = vel[f].norm();
      speed_sum += sp;
      max_speed = std::max(max_speed, sp);
      path += (p[f + 1] - p[f]).norm();
      ++speed_n;
    }
    for (std::size_t f = 0; f + 1 < vel.size(); ++f) {
      acc_sum += ((vel[f + 1] - vel[f]) / dt).norm();
      ++acc_n;
    }
    for (int a = 0; a < 3; ++a)
      for (std::size_t f = 0; f + 1 < vel.size(); ++f)
        if (vel[f][a] * vel[f + 1][a] < 0) crossings += 1;
    disp += (p[t - 1] - p[0]).norm();
  }
  const double np = static_cast<double>(tracks.size());
  const double duration = static_cast<double>(t - 1) * dt;
  s[0] = speed_n ? speed_sum / static_cast<double>(speed_n) : 0.0;
  s[1] = max_speed;
  s[2] = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  s[3] = disp / np;
  s[4] = path / np;
  s[5] = crossings / (3.0 * np) / duration;
  return s;
}

}  // namespace detail

/// Hand-crafted 16-D motion descriptor (before standardization):
///  0..5   controller mean speed, max speed, mean |acceleration|, net
///         displacement, path length, velocity zero-crossings per second
///  6..11  the same over tracked object points
///  12     duration (s)
///  13     controller count
///  14     tracked point count
///  15     tracked / controller mean-speed ratio (0 without controller motion)
inline MotionFeature motion_descriptor(const ControllerTrack& controllers,
                                       const std::vector<Points>& tracked, double dt,
                                       std::size_t frames) {
  if (frames < 2) throw SchemaError("frames", "motion descriptor needs at least two frames");
  if (!(dt > 0)) throw SchemaError("dt", "must be positive");
  auto clip = [frames](const std::vector<Points>& src, const char* field) {
    std::vector<Points> out;
    for (const auto& p : src) {
      if (p.size() < frames) throw DimensionError(field, "trajectory shorter than frames");
      out.emplace_back(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(frames));
    }
    return out;
  };
  const auto ctrl = detail::motion_stats(clip(controllers.positions, "controllers"), dt);
  const auto trk = detail::motion_stats(clip(tracked, "tracked"), dt);
  MotionFeature f{};
  for (int k = 0; k < 6; ++k) {
    f[static_cast<std::size_t>(k)] = ctrl[static_cast<std::size_t>(k)];
    f[static_cast<std::size_t>(k + 6)] = trk[static_cast<std::size_t>(k)];
  }
  f[12] = static_cast<double>(frames - 1) * dt;
  f[13] = static_cast<double>(controllers.count());
  f[14] = static_cast<double>(tracked.size());
  f[15] = ctrl[0] > 0 ? trk[0] / ctrl[0] : 0.0;
  return f;
}

struct MotionStandardization {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kMotionDim);
  Eigen::VectorXd std = Eigen::VectorXd::Ones(kMotionDim);

  static MotionStandardization fit(const std::vector<MotionFeature>& raw) {
    MotionStandardization s;
    if (raw.empty()) return s;
    const double n = static_cast<double>(raw.size());
    for (std::size_t d = 0; d < kMotionDim; ++d) {
      double m = 0.0;
      for (const auto& r : raw) m += r[d];
      m /= n;
      double v = 0.0;
      for (const auto& r : raw) v += (r[d] - m) * (r[d] - m);
      const double sd = std::sqrt(v / n);
      s.mean[static_cast<Eigen::Index>(d)] = m;
      s.std[static_cast<Eigen::Index>(d)] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  Eigen::VectorXd apply(const MotionFeature& raw) const {
    Eigen::VectorXd z(kMotionDim);
    for (std::size_t d = 0; d < kMotionDim; ++d) {
      const auto k = static_cast<Eigen::Index>(d);
      z[k] = (raw[d] - mean[k]) / std[k];
    }
    return z;
  }
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Fully connected network: tanh on hidden layers, linear output.
struct Mlp {
  std::vector<DenseLayer> layers;

  struct Cache {
    std::vector<Eigen::VectorXd> activations;  // input, then each layer's output
  };

  static Mlp create(const std::vector<std::size_t>& sizes, std::uint64_t seed,
                    double output_scale = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mlp m;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes[l]);
      const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      double sd = std::sqrt(2.0 / static_cast<double>(in + out));
      if (l + 2 == sizes.size()) sd *= output_scale;
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = sd * normal(rng);
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  /// Same shapes, all zeros; used as a gradient accumulator.
  Mlp zeros_like() const {
    Mlp z;
    for (const auto& l : layers)
      z.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                          Eigen::VectorXd::Zero(l.bias.size())});
    return z;
  }

  std::size_t input_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t output_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.rows()); }

  void validate(const std::string& field) const {
    if (layers.empty()) throw SchemaError(field, "network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto f = field + ".layers[" + std::to_string(l) + "]";
      if (layers[l].bias.size() != layers[l].weight.rows())
        throw DimensionError(f + ".bias", "length must equal output width");
      if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
        throw DimensionError(f + ".weight", "input width must match previous layer");
      if (!layers[l].weight.allFinite() || !layers[l].bias.allFinite())
        throw NonFiniteError(f, "non-finite weight");
    }
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& in, Cache* cache = nullptr) const {
    if (static_cast<std::size_t>(in.size()) != input_dim())
      throw DimensionError("decoder.input", "expected " + std::to_string(input_dim()) +
                                                " values, got " + std::to_string(in.size()));
    if (cache) {
      cache->activations.clear();
      cache->activations.push_back(in);
    }
    Eigen::VectorXd a = in;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      a = layers[l].weight * a + layers[l].bias;
      if (l + 1 < layers.size()) a = a.array().tanh();
      if (cache) cache->activations.push_back(a);
    }
    return a;
  }

  /// Accumulates parameter gradients into `grad`; returns d loss / d input.
  Eigen::VectorXd backward(const Cache& cache, const Eigen::VectorXd& dout, Mlp& grad) const {
    Eigen::VectorXd g = dout;
    for (std::size_t l = layers.size(); l-- > 0;) {
      if (l + 1 < layers.size())
        g = g.array() * (1.0 - cache.activations[l + 1].array().square());
      grad.layers[l].weight.noalias() += g * cache.activations[l].transpose();
      grad.layers[l].bias += g;
      g = layers[l].weight.transpose() * g;
    }
    return g;
  }
};

/// affine -> tanh -> ... -> affine
inline Eigen::VectorXd decoder_forward(const Mlp& weights, const Eigen::VectorXd& input) {
  return weights.forward(input);
}

/// Output ranges in natural units; stiffness, gamma and controller
/// stiffness are squashed in log-space, the rest linearly.
struct ParamRanges {
  Interval stiffness{1.0, 1e5};
  Interval gamma{1e-3, 50.0};
  Interval delta{0.9, 1.0};
  Interval mu{0.0, 2.0};
  Interval epsilon{0.0, 1.0};
  Interval controller_stiffness{10.0, 1e5};

  void validate(const std::string& field = "ranges") const {
    auto check = [&](const Interval& iv, const char* name, bool log_space) {
      if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
        throw NonFiniteError(field + "." + name, "non-finite");
      if (!(iv.lo < iv.hi)) throw SchemaError(field + "." + name, "requires min < max");
      if (log_space && !(iv.lo > 0)) throw SchemaError(field + "." + name, "must be positive");
    };
    check(stiffness, "stiffness", true);
    check(gamma, "gamma", true);
    check(delta, "delta", false);
    check(mu, "mu", false);
    check(epsilon, "epsilon", false);
    check(controller_stiffness, "controller_stiffness", true);
    if (!(delta.lo > 0 && delta.hi <= 1)) throw SchemaError(field + ".delta", "must lie in (0, 1]");
    if (!(epsilon.lo >= 0 && epsilon.hi <= 1))
      throw SchemaError(field + ".epsilon", "must lie in [0, 1]");
    if (mu.lo < 0) throw SchemaError(field + ".mu", "must be >= 0");
  }
};

inline double log_squash(double y, const Interval& natural) {
  const double a = std::log(natural.lo), b = std::log(natural.hi);
  return std::exp(a + sigmoid(y) * (b - a));
}

/// d log_squash / dy
inline double log_squash_grad(double y, const Interval& natural) {
  const double s = sigmoid(y);
  return log_squash(y, natural) * s * (1.0 - s) * (std::log(natural.hi) - std::log(natural.lo));
}

inline double lin_squash(double y, const Interval& iv) { return iv.lo + sigmoid(y) * (iv.hi - iv.lo); }

inline double lin_squash_grad(double y, const Interval& iv) {
  const double s = sigmoid(y);
  return s * (1.0 - s) * (iv.hi - iv.lo);
}

inline Eigen::VectorXd concat(std::initializer_list<const Eigen::VectorXd*> parts) {
  Eigen::Index n = 0;
  for (auto* p : parts) n += p->size();
  Eigen::VectorXd out(n);
  Eigen::Index off = 0;
  for (auto* p : parts) {
    out.segment(off, p->size()) = *p;
    off += p->size();
  }
  return out;
}

inline Eigen::VectorXd to_vector(const EdgeGeometryFeature& g) {
  return Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
}

/// k = exp(log k_min + sigmoid(y) (log k_max - log k_min)), y the raw decoder output.
inline double predict_edge_stiffness(const Eigen::VectorXd& z_vid, const Eigen::VectorXd& z_mat,
                                     const EdgeGeometryFeature& z_geo, const Mlp& decoder,
                                     const Interval& stiffness_range) {
  const Eigen::VectorXd geo = to_vector(z_geo);
  const Eigen::VectorXd in = concat({&z_vid, &z_mat, &geo});
  return log_squash(decoder.forward(in)[0], stiffness_range);
}

struct GlobalParams {
  double gamma = 0.0;
  double delta = 1.0;
  double mu = 0.0;
  double epsilon = 0.0;
  double controller_stiffness = 1e3;
};

inline GlobalParams squash_globals(const Eigen::VectorXd& y, const ParamRanges& r) {
  return GlobalParams{log_squash(y[0], r.gamma), lin_squash(y[1], r.delta), lin_squash(y[2], r.mu),
                      lin_squash(y[3], r.epsilon), log_squash(y[4], r.controller_stiffness)};
}

inline GlobalParams predict_globals(const Eigen::VectorXd& z_vid, const Eigen::VectorXd& z_mat_global,
                                    const Mlp& decoder, const ParamRanges& ranges) {
  const Eigen::VectorXd in = concat({&z_vid, &z_mat_global});
  const Eigen::VectorXd y = decoder.forward(in);
  if (static_cast<std::size_t>(y.size()) != kGlobalOutputs)
    throw DimensionError("global_decoder", "must have 5 outputs");
  return squash_globals(y, ranges);
}

}  // namespace springtwin
