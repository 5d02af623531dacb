#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "springtwin/core.hpp"
#include "springtwin/sim.hpp"

namespace springtwin {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Probability vector over material classes.
struct MaterialDistribution {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }

  void validate(const std::string& field = "distribution") const {
    if (weights.empty()) throw SchemaError(field, "must be non-empty");
    double sum = 0.0;
    for (std::size_t q = 0; q < weights.size(); ++q) {
      if (!std::isfinite(weights[q]))
        throw NonFiniteError(field + "[" + std::to_string(q) + "]", "non-finite");
      if (weights[q] < 0)
        throw SchemaError(field + "[" + std::to_string(q) + "]", "weights must be >= 0");
      sum += weights[q];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw SchemaError(field, "weights must sum to 1");
  }

  static MaterialDistribution one_hot(std::size_t n, std::size_t q) {
    MaterialDistribution m;
    m.weights.assign(n, 0.0);
    m.weights[q] = 1.0;
    return m;
  }
};

struct MaterialClass {
  std::string name;
  double log_stiffness_mean = 0.0;  // log N/m
  double log_stiffness_std = 1.0;
  Interval damping;
  Interval drag;
  Interval friction;
  Interval elasticity;
};

struct MaterialClassTable {
  std::vector<MaterialClass> classes;

  std::size_t size() const { return classes.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t q = 0; q < classes.size(); ++q)
      if (classes[q].name == name) return q;
    throw SchemaError("materials.classes", "unknown material class '" + name + "'");
  }

  void validate(const std::string& field = "materials.classes") const {
    if (classes.empty()) throw SchemaError(field, "table must be non-empty");
    for (std::size_t q = 0; q < classes.size(); ++q) {
      const auto& c = classes[q];
      const std::string f = field + "[" + std::to_string(q) + "]";
      if (!std::isfinite(c.log_stiffness_mean))
        throw NonFiniteError(f + ".log_stiffness_mean", "non-finite");
      if (!(c.log_stiffness_std > 0) || !std::isfinite(c.log_stiffness_std))
        throw SchemaError(f + ".log_stiffness_std", "must be positive");
      auto check = [&](const Interval& iv, const char* name, double lo, double hi) {
        if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
          throw NonFiniteError(f + "." + name, "non-finite");
        if (iv.lo > iv.hi) throw SchemaError(f + "." + name, "lo must be <= hi");
        if (iv.lo < lo || iv.hi > hi) throw SchemaError(f + "." + name, "outside parameter bounds");
      };
      check(c.damping, "damping_range", 0.0, 1e6);
      check(c.drag, "drag_range", 1e-12, 1.0);
      check(c.friction, "friction_range", 0.0, 1e6);
      check(c.elasticity, "elasticity_range", 0.0, 1.0);
    }
  }

  /// Ten artifact-default classes; stiffness means span 10 to 1e5 N/m.
  static MaterialClassTable defaults() {
    auto row = [](const char* name, double k, double sd, Interval g, Interval d, Interval mu,
                  Interval eps) {
      return MaterialClass{name, std::log(k), sd, g, d, mu, eps};
    };
    MaterialClassTable t;
    t.classes = {
        row("rope", 500.0, 1.0, {0.5, 5.0}, {0.95, 1.0}, {0.2, 1.0}, {0.0, 0.3}),
        row("cloth", 200.0, 1.0, {0.1, 2.0}, {0.95, 1.0}, {0.3, 1.0}, {0.0, 0.2}),
        row("plush", 100.0, 1.0, {0.2, 3.0}, {0.95, 1.0}, {0.4, 1.2}, {0.0, 0.3}),
        row("rubber", 3000.0, 1.0, {0.1, 2.0}, {0.97, 1.0}, {0.6, 1.5}, {0.3, 0.9}),
        row("foam", 80.0, 1.0, {0.2, 3.0}, {0.93, 1.0}, {0.4, 1.2}, {0.0, 0.4}),
        row("paper", 2000.0, 1.0, {0.05, 1.0}, {0.95, 1.0}, {0.2, 0.6}, {0.0, 0.3}),
        row("plastic", 2e4, 1.0, {0.05, 1.0}, {0.97, 1.0}, {0.1, 0.5}, {0.2, 0.7}),
        row("leather", 1500.0, 1.0, {0.2, 3.0}, {0.95, 1.0}, {0.3, 0.9}, {0.0, 0.3}),
        row("sponge", 10.0, 1.0, {0.2, 3.0}, {0.93, 1.0}, {0.4, 1.2}, {0.0, 0.3}),
        row("near-rigid", 1e5, 0.5, {0.05, 1.0}, {0.97, 1.0}, {0.1, 0.6}, {0.2, 0.8}),
    };
    return t;
  }
};

/// Moment-matched reference distribution for a part.
struct PartPrior {
  double log_stiffness_mean = 0.0;
  double log_stiffness_std = 1.0;
  Interval damping;
  Interval drag;
  Interval friction;
  Interval elasticity;
};

/// Learnable material embeddings, one row per class.
struct Codebook {
  Eigen::MatrixXd entries;  // N_mat x d_e

  std::size_t classes() const { return static_cast<std::size_t>(entries.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(entries.cols()); }

  /// Zero-mean unit-variance draws scaled by 1/sqrt(d_e).
  static Codebook random(std::size_t n_mat, std::size_t d_e, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Codebook cb;
    cb.entries.resize(static_cast<Eigen::Index>(n_mat), static_cast<Eigen::Index>(d_e));
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_e));
    for (Eigen::Index q = 0; q < cb.entries.rows(); ++q)
      for (Eigen::Index c = 0; c < cb.entries.cols(); ++c) cb.entries(q, c) = scale * normal(rng);
    return cb;
  }

  /// Fixed embedding e_q = unit vector q; used when the codebook is ablated.
  static Codebook identity(std::size_t n_mat, std::size_t d_e) {
    if (n_mat > d_e) throw DimensionError("codebook", "identity codebook needs N_mat <= d_e");
    Codebook cb;
    cb.entries = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_mat),
                                       static_cast<Eigen::Index>(d_e));
    for (std::size_t q = 0; q < n_mat; ++q)
      cb.entries(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q)) = 1.0;
    return cb;
  }
};

/// z = sum_q m_q e_q.
inline Eigen::VectorXd embed_material(const MaterialDistribution& m, const Codebook& codebook) {
  m.validate();
  if (m.size() != codebook.classes())
    throw DimensionError("distribution", "length must equal codebook class count");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(codebook.entries.cols());
  for (std::size_t q = 0; q < m.size(); ++q)
    z += m.weights[q] * codebook.entries.row(static_cast<Eigen::Index>(q)).transpose();
  return z;
}

/// Intra edges take their part's embedding; boundary edges the mean of both parts.
inline Eigen::VectorXd edge_material_feature(const Edge& edge, const std::vector<int>& part_of,
                                             const std::vector<Eigen::VectorXd>& part_embeddings) {
  switch (edge.kind) {
    case EdgeKind::intra:
      return part_embeddings.at(static_cast<std::size_t>(edge.part));
    case EdgeKind::boundary: {
      const auto& a = part_embeddings.at(static_cast<std::size_t>(part_of.at(edge.i)));
      const auto& b = part_embeddings.at(static_cast<std::size_t>(part_of.at(edge.j)));
      return 0.5 * (a + b);
    }
    case EdgeKind::controller:
      break;
  }
  throw SchemaError("edge.kind", "controller edges have no material feature");
}

/// Part-size weighted mean of the part embeddings.
inline Eigen::VectorXd global_material_feature(const std::vector<Eigen::VectorXd>& part_embeddings,
                                               const std::vector<std::size_t>& part_sizes) {
  if (part_embeddings.empty() || part_embeddings.size() != part_sizes.size())
    throw DimensionError("part_sizes", "one size per part embedding required");
  double total = 0.0;
  for (auto s : part_sizes) total += static_cast<double>(s);
  if (total < 1) throw SchemaError("part_sizes", "total must be >= 1");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(part_embeddings.front().size());
  for (std::size_t k = 0; k < part_embeddings.size(); ++k)
    z += (static_cast<double>(part_sizes[k]) / total) * part_embeddings[k];
  return z;
}

/// Mixture of class log-stiffness Gaussians collapsed to one Gaussian by
/// moment matching; global-parameter ranges are weighted interval means.
inline PartPrior part_prior(const MaterialDistribution& m, const MaterialClassTable& table) {
  m.validate();
  if (m.size() != table.size())
    throw DimensionError("distribution", "length must equal material class count");
  PartPrior p;
  double mean = 0.0;
  Interval g{0, 0}, d{0, 0}, f{0, 0}, e{0, 0};
  auto acc = [](Interval& into, const Interval& iv, double w) {
    into.lo += w * iv.lo;
    into.hi += w * iv.hi;
  };
  for (std::size_t q = 0; q < m.size(); ++q) {
    const double w = m.weights[q];
    const auto& c = table.classes[q];
    mean += w * c.log_stiffness_mean;
    acc(g, c.damping, w);
    acc(d, c.drag, w);
    acc(f, c.friction, w);
    acc(e, c.elasticity, w);
  }
  // single component: return it untouched rather than through the moment identity
  for (std::size_t q = 0; q < m.size(); ++q) {
    if (m.weights[q] == 1.0) {
      const auto& c = table.classes[q];
      return PartPrior{c.log_stiffness_mean, c.log_stiffness_std, c.damping, c.drag, c.friction,
                       c.elasticity};
    }
  }
  // sum_q m_q (s_q^2 + mu_q^2) - mean^2, in the cancellation-free form
  double var = 0.0;
  for (std::size_t q = 0; q < m.size(); ++q) {
    const auto& c = table.classes[q];
    const double dm = c.log_stiffness_mean - mean;
    var += m.weights[q] * (c.log_stiffness_std * c.log_stiffness_std + dm * dm);
  }
  p.log_stiffness_mean = mean;
  p.log_stiffness_std = std::sqrt(var);
  p.damping = g;
  p.drag = d;
  p.friction = f;
  p.elasticity = e;
  return p;
}

}  // namespace springtwin
