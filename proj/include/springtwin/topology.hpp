#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Core>

#include "springtwin/core.hpp"
#include "springtwin/material.hpp"
#include "springtwin/sim.hpp"
#include "springtwin/spatial.hpp"

namespace springtwin {

struct PartDecomposition {
  std::vector<int> assignments;
  int K = 0;
  std::vector<std::size_t> part_sizes;
  Eigen::MatrixXd centroids;  // K x d_feat, in standardized feature space

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < assignments.size(); ++i)
      out[static_cast<std::size_t>(assignments[i])].push_back(i);
    return out;
  }

  static PartDecomposition single(std::size_t n) {
    PartDecomposition d;
    d.assignments.assign(n, 0);
    d.K = 1;
    d.part_sizes = {n};
    d.centroids = Eigen::MatrixXd::Zero(1, 1);
    return d;
  }
};

struct PartTopology {
  std::size_t knn = 6;
  double radius = std::numeric_limits<double>::infinity();
};

struct TopologyConfig {
  int base_knn = 6;
  double base_radius_scale = 2.5;
  int boundary_pairs = 3;
  double k_ref = 1e3;  // N/m
};

namespace detail {

inline Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& f) {
  Eigen::MatrixXd out = f;
  const double n = static_cast<double>(f.rows());
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    const double mean = f.col(c).sum() / n;
    double var = 0.0;
    for (Eigen::Index r = 0; r < f.rows(); ++r) var += (f(r, c) - mean) * (f(r, c) - mean);
    double sd = std::sqrt(var / n);
    if (!(sd > 0)) sd = 1.0;
    out.col(c) = (f.col(c).array() - mean) / sd;
  }
  return out;
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Lloyd clustering with distance-weighted seeding on per-dimension
/// standardized features. Labels are canonical: part 0 holds point 0, and
/// each new label appears in increasing point order.
inline PartDecomposition cluster_parts(const Eigen::MatrixXd& features, int K, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (K < 1) throw SchemaError("K", "must be >= 1");
  if (n < 1) throw SchemaError("features", "must contain at least one point");
  if (static_cast<std::size_t>(K) > n) throw SchemaError("K", "exceeds number of points");
  if (!features.allFinite()) throw NonFiniteError("features", "non-finite feature value");

  const Eigen::MatrixXd f = detail::standardize_columns(features);
  const auto k = static_cast<std::size_t>(K);
  const Eigen::Index d = f.cols();
  Eigen::MatrixXd cent(static_cast<Eigen::Index>(k), d);

  auto dist2 = [&](std::size_t i, std::size_t c) {
    return (f.row(static_cast<Eigen::Index>(i)) - cent.row(static_cast<Eigen::Index>(c)))
        .squaredNorm();
  };

  // ++-style seeding
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.push_back(static_cast<std::size_t>(rng() % n));
  cent.row(0) = f.row(static_cast<Eigen::Index>(chosen[0]));
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], dist2(i, c - 1));
      total += best[i];
    }
    std::size_t pick = n;
    if (total > 0) {
      const double u = detail::uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += best[i];
        if (best[i] > 0 && acc > u) {
          pick = i;
          break;
        }
      }
      if (pick == n)
        for (std::size_t i = n; i-- > 0;)
          if (best[i] > 0) {
            pick = i;
            break;
          }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
    }
    chosen.push_back(pick);
    cent.row(static_cast<Eigen::Index>(c)) = f.row(static_cast<Eigen::Index>(pick));
  }

  std::vector<int> assign(n, 0);
  std::vector<double> own(n, 0.0);
  auto reassign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      int bc = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = dist2(i, c);
        if (dd < bd) {
          bd = dd;
          bc = static_cast<int>(c);
        }
      }
      assign[i] = bc;
      own[i] = bd;
      inertia += bd;
    }
    return inertia;
  };
  // re-seed each empty cluster from the point farthest from its centroid
  auto fill_empty = [&] {
    bool changed = false;
    for (std::size_t guard = 0; guard <= n; ++guard) {
      std::vector<std::size_t> sizes(k, 0);
      for (int a : assign) ++sizes[static_cast<std::size_t>(a)];
      auto empty = std::find(sizes.begin(), sizes.end(), std::size_t{0});
      if (empty == sizes.end()) return changed;
      const auto c = static_cast<std::size_t>(empty - sizes.begin());
      std::size_t far = n;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (sizes[static_cast<std::size_t>(assign[i])] > 1 && own[i] > fd) {
          fd = own[i];
          far = i;
        }
      if (far == n || fd <= 0.0)
        throw SchemaError("features", "fewer distinct feature vectors than K");
      cent.row(static_cast<Eigen::Index>(c)) = f.row(static_cast<Eigen::Index>(far));
      reassign();
      changed = true;
    }
    throw SchemaError("features", "could not populate every cluster");
  };

  double inertia = reassign();
  fill_empty();
  for (int it = 0; it < 100; ++it) {
    cent.setZero();
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      cent.row(assign[i]) += f.row(static_cast<Eigen::Index>(i));
      ++sizes[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < k; ++c)
      cent.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(sizes[c]);
    const double prev = inertia;
    inertia = reassign();
    const bool refilled = fill_empty();
    if (!refilled && (inertia == 0.0 || std::abs(prev - inertia) <= 1e-6 * prev)) break;
  }

  // canonical relabel by first appearance
  std::vector<int> relabel(k, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (relabel[static_cast<std::size_t>(assign[i])] < 0)
      relabel[static_cast<std::size_t>(assign[i])] = next++;
  PartDecomposition out;
  out.K = K;
  out.assignments.resize(n);
  out.part_sizes.assign(k, 0);
  out.centroids.resize(static_cast<Eigen::Index>(k), d);
  for (std::size_t c = 0; c < k; ++c)
    out.centroids.row(relabel[c]) = cent.row(static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < n; ++i) {
    out.assignments[i] = relabel[static_cast<std::size_t>(assign[i])];
    ++out.part_sizes[static_cast<std::size_t>(out.assignments[i])];
  }
  return out;
}

/// Median distance from each point to its nearest neighbour (NaN for < 2 points).
inline double median_nn_distance(const Points& pts) {
  if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  KdTree tree(pts);
  std::vector<double> d(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d[i] = std::sqrt(tree.nearest(pts[i], i).dist2);
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size() / 2;
  return d.size() % 2 ? d[m] : 0.5 * (d[m - 1] + d[m]);
}

/// Softer priors get more neighbours; local density sets the radius.
inline PartTopology topology_hyperparams(const PartPrior& prior, const Points& part_points,
                                         const TopologyConfig& cfg, double global_median_nn) {
  if (part_points.empty()) throw SchemaError("part", "must be non-empty");
  if (part_points.size() == 1) return PartTopology{1, global_median_nn};
  const double s = std::clamp(cfg.k_ref / std::exp(prior.log_stiffness_mean), 0.5, 2.0);
  const auto knn = static_cast<std::size_t>(
      std::clamp(std::lround(cfg.base_knn * s), long{4}, long{12}));
  return PartTopology{knn, cfg.base_radius_scale * median_nn_distance(part_points)};
}

/// Part-aware spring graph: per-part symmetric kNN within a radius, a few
/// shortest boundary springs between adjacent parts, then minimum-length
/// bridges until the whole object is connected.
inline SpringGraph build_graph(const Points& positions, const PartDecomposition& parts,
                               const std::vector<PartTopology>& topo, int boundary_pairs) {
  const std::size_t n = positions.size();
  if (n < 2) throw SchemaError("positions", "need at least two points to build a graph");
  if (parts.assignments.size() != n)
    throw DimensionError("parts.assignments", "length must equal point count");
  if (topo.size() != static_cast<std::size_t>(parts.K))
    throw DimensionError("topology", "one entry per part required");

  SpringGraph g;
  g.point_count = n;
  g.part_of = parts.assignments;
  std::map<std::pair<std::size_t, std::size_t>, Edge> edges;
  auto add = [&](std::size_t a, std::size_t b, EdgeKind kind) {
    if (a > b) std::swap(a, b);
    const double len = (positions[b] - positions[a]).norm();
    if (len == 0.0) throw DegenerateEdgeError(a, b);
    Edge e{a, b, kind, kind == EdgeKind::intra ? g.part_of[a] : -1, len};
    edges.emplace(std::make_pair(a, b), e);
  };

  const auto members = parts.members();
  for (std::size_t p = 0; p < members.size(); ++p) {
    const auto& mem = members[p];
    if (mem.size() < 2) continue;
    Points local(mem.size());
    for (std::size_t a = 0; a < mem.size(); ++a) local[a] = positions[mem[a]];
    KdTree tree(local);
    const std::size_t k = std::min(topo[p].knn, mem.size() - 1);
    const double r2 = topo[p].radius * topo[p].radius;
    for (std::size_t a = 0; a < mem.size(); ++a)
      for (const auto& nb : tree.knn(local[a], k, a))
        if (nb.dist2 <= r2) add(mem[a], mem[nb.index], EdgeKind::intra);
  }

  if (boundary_pairs > 0) {
    for (std::size_t pa = 0; pa < members.size(); ++pa)
      for (std::size_t pb = pa + 1; pb < members.size(); ++pb) {
        std::vector<std::tuple<double, std::size_t, std::size_t>> cross;
        cross.reserve(members[pa].size() * members[pb].size());
        for (auto i : members[pa])
          for (auto j : members[pb])
            cross.emplace_back((positions[i] - positions[j]).squaredNorm(), std::min(i, j),
                               std::max(i, j));
        if (cross.empty()) continue;
        const auto take = std::min(cross.size(), static_cast<std::size_t>(boundary_pairs));
        std::partial_sort(cross.begin(), cross.begin() + static_cast<std::ptrdiff_t>(take),
                          cross.end());
        const double reach = 1.5 * std::max(topo[pa].radius, topo[pb].radius);
        if (std::sqrt(std::get<0>(cross.front())) > reach) continue;
        for (std::size_t t = 0; t < take; ++t)
          add(std::get<1>(cross[t]), std::get<2>(cross[t]), EdgeKind::boundary);
      }
  }

  // Boruvka-style bridging between connected components
  UnionFind uf(n);
  for (const auto& [key, e] : edges) uf.unite(e.i, e.j);
  while (uf.components() > 1) {
    std::vector<std::size_t> comp(n);
    for (std::size_t i = 0; i < n; ++i) comp[i] = uf.find(i);
    std::map<std::size_t, std::tuple<double, std::size_t, std::size_t>> best;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (comp[i] == comp[j]) continue;
        const auto cand = std::make_tuple((positions[i] - positions[j]).squaredNorm(), i, j);
        for (auto c : {comp[i], comp[j]}) {
          auto it = best.find(c);
          if (it == best.end() || cand < it->second) best[c] = cand;
        }
      }
    for (const auto& [c, t] : best) {
      const auto [d2, i, j] = t;
      add(i, j, g.part_of[i] == g.part_of[j] ? EdgeKind::intra : EdgeKind::boundary);
      uf.unite(i, j);
    }
  }

  g.edges.reserve(edges.size());
  for (auto& [key, e] : edges) g.edges.push_back(e);
  return g;
}

}  // namespace springtwin
