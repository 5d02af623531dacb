#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "support.hpp"

using namespace springtwin;

namespace {

Points random_cloud(std::uint64_t seed, std::size_t n, double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  Points p;
  for (std::size_t i = 0; i < n; ++i) p.emplace_back(u(rng), u(rng), u(rng));
  return p;
}

Eigen::MatrixXd blob_features(std::size_t per, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Eigen::MatrixXd f(static_cast<Eigen::Index>(2 * per), 3);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const double base = i < per ? 0.0 : 5.0;
    for (int c = 0; c < 3; ++c) f(static_cast<Eigen::Index>(i), c) = base + noise(rng);
  }
  return f;
}

}  // namespace

TEST(KdTree, KnnMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pts = random_cloud(seed, 60);
    KdTree tree(pts);
    const Vec3 q = random_cloud(seed + 100, 1)[0];
    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < pts.size(); ++i) brute.emplace_back((pts[i] - q).squaredNorm(), i);
    std::sort(brute.begin(), brute.end());
    const auto got = tree.knn(q, 7);
    ASSERT_EQ(got.size(), 7u);
    for (std::size_t a = 0; a < 7; ++a) {
      EXPECT_EQ(got[a].index, brute[a].second);
      EXPECT_DOUBLE_EQ(got[a].dist2, brute[a].first);
    }
    EXPECT_EQ(tree.nearest(q).index, brute[0].second);
  }
}

TEST(KdTree, ExcludeSkipsQueryPoint) {
  const Points pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)};
  KdTree tree(pts);
  EXPECT_EQ(tree.nearest(pts[0], 0).index, 1u);
  EXPECT_DOUBLE_EQ(tree.nearest(pts[0], 0).dist2, 1.0);
}

TEST(MedianNn, EvenAndOddCounts) {
  EXPECT_DOUBLE_EQ(median_nn_distance({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)}), 1.0);
  // nearest distances 1, 1, 2, 2 -> median 1.5
  EXPECT_DOUBLE_EQ(
      median_nn_distance({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0), Vec3(5, 0, 0)}), 1.5);
  EXPECT_TRUE(std::isnan(median_nn_distance({Vec3(0, 0, 0)})));
}

TEST(ClusterParts, SeparatesTwoBlobs) {
  const auto parts = cluster_parts(blob_features(20, 1), 2, 7);
  EXPECT_EQ(parts.K, 2);
  EXPECT_EQ(parts.part_sizes, (std::vector<std::size_t>{20, 20}));
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(parts.assignments[i], i < 20 ? 0 : 1);
}

TEST(ClusterParts, DeterministicForSeed) {
  const auto f = blob_features(15, 3);
  const auto a = cluster_parts(f, 4, 11);
  const auto b = cluster_parts(f, 4, 11);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_TRUE(a.centroids.isApprox(b.centroids));
}

TEST(ClusterParts, NoEmptyPartsEvenWithDuplicates) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(10, 2);
  f(9, 0) = 1.0;
  f(8, 1) = 1.0;
  const auto parts = cluster_parts(f, 3, 0);
  for (auto s : parts.part_sizes) EXPECT_GE(s, 1u);
  std::size_t total = 0;
  for (auto s : parts.part_sizes) total += s;
  EXPECT_EQ(total, 10u);
  f(8, 1) = 0.0;  // two distinct rows cannot fill three parts
  EXPECT_THROW(cluster_parts(f, 3, 0), SchemaError);
}

TEST(ClusterParts, RejectsBadK) {
  const Eigen::MatrixXd f = Eigen::MatrixXd::Ones(3, 2);
  EXPECT_THROW(cluster_parts(f, 0, 0), SchemaError);
  EXPECT_THROW(cluster_parts(f, 4, 0), SchemaError);
  Eigen::MatrixXd bad = f;
  bad(1, 1) = NAN;
  EXPECT_THROW(cluster_parts(bad, 2, 0), NonFiniteError);
}

TEST(TopologyHyperparams, SofterPriorGetsMoreNeighbours) {
  const Points pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
  TopologyConfig cfg;
  PartPrior soft, ref, stiff;
  soft.log_stiffness_mean = std::log(10.0);
  ref.log_stiffness_mean = std::log(cfg.k_ref);
  stiff.log_stiffness_mean = std::log(1e5);
  EXPECT_EQ(topology_hyperparams(soft, pts, cfg, 1.0).knn, 12u);
  EXPECT_EQ(topology_hyperparams(ref, pts, cfg, 1.0).knn, 6u);
  EXPECT_EQ(topology_hyperparams(stiff, pts, cfg, 1.0).knn, 4u);
  EXPECT_DOUBLE_EQ(topology_hyperparams(ref, pts, cfg, 1.0).radius, 2.5);
  const auto single = topology_hyperparams(ref, {Vec3(0, 0, 0)}, cfg, 0.3);
  EXPECT_EQ(single.knn, 1u);
  EXPECT_DOUBLE_EQ(single.radius, 0.3);
}

TEST(TopologyHyperparamsProperty, KnnNonIncreasingInPriorStiffness) {
  const Points pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
  TopologyConfig cfg;
  std::size_t prev = 100;
  for (double lk = 0.0; lk <= 13.0; lk += 0.05) {
    PartPrior p;
    p.log_stiffness_mean = lk;
    const auto knn = topology_hyperparams(p, pts, cfg, 1.0).knn;
    EXPECT_LE(knn, prev) << "log k " << lk;
    EXPECT_GE(knn, 4u);
    EXPECT_LE(knn, 12u);
    prev = knn;
  }
}

TEST(BuildGraph, BridgesDistantClusters) {
  const Points p{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0),
                 Vec3(100, 0, 0), Vec3(101, 0, 0), Vec3(102, 0, 0)};
  const auto g = build_graph(p, PartDecomposition::single(6), {PartTopology{2, 1.5}}, 3);
  EXPECT_TRUE(g.connected());
  bool bridge = false;
  for (const auto& e : g.edges)
    if (e.i == 2 && e.j == 3) {
      bridge = true;
      EXPECT_EQ(e.kind, EdgeKind::intra);
      EXPECT_DOUBLE_EQ(e.rest_length, 98.0);
    }
  EXPECT_TRUE(bridge);
  EXPECT_EQ(g.edges.size(), 5u);
}

TEST(BuildGraph, BoundarySpringsJoinParts) {
  Points p;
  PartDecomposition parts;
  parts.K = 2;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 5; ++i) {
      p.emplace_back(i * 0.1 + k * 0.6, 0, 0);
      parts.assignments.push_back(k);
    }
  parts.part_sizes = {5, 5};
  const auto g = build_graph(p, parts, {PartTopology{2, 0.25}, PartTopology{2, 0.25}}, 3);
  std::size_t boundary = 0;
  for (const auto& e : g.edges)
    if (e.kind == EdgeKind::boundary) {
      ++boundary;
      EXPECT_NE(g.part_of[e.i], g.part_of[e.j]);
      EXPECT_EQ(e.part, -1);
    }
  EXPECT_EQ(boundary, 3u);
  EXPECT_NO_THROW(g.validate());
}

TEST(BuildGraph, CoincidentPointsThrow) {
  const Points p{Vec3(0, 0, 0), Vec3(0, 0, 0), Vec3(1, 0, 0)};
  EXPECT_THROW(build_graph(p, PartDecomposition::single(3), {PartTopology{2, 5.0}}, 3),
               DegenerateEdgeError);
}

TEST(BuildGraphProperty, ValidConnectedCanonical) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const std::size_t n = 30 + seed * 7;
    const auto pts = random_cloud(seed, n);
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) feats.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    const int K = 1 + static_cast<int>(seed % 4);
    const auto parts = K == 1 ? PartDecomposition::single(n) : cluster_parts(feats, K, seed);
    std::vector<PartTopology> topo(static_cast<std::size_t>(K), PartTopology{4, 0.4});
    const auto g = build_graph(pts, parts, topo, 3);
    ASSERT_NO_THROW(g.validate()) << "seed " << seed;
    EXPECT_TRUE(g.connected());
    EXPECT_TRUE(std::is_sorted(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
      return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    }));
    for (const auto& e : g.edges) EXPECT_NEAR(e.rest_length, (pts[e.j] - pts[e.i]).norm(), 1e-15);
  }
}

TEST(BuildGraphProperty, PermutationChangesOnlyLabels) {
  // Relabelling points must give the same multiset of rest lengths.
  const auto pts = random_cloud(3, 40);
  std::vector<std::size_t> perm(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 17) % perm.size();
  Points shuffled(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) shuffled[perm[i]] = pts[i];
  const std::vector<PartTopology> topo{PartTopology{5, 10.0}};
  auto lengths = [&](const Points& p) {
    std::multiset<double> out;
    for (const auto& e : build_graph(p, PartDecomposition::single(p.size()), topo, 3).edges)
      out.insert(e.rest_length);
    return out;
  };
  EXPECT_EQ(lengths(pts), lengths(shuffled));
}

TEST(ClusterParts, OneDimensionalPairs) {
  Eigen::MatrixXd f(4, 1);
  f << 0.0, 0.1, 10.0, 10.1;
  const auto parts = cluster_parts(f, 2, 0);
  EXPECT_EQ(parts.assignments[0], parts.assignments[1]);
  EXPECT_EQ(parts.assignments[2], parts.assignments[3]);
  EXPECT_NE(parts.assignments[0], parts.assignments[2]);
}

TEST(TopologyHyperparams, ChainRadiusScalesWithSpacing) {
  const double h = 0.037;
  Points chain;
  for (int i = 0; i < 9; ++i) chain.emplace_back(i * h, 0, 0);
  PartPrior ref;
  ref.log_stiffness_mean = std::log(TopologyConfig{}.k_ref);
  const auto t = topology_hyperparams(ref, chain, TopologyConfig{}, h);
  EXPECT_NEAR(t.radius, 2.5 * h, 1e-15);
}

TEST(BuildGraph, FourPointTwoPartExample) {
  const Points p{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(10, 0, 0), Vec3(11, 0, 0)};
  PartDecomposition parts;
  parts.K = 2;
  parts.assignments = {0, 0, 1, 1};
  parts.part_sizes = {2, 2};
  const auto g = build_graph(p, parts, {PartTopology{1, 2.0}, PartTopology{1, 2.0}}, 1);
  ASSERT_EQ(g.edges.size(), 3u);
  EXPECT_EQ(g.edges[0].i, 0u);
  EXPECT_EQ(g.edges[0].j, 1u);
  EXPECT_EQ(g.edges[0].kind, EdgeKind::intra);
  EXPECT_EQ(g.edges[1].i, 1u);
  EXPECT_EQ(g.edges[1].j, 2u);
  EXPECT_EQ(g.edges[1].kind, EdgeKind::boundary);
  EXPECT_DOUBLE_EQ(g.edges[1].rest_length, 9.0);
  EXPECT_EQ(g.edges[2].i, 2u);
  EXPECT_EQ(g.edges[2].j, 3u);
  EXPECT_EQ(g.edges[2].kind, EdgeKind::intra);
}
