#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "support.hpp"

using namespace springtwin;

namespace {

Mlp tiny_mlp() {
  Mlp m;
  DenseLayer a{Eigen::MatrixXd(2, 2), Eigen::Vector2d(0.1, -0.2)};
  a.weight << 0.5, -1.0, 2.0, 0.25;
  DenseLayer b{Eigen::MatrixXd(1, 2), Eigen::VectorXd::Constant(1, 0.3)};
  b.weight << 1.5, -0.5;
  m.layers = {a, b};
  return m;
}

}  // namespace

TEST(EdgeGeometry, TwoPointExample) {
  SpringGraph g;
  g.point_count = 2;
  g.part_of = {0, 0};
  g.edges = {Edge{0, 1, EdgeKind::intra, 0, 2.0}};
  const auto f = edge_geometry_features(g, {Vec3(0, 0, 0), Vec3(0, 2, 0)});
  ASSERT_EQ(f.size(), 1u);
  const EdgeGeometryFeature want{1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  for (std::size_t d = 0; d < kGeoDim; ++d) EXPECT_DOUBLE_EQ(f[0][d], want[d]) << "dim " << d;
}

TEST(EdgeGeometry, BoundaryFlagAndStretch) {
  SpringGraph g;
  g.point_count = 3;
  g.part_of = {0, 0, 1};
  g.edges = {Edge{0, 1, EdgeKind::intra, 0, 1.0}, Edge{1, 2, EdgeKind::boundary, -1, 1.0}};
  const auto f = edge_geometry_features(g, {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)});
  EXPECT_EQ(f[0][9], 1.0);
  EXPECT_EQ(f[1][9], 0.0);
  EXPECT_DOUBLE_EQ(f[1][1], 2.0);   // current / rest length
  EXPECT_DOUBLE_EQ(f[0][6], 1.0);   // point 1 has the max degree
  EXPECT_DOUBLE_EQ(f[0][5], 0.5);
  EXPECT_THROW(edge_geometry_feature(g, {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)}, 2),
               SchemaError);
}

TEST(EdgeGeometry, RigidMotionLeavesScalarFeaturesUnchanged) {
  auto r = test::random_system(9, 30, 2, false);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(1.1, Vec3(0.3, -1, 0.2).normalized()).toRotationMatrix();
  Points moved;
  for (const auto& p : r.state.positions) moved.push_back(R * p + Vec3(5, -2, 1));
  const auto a = edge_geometry_features(r.graph, r.state.positions);
  const auto b = edge_geometry_features(r.graph, moved);
  for (std::size_t e = 0; e < a.size(); ++e) {
    EXPECT_NEAR(a[e][1], b[e][1], 1e-12);
    for (std::size_t d = 5; d < kGeoDim; ++d) EXPECT_NEAR(a[e][d], b[e][d], 1e-12);
    const Vec3 ua(a[e][2], a[e][3], a[e][4]), ub(b[e][2], b[e][3], b[e][4]);
    EXPECT_LT((R * ua - ub).norm(), 1e-12);
  }
}

TEST(Mlp, ForwardByHand) {
  const auto m = tiny_mlp();
  const Eigen::Vector2d x(1.0, 2.0);
  // h = tanh([0.5 - 2 + 0.1, 2 + 0.5 - 0.2]) = tanh([-1.4, 2.3])
  const double want = 1.5 * std::tanh(-1.4) - 0.5 * std::tanh(2.3) + 0.3;
  EXPECT_NEAR(m.forward(x)[0], want, 1e-15);
  EXPECT_NEAR(decoder_forward(m, x)[0], want, 1e-15);
  EXPECT_THROW(m.forward(Eigen::Vector3d(1, 2, 3)), DimensionError);
}

TEST(Mlp, BackwardMatchesFiniteDifference) {
  const Mlp m = Mlp::create({5, 7, 3}, 4, 1.0);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, -1, 1);
  const Eigen::Vector3d w(0.7, -1.2, 0.4);
  auto loss = [&](const Mlp& net, const Eigen::VectorXd& in) { return w.dot(net.forward(in)); };
  Mlp::Cache cache;
  m.forward(x, &cache);
  Mlp grad = m.zeros_like();
  const Eigen::VectorXd dx = m.backward(cache, w, grad);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR(dx[i], (loss(m, xp) - loss(m, xm)) / (2 * h), 1e-8);
  }
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    for (Eigen::Index r = 0; r < m.layers[l].weight.rows(); ++r)
      for (Eigen::Index c = 0; c < m.layers[l].weight.cols(); ++c) {
        Mlp p = m, q = m;
        p.layers[l].weight(r, c) += h;
        q.layers[l].weight(r, c) -= h;
        EXPECT_NEAR(grad.layers[l].weight(r, c), (loss(p, x) - loss(q, x)) / (2 * h), 1e-8);
      }
}

TEST(Mlp, CreateIsSeededWithZeroBiases) {
  const auto a = Mlp::create({4, 8, 2}, 3), b = Mlp::create({4, 8, 2}, 3);
  EXPECT_TRUE(a.layers[0].weight.isApprox(b.layers[0].weight));
  EXPECT_TRUE(a.layers[1].bias.isZero());
  EXPECT_EQ(a.input_dim(), 4u);
  EXPECT_EQ(a.output_dim(), 2u);
}

TEST(Squash, LogSquashMidpointIsGeometricMean) {
  EXPECT_NEAR(log_squash(0.0, {10.0, 1000.0}), 100.0, 1e-10);
  EXPECT_NEAR(lin_squash(0.0, {0.2, 0.6}), 0.4, 1e-15);
}

TEST(SquashProperty, StaysInRangeAndMonotone) {
  const Interval k{1.0, 1e5}, d{0.9, 1.0};
  double prev_k = 0.0, prev_d = 0.0;
  for (double y = -40; y <= 40; y += 0.5) {
    const double a = log_squash(y, k), b = lin_squash(y, d);
    EXPECT_GE(a, k.lo * (1 - 1e-12));
    EXPECT_LE(a, k.hi * (1 + 1e-12));
    EXPECT_GE(b, d.lo);
    EXPECT_LE(b, d.hi);
    EXPECT_GE(a, prev_k);
    EXPECT_GE(b, prev_d);
    prev_k = a;
    prev_d = b;
  }
}

TEST(SquashProperty, GradientsMatchFiniteDifference) {
  const Interval k{3.0, 3e4}, e{0.0, 1.0};
  for (double y = -4; y <= 4; y += 0.37) {
    const double h = 1e-6;
    EXPECT_NEAR(log_squash_grad(y, k), (log_squash(y + h, k) - log_squash(y - h, k)) / (2 * h),
                1e-6 * log_squash(y, k));
    EXPECT_NEAR(lin_squash_grad(y, e), (lin_squash(y + h, e) - lin_squash(y - h, e)) / (2 * h), 1e-8);
  }
}

TEST(PredictEdgeStiffness, WithinRangeForRandomInputs) {
  const Mlp dec = Mlp::create({kMotionDim + 16 + kGeoDim, 64, 64, 1}, 1, 10.0);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 3);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd zv(kMotionDim), zm(16);
    for (auto& v : zv) v = n(rng);
    for (auto& v : zm) v = n(rng);
    EdgeGeometryFeature geo;
    for (auto& v : geo) v = n(rng);
    const double k = predict_edge_stiffness(zv, zm, geo, dec, {50.0, 5000.0});
    EXPECT_GE(k, 50.0 * (1 - 1e-12));
    EXPECT_LE(k, 5000.0 * (1 + 1e-12));
  }
}

TEST(PredictGlobals, RequiresFiveOutputs) {
  const Eigen::VectorXd zv = Eigen::VectorXd::Zero(kMotionDim), zg = Eigen::VectorXd::Zero(4);
  const ParamRanges r;
  const auto ok = predict_globals(zv, zg, Mlp::create({kMotionDim + 4, 8, 5}, 0), r);
  EXPECT_GE(ok.delta, r.delta.lo);
  EXPECT_LE(ok.delta, r.delta.hi);
  EXPECT_THROW(predict_globals(zv, zg, Mlp::create({kMotionDim + 4, 8, 4}, 0), r), DimensionError);
}

TEST(MotionDescriptor, CountsDurationAndRatio) {
  ControllerTrack c;
  Points track;
  for (int t = 0; t < 11; ++t) track.emplace_back(0.1 * t, 0, 0);
  c.positions = {track};
  std::vector<Points> tracked{track, track};
  const auto f = motion_descriptor(c, tracked, 0.1, 11);
  EXPECT_NEAR(f[12], 1.0, 1e-12);
  EXPECT_EQ(f[13], 1.0);
  EXPECT_EQ(f[14], 2.0);
  EXPECT_NEAR(f[15], 1.0, 1e-12);  // tracked points move with the controller
  EXPECT_NEAR(f[0], 1.0, 1e-12);   // mean speed, m/s
  EXPECT_THROW(motion_descriptor(c, tracked, 0.1, 1), SchemaError);
  EXPECT_THROW(motion_descriptor(c, tracked, 0.1, 12), DimensionError);
}

TEST(MotionStandardization, FitsZeroMeanUnitSpread) {
  std::vector<MotionFeature> raw(3);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t d = 0; d < kMotionDim; ++d) raw[s][d] = d == 4 ? 7.0 : static_cast<double>(s * d);
  const auto st = MotionStandardization::fit(raw);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kMotionDim), sq = Eigen::VectorXd::Zero(kMotionDim);
  for (const auto& r : raw) {
    const auto z = st.apply(r);
    mean += z / 3.0;
    sq += z.cwiseProduct(z) / 3.0;
  }
  EXPECT_LT(mean.norm(), 1e-12);
  EXPECT_EQ(st.std[4], 1.0);  // constant dimension keeps unit scale
  EXPECT_NEAR(sq[1], 1.0, 1e-12);
}

TEST(Model, DecoderShapes) {
  ModelConfig cfg;
  const auto m = Model::create(cfg, 4, 10);
  EXPECT_EQ(m.edge_decoder.input_dim(), 16u + 16u + 10u);
  ASSERT_EQ(m.edge_decoder.layers.size(), 3u);
  EXPECT_EQ(m.edge_decoder.layers[0].weight.rows(), 64);
  EXPECT_EQ(m.edge_decoder.layers[1].weight.rows(), 64);
  EXPECT_EQ(m.edge_decoder.output_dim(), 1u);
  EXPECT_EQ(m.global_decoder.input_dim(), 32u);
  ASSERT_EQ(m.global_decoder.layers.size(), 2u);
  EXPECT_EQ(m.global_decoder.layers[0].weight.rows(), 64);
  EXPECT_EQ(m.global_decoder.output_dim(), 5u);
  EXPECT_EQ(m.codebook.classes(), 10u);
  EXPECT_NO_THROW(m.validate());
}

TEST(Model, FlattenRoundTripAndAblation) {
  ModelConfig cfg;
  auto m = Model::create(cfg, 4, 10);
  const auto v = m.flatten();
  auto z = m.zeros_like();
  z.unflatten(v);
  EXPECT_TRUE(z.flatten().isApprox(v));
  EXPECT_THROW(z.unflatten(v.head(v.size() - 1)), DimensionError);
  cfg.disable_codebook = true;
  const auto frozen = Model::create(cfg, 4, 10);
  EXPECT_EQ(frozen.flatten().size(), v.size() - 10 * 16);
  EXPECT_TRUE(frozen.codebook.entries.isApprox(Codebook::identity(10, 16).entries));
}

TEST(Predict, ParametersRespectRangesOnPresets) {
  for (auto preset : {Preset::rope_chain, Preset::cloth_grid, Preset::two_material_block}) {
    auto spec = SyntheticSpec::defaults(preset);
    spec.frames = 6;
    if (preset == Preset::cloth_grid) spec.resolution = 8;
    const auto gen = gen_synthetic(spec);
    const auto model = Model::create(ModelConfig{}, gen.scene.feature_dim(), gen.scene.material_table.size());
    const auto twin = prepare_twin(gen.scene, model);
    const auto p = predict(model, twin).params;
    ASSERT_EQ(p.edge_stiffness.size(), twin.graph().edges.size());
    for (std::size_t e = 0; e < p.edge_stiffness.size(); ++e) {
      EXPECT_GE(p.edge_stiffness[e], twin.edge_ranges[e].lo * (1 - 1e-12));
      EXPECT_LE(p.edge_stiffness[e], twin.edge_ranges[e].hi * (1 + 1e-12));
      EXPECT_GE(p.edge_stiffness[e], model.ranges.stiffness.lo);
      EXPECT_LE(p.edge_stiffness[e], model.ranges.stiffness.hi);
    }
    EXPECT_NO_THROW(p.validate(twin.graph().edges.size()));
    EXPECT_TRUE(twin.ranges.delta.contains(p.delta));
    EXPECT_TRUE(twin.ranges.gamma.contains(p.gamma));
  }
}

TEST(Predict, FeatureDimensionMismatchIsReported) {
  const auto gen = gen_synthetic(test::small_rope());
  const auto model = Model::create(ModelConfig{}, gen.scene.feature_dim() + 1, 10);
  EXPECT_THROW(prepare_twin(gen.scene, model), DimensionError);
}

TEST(EdgeGeometry, VerticalDirection) {
  SpringGraph g;
  g.point_count = 2;
  g.part_of = {0, 0};
  g.edges = {Edge{0, 1, EdgeKind::intra, 0, 2.0}};
  const auto f = edge_geometry_features(g, {Vec3(0, 0, 0), Vec3(0, 0, 2)});
  EXPECT_EQ(f[0][2], 0.0);
  EXPECT_EQ(f[0][3], 0.0);
  EXPECT_EQ(f[0][4], 1.0);
}

TEST(MotionDescriptor, ConstantVelocityController) {
  // 1 m/s along x for 1 s sampled at 10 Hz
  ControllerTrack c;
  c.positions.resize(1);
  for (int t = 0; t <= 10; ++t) c.positions[0].emplace_back(0.1 * t, 0, 0);
  const auto f = motion_descriptor(c, c.positions, 0.1, 11);
  EXPECT_NEAR(f[0], 1.0, 1e-12);
  EXPECT_NEAR(f[2], 0.0, 1e-12);
  EXPECT_NEAR(f[3], 1.0, 1e-12);
  EXPECT_NEAR(f[12], 1.0, 1e-12);
  const auto slow = motion_descriptor(c, c.positions, 0.2, 11);
  EXPECT_NEAR(slow[0], 0.5 * f[0], 1e-12);
  EXPECT_NEAR(slow[1], 0.5 * f[1], 1e-12);
  EXPECT_NEAR(slow[6], 0.5 * f[6], 1e-12);
}

TEST(Mlp, OneHiddenUnitByHand) {
  Mlp m;
  m.layers = {DenseLayer{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Constant(1, -1.0)},
              DenseLayer{Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::VectorXd::Constant(1, 0.5)}};
  EXPECT_NEAR(m.forward(Eigen::VectorXd::Constant(1, 1.0))[0], 3.0 * std::tanh(1.0) + 0.5, 1e-15);
}

TEST(PredictGlobals, ZeroOutputsGiveRangeMidpoints) {
  const ParamRanges r;
  const auto g = squash_globals(Eigen::VectorXd::Zero(kGlobalOutputs), r);
  EXPECT_NEAR(g.gamma, std::sqrt(r.gamma.lo * r.gamma.hi), 1e-12);
  EXPECT_NEAR(g.delta, 0.5 * (r.delta.lo + r.delta.hi), 1e-15);
  EXPECT_NEAR(g.mu, 0.5 * (r.mu.lo + r.mu.hi), 1e-15);
  EXPECT_NEAR(g.epsilon, 0.5 * (r.epsilon.lo + r.epsilon.hi), 1e-15);
  EXPECT_NEAR(g.controller_stiffness,
              std::sqrt(r.controller_stiffness.lo * r.controller_stiffness.hi), 1e-9);
}
