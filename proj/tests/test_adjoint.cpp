#include <gtest/gtest.h>

#include "support.hpp"

using namespace springtwin;

namespace {

struct Problem {
  test::RandomSystem sys;
  SimObservations obs;
  std::size_t frames = 10;
};

Problem make_problem(std::uint64_t seed, std::size_t frames = 10) {
  Problem p;
  p.frames = frames;
  p.sys = test::random_system(seed, 14, frames, true);
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> n(0.0, 0.02);
  const auto& x0 = p.sys.state.positions;
  for (std::size_t i = 1; i < x0.size(); i += 3) {
    p.obs.tracked_indices.push_back(i);
    Points tr;
    for (std::size_t t = 0; t < frames; ++t) tr.push_back(x0[i] + Vec3(0.01 * t + n(rng), n(rng), n(rng)));
    p.obs.tracked_targets.push_back(tr);
  }
  for (std::size_t t = 0; t < frames; ++t) {
    Points c;
    for (const auto& x : x0) c.push_back(x + Vec3(n(rng), n(rng), 0.005 * t));
    p.obs.target_clouds.push_back(c);
  }
  return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

void expect_close(const ParamGradients& got, const ParamGradients& fd, double tol) {
  ASSERT_EQ(got.edge_stiffness.size(), fd.edge_stiffness.size());
  double scale = 0.0;
  for (double g : fd.edge_stiffness) scale = std::max(scale, std::abs(g));
  for (std::size_t e = 0; e < fd.edge_stiffness.size(); ++e)
    EXPECT_NEAR(got.edge_stiffness[e], fd.edge_stiffness[e], tol * scale) << "edge " << e;
  EXPECT_LT(rel(got.controller_stiffness, fd.controller_stiffness), tol);
  EXPECT_LT(rel(got.gamma, fd.gamma), tol);
  EXPECT_LT(rel(got.delta, fd.delta), tol);
}

}  // namespace

TEST(CentralDifference, LinearAndLogSpace) {
  auto sq = [](double x) { return x * x; };
  EXPECT_NEAR(central_difference(sq, 3.0, 1e-5, false), 6.0, 1e-8);
  EXPECT_NEAR(central_difference(sq, 3.0, 1e-5, true), 6.0, 1e-8);
  EXPECT_THROW(central_difference(sq, 3.0, 0.0, false), SchemaError);
}

TEST(RolloutGrad, LossMatchesForwardEvaluation) {
  auto p = make_problem(1);
  const LossWeights w{1.0, 0.5, 0.0};
  const auto rg = rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames,
                               p.sys.sim, p.obs, w);
  const auto fwd = evaluate_rollout_loss(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                         p.frames, p.sys.sim, p.obs, w);
  EXPECT_EQ(rg.loss.tracking, fwd.tracking);
  EXPECT_EQ(rg.loss.chamfer, fwd.chamfer);
  EXPECT_DOUBLE_EQ(rg.objective, fwd.tracking + 0.5 * fwd.chamfer);
}

TEST(RolloutGrad, TrackingOnlyMatchesFiniteDifference) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto p = make_problem(seed);
    const LossWeights w{1.0, 0.0, 0.0};
    const auto rg = rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                 p.frames, p.sys.sim, p.obs, w);
    const auto fd = finite_diff_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                     p.frames, p.sys.sim, p.obs, w, 1e-5);
    SCOPED_TRACE("seed " + std::to_string(seed));
    expect_close(rg.grad, fd, 1e-5);
  }
}

TEST(RolloutGrad, WithChamferMatchesFiniteDifference) {
  auto p = make_problem(5);
  const LossWeights w{1.0, 1.0, 0.0};
  const auto rg = rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames,
                               p.sys.sim, p.obs, w);
  const auto fd = finite_diff_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                   p.frames, p.sys.sim, p.obs, w, 1e-6);
  expect_close(rg.grad, fd, 1e-4);
}

TEST(RolloutGrad, ContactBranchesMatchFiniteDifference) {
  // A falling cloud that hits the floor partway through.
  auto p = make_problem(7, 16);
  for (auto& x : p.sys.state.positions) x.z() -= 0.9;
  for (auto& x : p.sys.controllers.positions[0]) x.z() -= 0.9;
  for (auto& tr : p.obs.tracked_targets)
    for (auto& x : tr) x.z() = std::max(0.0, x.z() - 0.95);
  p.sys.sim.contact_enabled = true;
  p.sys.params.mu = 0.3;
  p.sys.params.epsilon = 0.4;
  const LossWeights w{1.0, 0.0, 0.0};
  const auto rg = rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames,
                               p.sys.sim, p.obs, w);
  const auto traj = rollout(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames,
                            p.sys.sim).trajectory;
  double lowest = 1e9;
  for (const auto& f : traj)
    for (const auto& x : f) lowest = std::min(lowest, x.z());
  ASSERT_LT(lowest, 1e-9) << "scenario never touches the ground";
  const auto fd = finite_diff_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                   p.frames, p.sys.sim, p.obs, w, 1e-7);
  expect_close(rg.grad, fd, 1e-3);
  ASSERT_GT(std::abs(fd.mu), 1e-8);
  ASSERT_GT(std::abs(fd.epsilon), 1e-8);
  EXPECT_LT(rel(rg.grad.mu, fd.mu), 1e-3);
  EXPECT_LT(rel(rg.grad.epsilon, fd.epsilon), 1e-3);
}

TEST(RolloutGrad, VanishesWhenObservationsAreTheRollout) {
  auto p = make_problem(3);
  const auto traj = rollout(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames,
                            p.sys.sim).trajectory;
  for (std::size_t k = 0; k < p.obs.tracked_indices.size(); ++k)
    for (std::size_t t = 0; t < p.frames; ++t) p.obs.tracked_targets[k][t] = traj[t][p.obs.tracked_indices[k]];
  p.obs.target_clouds = traj;
  const auto rg = rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames,
                               p.sys.sim, p.obs, LossWeights{});
  EXPECT_EQ(rg.objective, 0.0);
  for (double g : rg.grad.edge_stiffness) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(rg.grad.gamma, 0.0);
}

TEST(RolloutGrad, RejectsShortControllerTrack) {
  auto p = make_problem(2);
  EXPECT_THROW(rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers, p.frames + 1,
                            p.sys.sim, p.obs, LossWeights{}),
               DimensionError);
}

TEST(CentralDifference, QuadraticExample) {
  EXPECT_NEAR(central_difference([](double k) { return (k - 3) * (k - 3); }, 5.0, 1e-4, false), 4.0,
              1e-9);
}

TEST(RolloutGrad, TwoPointChainAtFrameTwo) {
  SpringGraph g;
  g.point_count = 2;
  g.part_of = {0, 0};
  g.edges = {Edge{0, 1, EdgeKind::intra, 0, 1.0}};
  auto state = MassState::at_rest({Vec3(0, 0, 1), Vec3(1.2, 0, 1)}, 2.0);
  PhysParams params;
  params.edge_stiffness = {50.0};
  params.gamma = 0.5;
  params.delta = 0.99;
  SimConfig sim;
  sim.contact_enabled = false;
  SimObservations obs;
  obs.tracked_indices = {1};
  obs.tracked_targets = {{Vec3(1.2, 0, 1), Vec3(1.1, 0, 0.99), Vec3(1.0, 0, 0.98)}};
  const LossWeights w{1.0, 0.0, 0.0};
  const auto rg = rollout_grad(state, g, params, ControllerTrack{}, 3, sim, obs, w);
  const auto fd = finite_diff_grad(state, g, params, ControllerTrack{}, 3, sim, obs, w, 1e-6);
  EXPECT_LT(rel(rg.grad.edge_stiffness[0], fd.edge_stiffness[0]), 1e-4);
  EXPECT_LT(rel(rg.grad.gamma, fd.gamma), 1e-4);
  EXPECT_LT(rel(rg.grad.delta, fd.delta), 1e-4);
}

TEST(RolloutGradProperty, RandomScenesMatchFiniteDifference) {
  // 20 scenes, at most 30 points and 20 frames, contact off
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const std::size_t frames = 8 + seed % 13;
    auto p = make_problem(seed, frames);
    const LossWeights w{1.0, 1.0, 0.0};
    const auto rg = rollout_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                 p.frames, p.sys.sim, p.obs, w);
    const auto fd = finite_diff_grad(p.sys.state, p.sys.graph, p.sys.params, p.sys.controllers,
                                     p.frames, p.sys.sim, p.obs, w, 1e-6);
    SCOPED_TRACE("seed " + std::to_string(seed));
    for (std::size_t e = 0; e < fd.edge_stiffness.size(); ++e)
      if (std::abs(fd.edge_stiffness[e]) > 1e-8) {
        EXPECT_LT(rel(rg.grad.edge_stiffness[e], fd.edge_stiffness[e]), 1e-4) << "edge " << e;
      }
    EXPECT_LT(rel(rg.grad.gamma, fd.gamma), 1e-4);
    EXPECT_LT(rel(rg.grad.delta, fd.delta), 1e-4);
    EXPECT_LT(rel(rg.grad.controller_stiffness, fd.controller_stiffness), 1e-4);
  }
}
