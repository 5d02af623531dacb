#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "springtwin/springtwin.hpp"

namespace springtwin::test {

inline void expect_vec(const Vec3& got, const Vec3& want, double tol, const char* what = "") {
  for (int a = 0; a < 3; ++a)
    if (!(std::abs(got[a] - want[a]) <= tol))
      throw std::runtime_error(std::string(what) + ": component " + std::to_string(a) + " got " +
                               std::to_string(got[a]) + " want " + std::to_string(want[a]));
}

/// Random connected cloud with a kNN graph, random stiffnesses and
/// velocities. Optionally one controller attached to its 3 nearest points.
struct RandomSystem {
  MassState state;
  SpringGraph graph;
  PhysParams params;
  ControllerTrack controllers;
  SimConfig sim;
};

inline RandomSystem random_system(std::uint64_t seed, std::size_t n, std::size_t frames,
                                  bool with_controller) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Points p;
  for (std::size_t i = 0; i < n; ++i) p.emplace_back(0.3 * u(rng), 0.3 * u(rng), 1.0 + 0.3 * u(rng));
  RandomSystem r;
  r.state = MassState::at_rest(p, 1.0);
  for (auto& v : r.state.velocities) v = 0.3 * Vec3(u(rng), u(rng), u(rng));
  r.graph = build_graph(p, PartDecomposition::single(n), {PartTopology{4, 1e9}}, 3);
  for (std::size_t e = 0; e < r.graph.edges.size(); ++e)
    r.params.edge_stiffness.push_back(40.0 * std::exp(u(rng)));
  r.params.controller_stiffness = 150.0;
  r.params.gamma = 0.2 + 0.1 * u(rng);
  r.params.delta = 0.99;
  r.params.mu = 0.4;
  r.params.epsilon = 0.2;
  r.sim.contact_enabled = false;
  r.sim.substeps = 4;
  if (with_controller) {
    Points track;
    const Vec3 dir(u(rng), u(rng), u(rng));
    for (std::size_t t = 0; t < frames; ++t) track.push_back(p[0] + Vec3(0.05, 0, 0) + 0.01 * t * dir);
    r.controllers.positions = {track};
    r.graph.controller_edges = attach_controllers(r.state, std::vector<Vec3>{track[0]}, 3);
    r.graph.controller_count = 1;
  }
  return r;
}

inline double kinetic_energy(const Points& v, const std::vector<double>& m) {
  double e = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) e += 0.5 * m[i] * v[i].squaredNorm();
  return e;
}

inline double spring_energy(const Points& x, const SpringGraph& g, const PhysParams& p) {
  double e = 0.0;
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const auto& ed = g.edges[k];
    const double s = (x[ed.j] - x[ed.i]).norm() - ed.rest_length;
    e += 0.5 * p.edge_stiffness[k] * s * s;
  }
  return e;
}

/// Small rope scene for fast end-to-end tests.
inline SyntheticSpec small_rope(std::uint64_t seed = 0, const std::string& script = "lift") {
  auto spec = SyntheticSpec::defaults(Preset::rope_chain);
  spec.resolution = 16;
  spec.frames = 24;
  spec.substeps = 10;
  spec.seed = seed;
  spec.script = script;
  return spec;
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("springtwin-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace springtwin::test
