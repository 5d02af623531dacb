#include <fnmatch.h>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "springtwin/server.hpp"
#include "springtwin/springtwin.hpp"

namespace fs = std::filesystem;
using namespace springtwin;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kValidation = 2, kInstability = 3, kTraining = 4 };

struct Options {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int epochs = 300;
  double lr = 1e-3;
  LossWeights weights;
  std::optional<double> dt;
  std::optional<int> substeps;
  bool disable_codebook = false, disable_prior = false, disable_parts = false;
  std::optional<std::size_t> frames;
  std::string out;
  std::string truth_out;
  std::string summary_dir;
  std::string log_out;
  bool json_stdout = false;
  unsigned short port = 8080;
  std::string host = "127.0.0.1";
  std::string fixtures = "fixtures";
  std::vector<std::string> inputs;
};

void apply_sim_overrides(Scene& s, const Options& o) {
  if (o.dt) s.sim.dt = *o.dt;
  if (o.substeps) s.sim.substeps = *o.substeps;
  s.sim.validate();
}

void require_file(const std::string& p) {
  if (!fs::is_regular_file(p)) throw SchemaError(p, "no such file");
}

void ensure_parent(const std::string& p) {
  const auto dir = fs::path(p).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
}

int cmd_gen(const Options& o) {
  if (o.inputs.size() != 1) throw SchemaError("gen", "expects one spec file");
  require_file(o.inputs[0]);
  if (o.out.empty()) throw SchemaError("--out", "required");
  SyntheticSpec spec = spec_from_json(io::read_file(o.inputs[0]));
  if (o.seed_given) spec.seed = o.seed;
  if (o.frames) spec.frames = *o.frames;
  if (o.substeps) spec.substeps = *o.substeps;
  if (o.dt) spec.frame_rate = 1.0 / *o.dt;
  spec.validate();
  const auto gen = gen_synthetic(spec);
  const std::string truth = o.truth_out.empty() ? fs::path(o.out).replace_extension(".truth.json").string() : o.truth_out;
  ensure_parent(o.out);
  ensure_parent(truth);
  save_scene(gen.scene, o.out);
  io::write_file(truth, truth_to_json(gen.truth));
  std::cout << "scene " << o.out << "\ntruth " << truth << "\npoints " << gen.scene.point_count()
            << " frames " << gen.scene.frames << " seed " << spec.seed << "\n";
  return kOk;
}

int cmd_fit(const Options& o) {
  if (o.inputs.empty()) throw SchemaError("fit", "expects at least one scene file");
  if (o.out.empty()) throw SchemaError("--out", "required");
  std::vector<Scene> scenes;
  for (const auto& p : o.inputs) {
    require_file(p);
    scenes.push_back(load_scene(p));
    apply_sim_overrides(scenes.back(), o);
  }
  ModelConfig mc;
  mc.seed = o.seed;
  mc.disable_codebook = o.disable_codebook;
  mc.disable_parts = o.disable_parts;
  const auto& first = scenes.front();
  Model model = Model::create(mc, first.feature_dim(), first.material_table.size());
  std::vector<Twin> twins;
  for (const auto& s : scenes) twins.push_back(prepare_twin(s, model));

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  tc.weights = o.weights;
  if (o.disable_prior) tc.weights.prior = 0.0;
  tc.threads = threads_from_env();
  const json header = {{"seed", o.seed},
                       {"epochs", tc.epochs},
                       {"lr", tc.lr},
                       {"lambda_trk", tc.weights.trk},
                       {"lambda_cham", tc.weights.cham},
                       {"lambda_prior", tc.weights.prior},
                       {"disable_codebook", o.disable_codebook},
                       {"disable_prior", o.disable_prior},
                       {"disable_parts", o.disable_parts},
                       {"scenes", o.inputs}};
  std::cout << "config " << header.dump() << "\n";
  json history = json::array();
  const auto res = train(model, twins, tc, [&](const EpochRecord& r) {
    history.push_back({{"epoch", r.epoch},
                       {"total", r.total},
                       {"tracking", r.loss.tracking},
                       {"chamfer", r.loss.chamfer},
                       {"prior", r.loss.prior},
                       {"grad_norm", r.grad_norm},
                       {"skipped", r.skipped},
                       {"wall_seconds", r.wall_seconds}});
    if (r.epoch % 25 == 0)
      std::printf("epoch %4d total %.6e trk %.6e cham %.6e prior %.6e skipped %zu\n", r.epoch, r.total,
                  r.loss.tracking, r.loss.chamfer, r.loss.prior, r.skipped);
  });
  ensure_parent(o.out);
  save_checkpoint(res.model, o.out);
  const std::string log = o.log_out.empty() ? fs::path(o.out).replace_extension(".log.jsonl").string() : o.log_out;
  {
    std::ofstream f(log);
    if (!f) throw SchemaError(log, "cannot open for writing");
    f << json{{"config", header}}.dump() << "\n";
    for (const auto& h : history) f << h.dump() << "\n";
    f << json{{"early_stopped", res.early_stopped}}.dump() << "\n";
  }

  const fs::path sdir = o.summary_dir.empty() ? fs::path(o.out).parent_path() : fs::path(o.summary_dir);
  if (!sdir.empty()) fs::create_directories(sdir);
  const std::string stem = fs::path(o.out).stem().string();
  for (const auto& t : twins) {
    const auto sum = summarize(t, predict(res.model, t).params);
    io::write_file(sdir / (stem + "." + t.id + ".summary.json"), summary_to_json(sum));
  }
  if (!history.empty()) {
    const auto& last = history.back();
    std::printf("final epoch %d total %.6e trk %.6e cham %.6e prior %.6e (initial total %.6e)%s\n",
                last["epoch"].get<int>(), last["total"].get<double>(), last["tracking"].get<double>(),
                last["chamfer"].get<double>(), last["prior"].get<double>(),
                history.front()["total"].get<double>(), res.early_stopped ? " early stop" : "");
  }
  std::cout << "checkpoint " << o.out << "\nlog " << log << "\n";
  return kOk;
}

/// Controller track extended by holding the last frame when more frames are asked for.
ControllerTrack extend_track(ControllerTrack track, std::size_t frames) {
  for (auto& c : track.positions)
    while (c.size() < frames) c.push_back(c.back());
  return track;
}

int cmd_rollout(const Options& o) {
  if (o.inputs.size() != 2) throw SchemaError("rollout", "expects <scene> <checkpoint>");
  for (const auto& p : o.inputs) require_file(p);
  if (o.out.empty()) throw SchemaError("--out", "required");
  Scene scene = load_scene(o.inputs[0]);
  apply_sim_overrides(scene, o);
  const Model model = load_checkpoint(o.inputs[1]);
  const std::size_t frames = o.frames.value_or(scene.frames);
  if (frames < 1) throw SchemaError("--frames", "must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const Twin twin = prepare_twin(scene, model);
  const auto params = predict(model, twin).params;
  const double infer = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto traj = rollout(twin.initial, twin.graph(), params, extend_track(twin.controllers, frames), frames,
                            twin.sim)
                        .trajectory;
  ensure_parent(o.out);
  io::write_file(o.out, trajectory_to_json(scene.id, traj));
  std::printf("frames %zu (train window %zu)\ninference_seconds %.6f\ntrajectory %s\n", frames,
              scene.train_frames, infer, o.out.c_str());
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.inputs.size() != 2) throw SchemaError("eval", "expects <scene> <trajectory>");
  for (const auto& p : o.inputs) require_file(p);
  const Scene scene = load_scene(o.inputs[0]);
  const auto rep = evaluate_trajectory(scene, trajectory_from_json(io::read_file(o.inputs[1])));
  const json j = report_to_json(rep);
  if (!o.out.empty()) io::write_file(o.out, j);
  if (o.json_stdout) {
    std::cout << j.dump() << "\n";
    return kOk;
  }
  std::printf("%-14s %6s %6s %12s %12s\n", "split", "first", "frames", "chamfer_m", "track_m");
  for (const auto* s : {&rep.resimulation, &rep.future})
    std::printf("%-14s %6zu %6zu %12.6e %12.6e\n", s->name.c_str(), s->first_frame, s->frame_count, s->chamfer,
                s->track);
  return kOk;
}

std::vector<std::string> expand(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& pat : patterns) {
    if (pat.find_first_of("*?[") == std::string::npos) {
      if (fs::is_directory(pat)) {
        for (const auto& e : fs::directory_iterator(pat))
          if (e.path().string().ends_with(".summary.json")) out.push_back(e.path().string());
      } else {
        out.push_back(pat);
      }
      continue;
    }
    const fs::path p(pat);
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    const std::string name = p.filename().string();
    if (!fs::is_directory(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && fnmatch(name.c_str(), e.path().filename().c_str(), 0) == 0)
        out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_consistency(const Options& o) {
  const auto files = expand(o.inputs);
  std::vector<ParameterSummary> fits;
  for (const auto& f : files) {
    require_file(f);
    fits.push_back(summary_from_json(io::read_file(f)));
  }
  const auto rep = consistency_report(fits);
  for (const auto& c : rep.skipped) std::cerr << "warning: category '" << c << "' has one scene; skipped\n";
  if (rep.categories.empty()) throw SchemaError("summaries", "no category has two or more scenes");
  const json j = consistency_to_json(rep);
  if (!o.out.empty()) io::write_file(o.out, j);
  if (o.json_stdout) {
    std::cout << j.dump() << "\n";
    return kOk;
  }
  std::printf("%-12s %6s %-22s %12s %12s %10s\n", "category", "scenes", "parameter", "mean", "std", "cv");
  for (const auto& c : rep.categories)
    for (const auto& p : c.parameters)
      std::printf("%-12s %6zu %-22s %12.5g %12.5g %10.4g\n", c.category.c_str(), c.scenes,
                  (p.parameter + (p.log_space ? " (log)" : "")).c_str(), p.mean, p.std, p.cv);
  return kOk;
}

int cmd_serve(const Options& o) {
  if (!fs::is_directory(o.fixtures)) throw SchemaError("--fixtures", "not a directory: " + o.fixtures);
  net::io_context ioc(1);
  Server server(ioc, FixtureCatalog(o.fixtures), o.port, o.host);
  server.start();
  net::signal_set signals(ioc, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int) {
    server.stop();
    ioc.stop();
  });
  std::cout << "listening on ws://" << o.host << ":" << server.port() << " (fixtures: " << o.fixtures
            << ", GET /fixtures)" << std::endl;
  ioc.run();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spring-mass digital twins: generate, fit, roll out, evaluate, serve."};
  app.require_subcommand(1);
  Options o;

  auto seed = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { o.seed = s, o.seed_given = true; }, "Random seed (default 0)");
  };
  auto sim = [&](CLI::App* c) {
    c->add_option("--dt", o.dt, "Frame time step override (s)")->check(CLI::PositiveNumber);
    c->add_option("--substeps", o.substeps, "Substeps per frame override")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic scene and its ground-truth sidecar");
  gen->add_option("spec", o.inputs, "Generation spec (JSON)")->required();
  gen->add_option("--out", o.out, "Scene output path")->required();
  gen->add_option("--truth", o.truth_out, "Sidecar output path (default: <out> with its extension replaced by .truth.json)");
  gen->add_option("--frames", o.frames, "Frame count override");
  seed(gen);
  sim(gen);

  auto* fit = app.add_subcommand("fit", "Train a checkpoint on one or more scenes");
  fit->add_option("scenes", o.inputs, "Scene files")->required();
  fit->add_option("--out", o.out, "Checkpoint output path")->required();
  fit->add_option("--epochs", o.epochs, "Epochs (default 300)")->check(CLI::NonNegativeNumber);
  fit->add_option("--lr", o.lr, "Adam learning rate (default 1e-3)")->check(CLI::PositiveNumber);
  fit->add_option("--lambda-trk", o.weights.trk, "Tracking loss weight")->check(CLI::NonNegativeNumber);
  fit->add_option("--lambda-cham", o.weights.cham, "Chamfer loss weight")->check(CLI::NonNegativeNumber);
  fit->add_option("--lambda-prior", o.weights.prior, "Prior loss weight")->check(CLI::NonNegativeNumber);
  fit->add_flag("--disable-codebook", o.disable_codebook, "Fixed one-hot material embedding");
  fit->add_flag("--disable-prior", o.disable_prior, "Set the prior loss weight to 0");
  fit->add_flag("--disable-parts", o.disable_parts, "Use a single part");
  fit->add_option("--log", o.log_out, "Loss history path, one JSON record per line (default <out>.log.jsonl)");
  fit->add_option("--summary-dir", o.summary_dir, "Where per-scene parameter summaries go");
  seed(fit);
  sim(fit);

  auto* roll = app.add_subcommand("rollout", "Feed-forward prediction and simulation");
  roll->add_option("inputs", o.inputs, "<scene> <checkpoint>")->required()->expected(2);
  roll->add_option("--frames", o.frames, "Frames to simulate (default: scene frame count)");
  roll->add_option("--out", o.out, "Trajectory output path")->required();
  sim(roll);

  auto* ev = app.add_subcommand("eval", "Chamfer and tracking error per split");
  ev->add_option("inputs", o.inputs, "<scene> <trajectory>")->required()->expected(2);
  ev->add_option("--out", o.out, "Report output path (JSON)");
  ev->add_flag("--json", o.json_stdout, "Print the JSON report instead of the table");

  auto* con = app.add_subcommand("consistency", "Cross-scene spread of fitted parameters");
  con->add_option("summaries", o.inputs, "Summary files, directories or globs")->required();
  con->add_option("--out", o.out, "Report output path (JSON)");
  con->add_flag("--json", o.json_stdout, "Print the JSON report instead of the table");

  auto* serve = app.add_subcommand("serve", "Interactive session server (WebSocket + HTTP)");
  serve->add_option("--port", o.port, "TCP port (default 8080)");
  serve->add_option("--host", o.host, "Bind address (default 127.0.0.1)");
  serve->add_option("--fixtures", o.fixtures, "Directory of scenes and checkpoints (default fixtures)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*fit) return cmd_fit(o);
    if (*roll) return cmd_rollout(o);
    if (*ev) return cmd_eval(o);
    if (*con) return cmd_consistency(o);
    if (*serve) return cmd_serve(o);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const DegenerateEdgeError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const InstabilityError& e) {
    std::cerr << "unstable: " << e.what() << "\n";
    return kInstability;
  } catch (const NonFiniteForceError& e) {
    std::cerr << "unstable: " << e.what() << "\n";
    return kInstability;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
