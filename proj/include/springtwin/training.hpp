#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "springtwin/core.hpp"
#include "springtwin/losses.hpp"
#include "springtwin/model.hpp"

namespace springtwin {

// Forward states are stored per substep for the adjoint, which bounds scene size.
inline constexpr std::size_t kMaxTrainPoints = 2000;
inline constexpr std::size_t kMaxTrainFrames = 120;

struct TrainConfig {
  int epochs = 300;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;
  LossWeights weights;
  int patience = 20;
  double min_rel_improvement = 1e-5;
  unsigned threads = 1;  // scenes evaluated concurrently; 1 is the sequential reference

  void validate() const {
    if (epochs < 0) throw SchemaError("epochs", "must be >= 0");
    if (!(lr > 0) || !std::isfinite(lr)) throw SchemaError("lr", "must be positive");
    if (!(clip_norm > 0)) throw SchemaError("clip_norm", "must be positive");
    if (patience < 1) throw SchemaError("patience", "must be >= 1");
    weights.validate();
  }
};

/// Thread cap from SPRINGTWIN_THREADS (unset or invalid: 1).
inline unsigned threads_from_env() {
  const char* v = std::getenv("SPRINGTWIN_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end != v && n >= 1) ? static_cast<unsigned>(n) : 1u;
}

struct EpochRecord {
  int epoch = 0;
  LossParts loss;  // mean over evaluated scenes
  double total = 0.0;
  std::size_t skipped = 0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  bool early_stopped = false;
  std::size_t skipped_total = 0;
};

/// Adam state over the flattened trainable parameters.
class Adam {
 public:
  Adam(Eigen::Index n, const TrainConfig& cfg)
      : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)), cfg_(cfg) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    params.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

 private:
  Eigen::VectorXd m_, v_;
  TrainConfig cfg_;
  int t_ = 0;
};

namespace detail {

struct SceneResult {
  std::optional<SceneEvaluation> eval;
  Eigen::VectorXd grad;
};

inline SceneResult run_scene(const Model& model, const Twin& twin, const LossWeights& w) {
  SceneResult r;
  Model g = model.zeros_like();
  try {
    r.eval = evaluate_scene(model, twin, w, &g);
    r.grad = g.flatten();
  } catch (const InstabilityError&) {
    r.eval.reset();
  } catch (const DegenerateEdgeError&) {
    r.eval.reset();
  }
  return r;
}

/// Evaluates every scene, in parallel when asked; results keep scene order.
inline std::vector<SceneResult> run_all(const Model& model, const std::vector<Twin>& twins,
                                        const LossWeights& w, unsigned threads) {
  std::vector<SceneResult> out(twins.size());
  if (threads <= 1 || twins.size() <= 1) {
    for (std::size_t s = 0; s < twins.size(); ++s) out[s] = run_scene(model, twins[s], w);
    return out;
  }
  const std::size_t workers = std::min<std::size_t>(threads, twins.size());
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < workers; ++k)
    pool.emplace_back([&, k] {
      for (std::size_t s = k; s < twins.size(); s += workers) out[s] = run_scene(model, twins[s], w);
    });
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace detail

/// Fits the model to the scenes: one Adam step per epoch on the mean
/// scene gradient, clipped to a global norm. Scenes whose rollout blows up
/// are skipped for that epoch; training aborts if every scene is skipped.
inline TrainResult train(Model model, const std::vector<Twin>& twins, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (twins.empty()) throw TrainingError("no training scenes");
  for (std::size_t s = 0; s < twins.size(); ++s)
    if (twins[s].initial.size() > kMaxTrainPoints || twins[s].train_frames > kMaxTrainFrames)
      throw SchemaError("scenes[" + std::to_string(s) + "]",
                        "training is capped at " + std::to_string(kMaxTrainPoints) + " points and " +
                            std::to_string(kMaxTrainFrames) + " frames");
  std::vector<MotionFeature> raw;
  for (const auto& t : twins) raw.push_back(t.motion_raw);
  model.motion = MotionStandardization::fit(raw);

  TrainResult result;
  Eigen::VectorXd params = model.flatten();
  Adam adam(params.size(), cfg);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto scenes = detail::run_all(model, twins, cfg.weights, cfg.threads);
    EpochRecord rec;
    rec.epoch = epoch;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
    std::size_t used = 0;
    for (const auto& s : scenes) {
      if (!s.eval) {
        ++rec.skipped;
        continue;
      }
      ++used;
      grad += s.grad;
      rec.loss.tracking += s.eval->loss.tracking;
      rec.loss.chamfer += s.eval->loss.chamfer;
      rec.loss.prior += s.eval->loss.prior;
      rec.total += s.eval->total;
    }
    result.skipped_total += rec.skipped;
    if (used == 0)
      throw TrainingError("every scene was unstable at epoch " + std::to_string(epoch));
    const double inv = 1.0 / static_cast<double>(used);
    grad *= inv;
    rec.loss.tracking *= inv;
    rec.loss.chamfer *= inv;
    rec.loss.prior *= inv;
    rec.total *= inv;
    if (!grad.allFinite()) throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch));
    rec.grad_norm = grad.norm();
    if (rec.grad_norm > cfg.clip_norm) grad *= cfg.clip_norm / rec.grad_norm;
    adam.step(params, grad);
    model.unflatten(params);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const auto n = result.history.size();
    if (n > static_cast<std::size_t>(cfg.patience)) {
      const double before = result.history[n - 1 - static_cast<std::size_t>(cfg.patience)].total;
      const double now = rec.total;
      if (before > 0 && (before - now) / before < cfg.min_rel_improvement) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace springtwin
