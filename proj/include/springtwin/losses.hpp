#pragma once

#include <cmath>
#include <vector>

#include "springtwin/core.hpp"
#include "springtwin/material.hpp"
#include "springtwin/spatial.hpp"

namespace springtwin {

struct LossWeights {
  double trk = 1.0;
  double cham = 1.0;
  double prior = 1e-3;

  void validate() const {
    for (double w : {trk, cham, prior})
      if (!(w >= 0) || !std::isfinite(w)) throw SchemaError("loss_weights", "must be finite and >= 0");
  }
};

struct LossParts {
  double tracking = 0.0;
  double chamfer = 0.0;
  double prior = 0.0;
};

inline double total_loss(const LossWeights& w, const LossParts& p) {
  return w.trk * p.tracking + w.cham * p.chamfer + w.prior * p.prior;
}

/// Mean over (tracked point, frame) of squared distance, frames [0, frames).
/// `sim` is indexed [frame][point], `targets` [tracked][frame]. When `grad`
/// is given, d loss / d sim is accumulated into it, scaled by `scale`.
inline double tracking_loss(const std::vector<Points>& sim, const std::vector<std::size_t>& indices,
                            const std::vector<Points>& targets, std::size_t frames,
                            std::vector<Points>* grad = nullptr, double scale = 1.0) {
  if (indices.empty()) throw SchemaError("tracked", "empty correspondence set");
  if (targets.size() != indices.size())
    throw DimensionError("tracked.targets", "one trajectory per tracked index");
  if (frames > sim.size()) throw DimensionError("tracked", "more frames than simulated");
  const double norm = 1.0 / (static_cast<double>(indices.size()) * static_cast<double>(frames));
  double acc = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (targets[k].size() < frames) throw DimensionError("tracked.targets", "trajectory too short");
    for (std::size_t t = 0; t < frames; ++t) {
      const Vec3 d = sim[t].at(indices[k]) - targets[k][t];
      acc += d.squaredNorm();
      if (grad) (*grad)[t][indices[k]] += (2.0 * norm * scale) * d;
    }
  }
  return acc * norm;
}

/// Symmetric squared Chamfer distance for one frame.
inline double chamfer_sq(const Points& sim, const Points& target, Points* grad = nullptr,
                         double scale = 1.0) {
  if (sim.empty() || target.empty()) throw SchemaError("chamfer", "point sets must be non-empty");
  const KdTree target_tree(target);
  const KdTree sim_tree(sim);
  const double ns = static_cast<double>(sim.size()), nt = static_cast<double>(target.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < sim.size(); ++i) {
    const auto nb = target_tree.nearest(sim[i]);
    a += nb.dist2;
    if (grad) (*grad)[i] += (2.0 * scale / ns) * (sim[i] - target[nb.index]);
  }
  for (std::size_t j = 0; j < target.size(); ++j) {
    const auto nb = sim_tree.nearest(target[j]);
    b += nb.dist2;
    if (grad) (*grad)[nb.index] += (2.0 * scale / nt) * (sim[nb.index] - target[j]);
  }
  return a / ns + b / nt;
}

/// Mean over frames [0, frames) of the symmetric squared Chamfer distance.
inline double chamfer_loss(const std::vector<Points>& sim, const std::vector<Points>& clouds,
                           std::size_t frames, std::vector<Points>* grad = nullptr,
                           double scale = 1.0) {
  if (frames == 0) throw SchemaError("chamfer", "need at least one frame");
  if (clouds.size() < frames || sim.size() < frames)
    throw DimensionError("target_clouds", "fewer clouds than frames");
  double acc = 0.0;
  const double per = scale / static_cast<double>(frames);
  for (std::size_t t = 0; t < frames; ++t)
    acc += chamfer_sq(sim[t], clouds[t], grad ? &(*grad)[t] : nullptr, per);
  return acc / static_cast<double>(frames);
}

/// KL( N(mean_hat, sd_hat^2) || N(mean, sd^2) ).
inline double gaussian_kl(double mean_hat, double sd_hat, double mean, double sd) {
  const double dm = mean_hat - mean;
  return std::log(sd / sd_hat) + (sd_hat * sd_hat + dm * dm) / (2.0 * sd * sd) - 0.5;
}

inline constexpr double kPriorSpreadFloor = 1e-3;

/// Sum over parts of the Gaussian KL between the part's predicted
/// log-stiffness statistics and its prior. `log_k_by_part[m]` holds the log
/// stiffness of part m's intra edges. The spread terms only apply when the
/// predicted spread exceeds the prior's, so a part predicted at the prior
/// mean with less spread costs nothing. Parts with a single edge contribute
/// the mean term only; empty parts contribute nothing. `grad`, when given,
/// receives d loss / d log k in the same layout.
inline double prior_loss_log(const std::vector<std::vector<double>>& log_k_by_part,
                             const std::vector<PartPrior>& priors,
                             std::vector<std::vector<double>>* grad = nullptr) {
  if (log_k_by_part.size() != priors.size())
    throw DimensionError("priors", "one prior per part required");
  if (grad) {
    grad->resize(log_k_by_part.size());
    for (std::size_t m = 0; m < log_k_by_part.size(); ++m)
      (*grad)[m].assign(log_k_by_part[m].size(), 0.0);
  }
  double total = 0.0;
  for (std::size_t m = 0; m < log_k_by_part.size(); ++m) {
    const auto& lk = log_k_by_part[m];
    const double mu = priors[m].log_stiffness_mean, sd = priors[m].log_stiffness_std;
    if (lk.empty()) continue;
    const double n = static_cast<double>(lk.size());
    double mean = 0.0;
    for (double v : lk) mean += v;
    mean /= n;
    if (lk.size() == 1) {
      total += (mean - mu) * (mean - mu) / (2.0 * sd * sd);
      if (grad) (*grad)[m][0] = (mean - mu) / (sd * sd);
      continue;
    }
    double var = 0.0;
    for (double v : lk) var += (v - mean) * (v - mean);
    const double raw_sd = std::sqrt(var / n);
    const bool floored = raw_sd < kPriorSpreadFloor;
    const double s = floored ? kPriorSpreadFloor : raw_sd;
    const bool over = s > sd;
    total += over ? gaussian_kl(mean, s, mu, sd) : (mean - mu) * (mean - mu) / (2.0 * sd * sd);
    if (grad) {
      const double d_mean = (mean - mu) / (sd * sd);
      const double d_sd = (floored || !over) ? 0.0 : (-1.0 / s + s / (sd * sd));
      for (std::size_t e = 0; e < lk.size(); ++e)
        (*grad)[m][e] = d_mean / n + d_sd * (lk[e] - mean) / (n * s);
    }
  }
  return total;
}

/// Same as prior_loss_log, taking stiffness in N/m.
inline double prior_loss(const std::vector<std::vector<double>>& stiffness_by_part,
                         const std::vector<PartPrior>& priors) {
  std::vector<std::vector<double>> lk(stiffness_by_part.size());
  for (std::size_t m = 0; m < lk.size(); ++m)
    for (double k : stiffness_by_part[m]) {
      if (!(k > 0)) throw SchemaError("stiffness", "must be positive");
      lk[m].push_back(std::log(k));
    }
  return prior_loss_log(lk, priors);
}

}  // namespace springtwin
