#include <cmath>
#include <numbers>
#include <string>

#include "dmc/error.hpp"
#include "dmc/trainer.hpp"

namespace dmc {

double lr_at(std::size_t step, const TrainConfig& config, std::size_t total_steps) {
  const std::size_t warmup = config.warmup_steps;
  if (warmup > 0 && step <= warmup) {
    return config.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return 0.0;
  const double progress = std::min(
      1.0, static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup));
  return config.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_gradients(std::span<const std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw Error(ErrorKind::ConfigInvalid, "grad_clip must be > 0");
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (double& v : g) v *= scale;
    }
  }
  return norm;
}

OptimizerState::OptimizerState(std::span<const std::span<double>> params) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.size(), 0.0);
    second_moment.emplace_back(p.size(), 0.0);
  }
}

void adamw_step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads,
                OptimizerState& state, double lr, double weight_decay, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer tensor count mismatch");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || params[t].size() != state.first_moment[t].size()) {
      throw Error(ErrorKind::ShapeMismatch, "optimizer tensor " + std::to_string(t) + " shape mismatch");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto p = params[k];
    const auto g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + weight_decay * p[i]);
    }
  }
}

}  // namespace dmc
