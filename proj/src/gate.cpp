#include "igt/gate.hpp"

#include <cmath>
#include <stdexcept>

namespace igt {

void GateConfig::validate() const {
  if (alpha_max < 0.0f) throw std::invalid_argument("gate: alpha_max must be >= 0");
  if (ramp_steps < 1) throw std::invalid_argument("gate: ramp_steps must be >= 1");
  if (!(beta < 0.0f)) throw std::invalid_argument("gate: beta must be negative");
  if (!(epsilon > 0.0f && epsilon < 1.0f)) {
    throw std::invalid_argument("gate: epsilon must be in (0,1)");
  }
  if (inference_alpha < 0.0f) {
    throw std::invalid_argument("gate: inference_alpha must be >= 0");
  }
}

float alpha_at(int step, const GateConfig& cfg) {
  if (step < 0) throw std::invalid_argument("alpha_at: negative step");
  if (step >= cfg.ramp_steps) return cfg.alpha_max;
  return cfg.alpha_max * (static_cast<float>(step) / static_cast<float>(cfg.ramp_steps));
}

Tensor compute_gate(const Tensor& z_idea, float alpha, const GateConfig& cfg) {
  const float* zd = z_idea.data();
  for (std::size_t i = 0; i < z_idea.numel(); ++i) {
    if (!std::isfinite(zd[i])) {
      throw std::runtime_error("compute_gate: non-finite idea logit");
    }
  }
  Tensor p = sigmoid(z_idea);
  Tensor penalty = mul_scalar(log(add_scalar(p, cfg.epsilon)), alpha);
  return max_with_scalar(penalty, cfg.beta);
}

Tensor fuse(const Tensor& z_token, const Tensor& gate) {
  return add(z_token, gate);
}

double clamp_threshold(const GateConfig& cfg, float alpha) {
  if (alpha <= 0.0f) return 0.0;  // alpha = 0 never clamps (gate is 0 > beta)
  return std::exp(static_cast<double>(cfg.beta) / static_cast<double>(alpha));
}

}  // namespace igt
