#pragma once

#include "igt/tensor.hpp"

namespace igt {

// Configuration of the semantic gate: strength schedule, clamp floor, and
// the numerical floor added before the log.
struct GateConfig {
  float alpha_max = 0.5f;
  int ramp_steps = 1000;
  float beta = -2.0f;
  float epsilon = 1e-6f;
  float inference_alpha = 0.5f;  // defaults to alpha_max

  void validate() const;  // throws std::invalid_argument
};

// Linear ramp: alpha_max * min(1, step / ramp_steps). Exactly 0 at step 0
// and exactly alpha_max from ramp_steps on.
float alpha_at(int step, const GateConfig& cfg);

// max(alpha * log(sigmoid(z_idea) + epsilon), beta), elementwise. Output is
// bounded to [beta, alpha * log(1 + epsilon)] and monotone in z_idea.
Tensor compute_gate(const Tensor& z_idea, float alpha, const GateConfig& cfg);

// z_final = z_token + gate. With alpha = 0 the sum is the identity.
Tensor fuse(const Tensor& z_token, const Tensor& gate);

// Probability threshold below which the clamp is active: sigmoid(z)+eps
// values under exp(beta/alpha) gate to exactly beta.
double clamp_threshold(const GateConfig& cfg, float alpha);

}  // namespace igt
