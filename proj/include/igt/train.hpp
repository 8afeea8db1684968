#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "igt/checkpoint.hpp"
#include "igt/corpus.hpp"
#include "igt/gate.hpp"
#include "igt/model.hpp"

namespace igt {

struct AdamWConfig {
  float lr = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;  // decoupled; applied to rank>=2 tensors only
};

// Decoupled-weight-decay Adam over an explicit list of trainable tensors.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  // Bias-corrected moment update plus param *= (1 - lr*wd) on matrices.
  // Throws on non-finite gradients, reporting the internal step count.
  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  std::vector<Tensor> params_;
  std::vector<Moments> state_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

struct StepRecord {
  int step;
  float alpha;
  float loss_total, loss_token, loss_idea;
  float grad_norm;
};

struct EvalRecord {
  int step;
  float alpha;
  double val_token_loss, val_ppl;
  // Same checkpoint evaluated with the gate off; equals the gated numbers
  // for the baseline arm.
  double val_token_loss_ungated, val_ppl_ungated;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  std::string steps_csv() const;
  std::string evals_csv() const;
};

enum class Arm { baseline, gated };

std::string arm_name(Arm arm);
Arm arm_from_name(const std::string& name);

struct TrainConfig {
  Arm arm = Arm::gated;
  int steps = 5000;
  int batch_size = 32;
  int seq_len = 128;
  AdamWConfig adamw;  // lr 2e-4 default
  float clip_norm = 1.0f;
  std::uint64_t seed = 0;
  bool detach_idea_from_lora = false;
  int eval_every = 100;
  int k = 20;           // idea-target window
  float lambda = 1.0f;  // idea loss weight
  int stopword_n = -1;  // -1 selects max(16, ceil(0.02 V))

  void validate() const;
};

struct PretrainConfig {
  int steps = 800;
  int batch_size = 16;
  int seq_len = 128;
  AdamWConfig adamw{1e-3f, 0.9f, 0.999f, 1e-8f, 0.01f};
  float clip_norm = 1.0f;
  std::uint64_t seed = 0;
  int eval_every = 100;
};

struct EvalResult {
  double val_token_loss = 0.0;
  double val_ppl = 0.0;
};

double ppl_from_loss(double loss);

// Mean next-token CE over the given documents (BOS-prefixed, clipped to the
// model context), gated at the given alpha when the model has an idea head.
EvalResult evaluate_ppl(const Model& model, const Corpus& corpus,
                        std::span<const int> doc_ids, float alpha, const GateConfig& gate);

// Validation perplexity of an add-one-smoothed unigram model fit on the
// training split; the bar any pretrained backbone must beat.
double unigram_val_ppl(const Corpus& corpus);

// Next-token pretraining of a fresh backbone + token head; the result is
// frozen before being returned. Throws on divergence (non-finite loss).
Model pretrain_backbone(const Corpus& corpus, const ModelConfig& model_cfg,
                        const PretrainConfig& cfg, TrainLog* log = nullptr);

struct TrainResult {
  Model model;
  TrainLog log;
  double final_val_loss = 0.0;
  double final_val_ppl = 0.0;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

// Trains one experiment arm on top of a frozen pretrained backbone.
// Baseline: LoRA only, alpha fixed at 0, token loss only. Gated: LoRA +
// idea head with the alpha ramp and the combined objective. When out_dir is
// non-empty, writes model.igt, train_log.csv, and eval_log.csv there.
TrainResult train_arm(const Corpus& corpus, const Model& pretrained, const TrainConfig& cfg,
                      const GateConfig& gate, const std::string& out_dir = "");

}  // namespace igt
