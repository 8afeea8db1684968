#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "igt/tensor.hpp"

namespace igt {

class Rng;

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int context_len = 128;
  int lora_rank = 4;
  float lora_alpha = 8.0f;  // scaling = lora_alpha / lora_rank
  int idea_hidden = 0;      // 0 means d_model

  int head_dim() const { return d_model / n_heads; }
  int idea_width() const { return idea_hidden > 0 ? idea_hidden : d_model; }
  void validate() const;  // throws std::invalid_argument

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [d,d]
};

struct LayerWeights {
  Tensor ln1_g, ln1_b;
  AttentionWeights attn;
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b;  // [d,4d],[4d]
  Tensor fc2_w, fc2_b;  // [4d,d],[d]
};

struct Backbone {
  Tensor tok_emb;  // [V,d]
  Tensor pos_emb;  // [context_len,d]
  std::vector<LayerWeights> layers;
  Tensor lnf_g, lnf_b;
  bool frozen = false;
};

struct TokenHead {
  Tensor w;  // [d,V], frozen together with the backbone
};

struct LoraAdapter {
  Tensor a;  // [d,r]
  Tensor b;  // [r,d], zero-initialized
};

struct LayerLora {
  LoraAdapter q, v;
};

struct IdeaHead {
  Tensor proj_w, proj_b;  // [d,idea_width],[idea_width]
  Tensor out_w, out_b;    // [idea_width,V],[V]
};

// Decoder-only transformer with a frozen backbone/token head, optional LoRA
// adapters on the attention q/v projections, and an optional idea head.
class Model {
 public:
  ModelConfig cfg;
  Backbone backbone;
  TokenHead token_head;
  std::vector<LayerLora> lora;  // empty when no adapters
  std::optional<IdeaHead> idea;

  // Fresh trainable backbone + token head (the pretraining starting point).
  static Model init_backbone(const ModelConfig& cfg, Rng& rng);

  void freeze_backbone();
  void attach_lora(Rng& rng);
  // k is the idea window size; the output bias starts at log(k/V) so the
  // initial idea probabilities match the target base rate.
  void attach_idea_head(Rng& rng, int k);

  bool has_lora() const { return !lora.empty(); }
  bool has_idea() const { return idea.has_value(); }
  float lora_scaling() const {
    return cfg.lora_alpha / static_cast<float>(cfg.lora_rank);
  }

  // Final hidden states [T,d]; causal; LoRA applied when adapters exist.
  Tensor forward_hidden(std::span<const int> tokens) const;
  Tensor token_logits(const Tensor& h) const;  // [T,V]
  Tensor idea_logits(const Tensor& h) const;   // [T,V]

  // Canonical (name, tensor) enumeration; order is the checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor>> trainable_params() const;
  std::size_t trainable_scalar_count() const;

 private:
  Tensor project(const Tensor& x, const Tensor& w, const LoraAdapter* adapter) const;
};

}  // namespace igt
