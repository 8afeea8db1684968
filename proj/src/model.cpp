#include "igt/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "igt/rng.hpp"
#include "json.hpp"

namespace igt {

namespace {
constexpr float kInitStd = 0.02f;
}

void ModelConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("model: vocab_size < 4");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || context_len < 2) {
    throw std::invalid_argument("model: non-positive dimension");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (lora_rank < 1) throw std::invalid_argument("model: lora_rank < 1");
  if (lora_alpha <= 0.0f) throw std::invalid_argument("model: lora_alpha <= 0");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j{{"vocab_size", vocab_size},   {"d_model", d_model},
                   {"n_layers", n_layers},       {"n_heads", n_heads},
                   {"context_len", context_len}, {"lora_rank", lora_rank},
                   {"lora_alpha", lora_alpha},   {"idea_hidden", idea_hidden}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.idea_hidden = j.value("idea_hidden", c.idea_hidden);
  c.validate();
  return c;
}

Model Model::init_backbone(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  const int d = cfg.d_model;
  const int v = cfg.vocab_size;
  // Residual-branch output projections get a 1/sqrt(2L) shrink so the
  // residual stream variance stays flat at init.
  const float out_std = kInitStd / std::sqrt(2.0f * static_cast<float>(cfg.n_layers));

  m.backbone.tok_emb = Tensor::randn({v, d}, kInitStd, rng, true);
  m.backbone.pos_emb = Tensor::randn({cfg.context_len, d}, kInitStd, rng, true);
  m.backbone.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& layer : m.backbone.layers) {
    layer.ln1_g = Tensor::full({d}, 1.0f, true);
    layer.ln1_b = Tensor::zeros({d}, true);
    layer.attn.wq = Tensor::randn({d, d}, kInitStd, rng, true);
    layer.attn.wk = Tensor::randn({d, d}, kInitStd, rng, true);
    layer.attn.wv = Tensor::randn({d, d}, kInitStd, rng, true);
    layer.attn.wo = Tensor::randn({d, d}, out_std, rng, true);
    layer.ln2_g = Tensor::full({d}, 1.0f, true);
    layer.ln2_b = Tensor::zeros({d}, true);
    layer.fc1_w = Tensor::randn({d, 4 * d}, kInitStd, rng, true);
    layer.fc1_b = Tensor::zeros({4 * d}, true);
    layer.fc2_w = Tensor::randn({4 * d, d}, out_std, rng, true);
    layer.fc2_b = Tensor::zeros({d}, true);
  }
  m.backbone.lnf_g = Tensor::full({d}, 1.0f, true);
  m.backbone.lnf_b = Tensor::zeros({d}, true);
  m.token_head.w = Tensor::randn({d, v}, kInitStd, rng, true);
  return m;
}

void Model::freeze_backbone() {
  for (auto& [name, t] : named_tensors()) {
    if (name.rfind("lora.", 0) == 0 || name.rfind("idea.", 0) == 0) continue;
    t.set_requires_grad(false);
  }
  backbone.frozen = true;
}

void Model::attach_lora(Rng& rng) {
  lora.clear();
  lora.resize(static_cast<std::size_t>(cfg.n_layers));
  const int d = cfg.d_model;
  const int r = cfg.lora_rank;
  for (auto& layer : lora) {
    layer.q.a = Tensor::randn({d, r}, kInitStd, rng, true);
    layer.q.b = Tensor::zeros({r, d}, true);
    layer.v.a = Tensor::randn({d, r}, kInitStd, rng, true);
    layer.v.b = Tensor::zeros({r, d}, true);
  }
}

void Model::attach_idea_head(Rng& rng, int k) {
  if (k < 1 || k >= cfg.vocab_size) {
    throw std::invalid_argument("attach_idea_head: k must be in [1, V)");
  }
  IdeaHead head;
  const int d = cfg.d_model;
  const int w = cfg.idea_width();
  head.proj_w = Tensor::randn({d, w}, kInitStd, rng, true);
  head.proj_b = Tensor::zeros({w}, true);
  head.out_w = Tensor::randn({w, cfg.vocab_size}, kInitStd, rng, true);
  const float base_rate_bias =
      std::log(static_cast<float>(k) / static_cast<float>(cfg.vocab_size));
  head.out_b = Tensor::full({cfg.vocab_size}, base_rate_bias, true);
  idea = std::move(head);
}

Tensor Model::project(const Tensor& x, const Tensor& w, const LoraAdapter* adapter) const {
  Tensor out = matmul(x, w);
  if (adapter != nullptr) {
    Tensor delta = matmul(matmul(x, adapter->a), adapter->b);
    out = add(out, mul_scalar(delta, lora_scaling()));
  }
  return out;
}

Tensor Model::forward_hidden(std::span<const int> tokens) const {
  const int t_len = static_cast<int>(tokens.size());
  if (t_len == 0) throw std::invalid_argument("forward_hidden: empty input");
  if (t_len > cfg.context_len) {
    throw std::invalid_argument("forward_hidden: sequence length " + std::to_string(t_len) +
                                " exceeds context_len " + std::to_string(cfg.context_len));
  }
  std::vector<int> positions(static_cast<std::size_t>(t_len));
  std::iota(positions.begin(), positions.end(), 0);

  Tensor x = add(embedding(backbone.tok_emb, tokens), embedding(backbone.pos_emb, positions));

  const int n_heads = cfg.n_heads;
  const int hd = cfg.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  for (std::size_t li = 0; li < backbone.layers.size(); ++li) {
    const LayerWeights& layer = backbone.layers[li];
    const LayerLora* adapters = lora.empty() ? nullptr : &lora[li];

    Tensor a = layer_norm(x, layer.ln1_g, layer.ln1_b);
    Tensor q = project(a, layer.attn.wq, adapters ? &adapters->q : nullptr);
    Tensor k = matmul(a, layer.attn.wk);
    Tensor v = project(a, layer.attn.wv, adapters ? &adapters->v : nullptr);

    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      const int c0 = h * hd;
      Tensor qh = slice_cols(q, c0, c0 + hd);
      Tensor kh = slice_cols(k, c0, c0 + hd);
      Tensor vh = slice_cols(v, c0, c0 + hd);
      Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
      Tensor weights = causal_softmax(scores);
      heads.push_back(matmul(weights, vh));
    }
    Tensor attn_out = matmul(concat_cols(heads), layer.attn.wo);
    x = add(x, attn_out);

    Tensor m1 = layer_norm(x, layer.ln2_g, layer.ln2_b);
    Tensor ff = add_bias(matmul(relu(add_bias(matmul(m1, layer.fc1_w), layer.fc1_b)),
                                layer.fc2_w),
                         layer.fc2_b);
    x = add(x, ff);
  }
  return layer_norm(x, backbone.lnf_g, backbone.lnf_b);
}

Tensor Model::token_logits(const Tensor& h) const {
  if (h.rank() != 2 || h.dim(1) != cfg.d_model) {
    throw std::invalid_argument("token_logits: hidden width " + shape_str(h.shape()) +
                                " does not match d_model " + std::to_string(cfg.d_model));
  }
  return matmul(h, token_head.w);
}

Tensor Model::idea_logits(const Tensor& h) const {
  if (!idea.has_value()) throw std::logic_error("idea_logits: model has no idea head");
  if (h.rank() != 2 || h.dim(1) != cfg.d_model) {
    throw std::invalid_argument("idea_logits: hidden width " + shape_str(h.shape()) +
                                " does not match d_model " + std::to_string(cfg.d_model));
  }
  Tensor hidden = relu(add_bias(matmul(h, idea->proj_w), idea->proj_b));
  return add_bias(matmul(hidden, idea->out_w), idea->out_b);
}

std::vector<std::pair<std::string, Tensor>> Model::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", backbone.tok_emb);
  out.emplace_back("pos_emb", backbone.pos_emb);
  for (std::size_t i = 0; i < backbone.layers.size(); ++i) {
    const auto& l = backbone.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.g", l.ln1_g);
    out.emplace_back(p + "ln1.b", l.ln1_b);
    out.emplace_back(p + "attn.wq", l.attn.wq);
    out.emplace_back(p + "attn.wk", l.attn.wk);
    out.emplace_back(p + "attn.wv", l.attn.wv);
    out.emplace_back(p + "attn.wo", l.attn.wo);
    out.emplace_back(p + "ln2.g", l.ln2_g);
    out.emplace_back(p + "ln2.b", l.ln2_b);
    out.emplace_back(p + "mlp.fc1.w", l.fc1_w);
    out.emplace_back(p + "mlp.fc1.b", l.fc1_b);
    out.emplace_back(p + "mlp.fc2.w", l.fc2_w);
    out.emplace_back(p + "mlp.fc2.b", l.fc2_b);
  }
  out.emplace_back("ln_f.g", backbone.lnf_g);
  out.emplace_back("ln_f.b", backbone.lnf_b);
  out.emplace_back("token_head.w", token_head.w);
  for (std::size_t i = 0; i < lora.size(); ++i) {
    const std::string p = "lora." + std::to_string(i) + ".";
    out.emplace_back(p + "q.a", lora[i].q.a);
    out.emplace_back(p + "q.b", lora[i].q.b);
    out.emplace_back(p + "v.a", lora[i].v.a);
    out.emplace_back(p + "v.b", lora[i].v.b);
  }
  if (idea.has_value()) {
    out.emplace_back("idea.proj.w", idea->proj_w);
    out.emplace_back("idea.proj.b", idea->proj_b);
    out.emplace_back("idea.out.w", idea->out_w);
    out.emplace_back("idea.out.b", idea->out_b);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::trainable_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : named_tensors()) {
    if (t.requires_grad()) out.emplace_back(name, t);
  }
  return out;
}

std::size_t Model::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : trainable_params()) n += t.numel();
  return n;
}

}  // namespace igt
