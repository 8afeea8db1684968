#include "igt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "igt/objective.hpp"
#include "igt/rng.hpp"

namespace igt {

namespace {

std::string fmt_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// BOS-prefixed token sequence, clipped to max_len.
std::vector<int> make_sequence(const std::vector<int>& doc, int max_len) {
  std::vector<int> seq;
  seq.reserve(std::min<std::size_t>(doc.size() + 1, static_cast<std::size_t>(max_len)));
  seq.push_back(kBosId);
  for (int id : doc) {
    if (static_cast<int>(seq.size()) >= max_len) break;
    seq.push_back(id);
  }
  return seq;
}

// f64 sum of per-row CE; evaluation path, no autodiff.
double ce_sum_f64(const Tensor& logits, std::span<const int> targets) {
  const int v = logits.dim(1);
  const float* ld = logits.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const float* row = ld + i * static_cast<std::size_t>(v);
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    acc += mx + std::log(denom) - static_cast<double>(row[targets[i]]);
  }
  return acc;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
}

std::vector<std::pair<std::string, Tensor>> backbone_tensors(const Model& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& nt : m.named_tensors()) {
    if (nt.first.rfind("lora.", 0) == 0 || nt.first.rfind("idea.", 0) == 0) continue;
    out.push_back(nt);
  }
  return out;
}

}  // namespace

// ---- AdamW -------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0f) || !(cfg_.beta1 >= 0.0f && cfg_.beta1 < 1.0f) ||
      !(cfg_.beta2 >= 0.0f && cfg_.beta2 < 1.0f) || !(cfg_.eps > 0.0f) ||
      cfg_.weight_decay < 0.0f) {
    throw std::invalid_argument("adamw: invalid hyperparameters");
  }
  state_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].requires_grad()) {
      throw std::invalid_argument("adamw: parameter " + std::to_string(i) +
                                  " does not require grad");
    }
    state_[i].m.assign(params_[i].numel(), 0.0f);
    state_[i].v.assign(params_[i].numel(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const std::size_t n = p.numel();
    float* pd = p.data();
    const float* g = p.grad();
    float* m = state_[pi].m.data();
    float* v = state_[pi].v.data();
    const bool decay = cfg_.weight_decay > 0.0f && p.rank() >= 2;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i])) {
        throw std::runtime_error("adamw: non-finite gradient at optimizer step " +
                                 std::to_string(t_));
      }
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      if (decay) pd[i] *= 1.0f - cfg_.lr * cfg_.weight_decay;
      pd[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    const float* g = p.grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      float* g = p.grad();
      for (std::size_t i = 0; i < p.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

// ---- logs ---------------------------------------------------------------

std::string TrainLog::steps_csv() const {
  std::string out = "step,alpha,loss_total,loss_token,loss_idea,grad_norm\n";
  for (const auto& r : steps) {
    out += std::to_string(r.step) + ',' + fmt_float(r.alpha) + ',' + fmt_float(r.loss_total) +
           ',' + fmt_float(r.loss_token) + ',' + fmt_float(r.loss_idea) + ',' +
           fmt_float(r.grad_norm) + '\n';
  }
  return out;
}

std::string TrainLog::evals_csv() const {
  std::string out =
      "step,alpha,val_token_loss,val_ppl,val_token_loss_ungated,val_ppl_ungated\n";
  for (const auto& r : evals) {
    out += std::to_string(r.step) + ',' + fmt_float(r.alpha) + ',' +
           fmt_float(r.val_token_loss) + ',' + fmt_float(r.val_ppl) + ',' +
           fmt_float(r.val_token_loss_ungated) + ',' + fmt_float(r.val_ppl_ungated) + '\n';
  }
  return out;
}

std::string arm_name(Arm arm) { return arm == Arm::baseline ? "baseline" : "gated"; }

Arm arm_from_name(const std::string& name) {
  if (name == "baseline") return Arm::baseline;
  if (name == "gated") return Arm::gated;
  throw std::invalid_argument("unknown arm '" + name + "' (expected baseline|gated)");
}

void TrainConfig::validate() const {
  if (steps < 0 || batch_size < 1 || seq_len < 2 || eval_every < 1 || k < 1) {
    throw std::invalid_argument("train config: non-positive field");
  }
  if (lambda < 0.0f) throw std::invalid_argument("train config: lambda must be >= 0");
}

// ---- evaluation ----------------------------------------------------------

double ppl_from_loss(double loss) { return std::exp(loss); }

EvalResult evaluate_ppl(const Model& model, const Corpus& corpus,
                        std::span<const int> doc_ids, float alpha, const GateConfig& gate) {
  if (doc_ids.empty()) throw std::invalid_argument("evaluate_ppl: empty validation set");
  const bool use_gate = alpha != 0.0f;
  if (use_gate && !model.has_idea()) {
    throw std::invalid_argument("evaluate_ppl: alpha != 0 requires an idea head");
  }
  double ce = 0.0;
  std::int64_t count = 0;
  for (int di : doc_ids) {
    const auto seq = make_sequence(corpus.tokens.at(static_cast<std::size_t>(di)),
                                   model.cfg.context_len);
    if (seq.size() < 2) continue;
    const Tensor h = model.forward_hidden(seq);
    Tensor z = model.token_logits(h);
    if (use_gate) {
      z = fuse(z, compute_gate(model.idea_logits(h), alpha, gate));
    }
    const std::span<const int> next(seq.data() + 1, seq.size() - 1);
    ce += ce_sum_f64(z, next);
    count += static_cast<std::int64_t>(next.size());
  }
  if (count == 0) throw std::invalid_argument("evaluate_ppl: no scorable positions");
  EvalResult r;
  r.val_token_loss = ce / static_cast<double>(count);
  r.val_ppl = ppl_from_loss(r.val_token_loss);
  return r;
}

double unigram_val_ppl(const Corpus& corpus) {
  const int v = corpus.vocab.size();
  std::vector<double> counts(static_cast<std::size_t>(v), 1.0);  // add-one smoothing
  double total = static_cast<double>(v);
  for (int di : corpus.train_docs) {
    for (int id : corpus.tokens[static_cast<std::size_t>(di)]) {
      counts[static_cast<std::size_t>(id)] += 1.0;
      total += 1.0;
    }
  }
  double ce = 0.0;
  std::int64_t n = 0;
  for (int di : corpus.val_docs) {
    for (int id : corpus.tokens[static_cast<std::size_t>(di)]) {
      ce += -std::log(counts[static_cast<std::size_t>(id)] / total);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("unigram_val_ppl: empty validation split");
  return ppl_from_loss(ce / static_cast<double>(n));
}

// ---- pretraining -----------------------------------------------------------

Model pretrain_backbone(const Corpus& corpus, const ModelConfig& model_cfg,
                        const PretrainConfig& cfg, TrainLog* log) {
  if (corpus.train_docs.empty()) throw std::invalid_argument("pretrain: no training documents");
  Rng init_rng(cfg.seed ^ 0xb0d7a11ce5ULL);
  Model model = Model::init_backbone(model_cfg, init_rng);

  std::vector<Tensor> params;
  for (auto& [name, t] : model.trainable_params()) params.push_back(t);
  AdamW opt(params, cfg.adamw);

  const int max_len = std::min(cfg.seq_len, model_cfg.context_len);
  Rng batch_rng(cfg.seed ^ 0xba7c4e5ULL);
  auto run_eval = [&](int step) {
    if (log == nullptr || corpus.val_docs.empty()) return;
    const auto r = evaluate_ppl(model, corpus, corpus.val_docs, 0.0f, GateConfig{});
    log->evals.push_back(EvalRecord{step, 0.0f, r.val_token_loss, r.val_ppl,
                                    r.val_token_loss, r.val_ppl});
  };
  run_eval(0);
  for (int step = 0; step < cfg.steps; ++step) {
    Tape tape;
    std::vector<Tensor> items;
    items.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int di = corpus.train_docs[static_cast<std::size_t>(
          batch_rng.uniform_int(static_cast<int>(corpus.train_docs.size())))];
      const auto seq = make_sequence(corpus.tokens[static_cast<std::size_t>(di)], max_len);
      if (seq.size() < 2) continue;
      const Tensor h = model.forward_hidden(seq);
      const Tensor z = model.token_logits(h);
      items.push_back(cross_entropy_rows(z, std::span<const int>(seq.data() + 1, seq.size() - 1)));
    }
    if (items.empty()) throw std::runtime_error("pretrain: batch had no usable sequences");
    Tensor loss = mean_of(items);
    if (!std::isfinite(loss.item())) {
      throw std::runtime_error("pretrain: diverged (non-finite loss) at step " +
                               std::to_string(step));
    }
    backward(loss);
    const double gnorm = clip_grad_norm(params, cfg.clip_norm);
    opt.step();
    opt.zero_grad();
    if (log != nullptr) {
      log->steps.push_back(StepRecord{step, 0.0f, loss.item(), loss.item(), 0.0f,
                                      static_cast<float>(gnorm)});
    }
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) run_eval(step + 1);
  }
  model.freeze_backbone();
  return model;
}

// ---- arm training -----------------------------------------------------------

TrainResult train_arm(const Corpus& corpus, const Model& pretrained, const TrainConfig& cfg,
                      const GateConfig& gate, const std::string& out_dir) {
  cfg.validate();
  gate.validate();
  if (!pretrained.backbone.frozen) {
    throw std::invalid_argument("train_arm: backbone must be pretrained and frozen");
  }
  if (corpus.train_docs.empty()) throw std::invalid_argument("train_arm: no training documents");

  // Arms share the backbone storage; adapters/heads are per-arm.
  Model model = pretrained;
  model.lora.clear();
  model.idea.reset();
  Rng lora_rng(cfg.seed ^ 0x10aaULL);
  model.attach_lora(lora_rng);
  const bool gated = cfg.arm == Arm::gated;
  if (gated) {
    Rng idea_rng(cfg.seed ^ 0x1deaULL);
    model.attach_idea_head(idea_rng, cfg.k);
  }

  const int stopword_n =
      cfg.stopword_n >= 0 ? cfg.stopword_n : default_stopword_n(corpus.vocab.size());
  const StopwordList stopwords = build_stopwords(corpus, stopword_n);
  const LossWeights weights{cfg.lambda};

  std::vector<Tensor> params;
  for (auto& [name, t] : model.trainable_params()) params.push_back(t);
  AdamW opt(params, cfg.adamw);

  TrainResult result;
  result.backbone_hash_before = hash_tensors(backbone_tensors(model));

  const int max_len = std::min(cfg.seq_len, model.cfg.context_len);
  Rng batch_rng(cfg.seed ^ 0xba7c4e5ULL);

  auto run_eval = [&](int step, float alpha) {
    if (corpus.val_docs.empty()) return;
    EvalRecord rec{};
    rec.step = step;
    rec.alpha = alpha;
    const auto ungated = evaluate_ppl(model, corpus, corpus.val_docs, 0.0f, gate);
    rec.val_token_loss_ungated = ungated.val_token_loss;
    rec.val_ppl_ungated = ungated.val_ppl;
    if (gated && alpha != 0.0f) {
      const auto r = evaluate_ppl(model, corpus, corpus.val_docs, alpha, gate);
      rec.val_token_loss = r.val_token_loss;
      rec.val_ppl = r.val_ppl;
    } else {
      rec.val_token_loss = ungated.val_token_loss;
      rec.val_ppl = ungated.val_ppl;
    }
    result.log.evals.push_back(rec);
  };

  run_eval(0, gated ? alpha_at(0, gate) : 0.0f);
  for (int step = 0; step < cfg.steps; ++step) {
    const float alpha = gated ? alpha_at(step, gate) : 0.0f;
    Tape tape;
    std::vector<Tensor> totals, token_parts, idea_parts;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int di = corpus.train_docs[static_cast<std::size_t>(
          batch_rng.uniform_int(static_cast<int>(corpus.train_docs.size())))];
      const auto seq = make_sequence(corpus.tokens[static_cast<std::size_t>(di)], max_len);
      if (seq.size() < 2) continue;
      const Tensor h = model.forward_hidden(seq);
      const Tensor z_token = model.token_logits(h);
      const std::span<const int> next(seq.data() + 1, seq.size() - 1);
      if (gated) {
        const Tensor z_idea =
            model.idea_logits(cfg.detach_idea_from_lora ? detach(h) : h);
        const Tensor z_final = fuse(z_token, compute_gate(z_idea, alpha, gate));
        const auto targets = build_targets(seq, cfg.k, model.cfg.vocab_size);
        const LossParts parts =
            total_loss(z_final, z_idea, next, targets, stopwords, weights);
        totals.push_back(parts.total);
        token_parts.push_back(parts.token);
        idea_parts.push_back(parts.idea);
      } else {
        const Tensor l = cross_entropy_rows(z_token, next);
        totals.push_back(l);
        token_parts.push_back(l);
      }
    }
    if (totals.empty()) throw std::runtime_error("train_arm: batch had no usable sequences");
    Tensor loss = mean_of(totals);
    if (!std::isfinite(loss.item())) {
      throw std::runtime_error("train_arm: diverged (non-finite loss) at step " +
                               std::to_string(step));
    }
    backward(loss);
    const double gnorm = clip_grad_norm(params, cfg.clip_norm);
    opt.step();
    opt.zero_grad();

    double token_mean = 0.0, idea_mean = 0.0;
    for (const auto& t : token_parts) token_mean += t.item();
    token_mean /= static_cast<double>(token_parts.size());
    if (!idea_parts.empty()) {
      for (const auto& t : idea_parts) idea_mean += t.item();
      idea_mean /= static_cast<double>(idea_parts.size());
    }
    result.log.steps.push_back(StepRecord{step, alpha, loss.item(),
                                          static_cast<float>(token_mean),
                                          static_cast<float>(idea_mean),
                                          static_cast<float>(gnorm)});
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      run_eval(step + 1, gated ? alpha_at(step + 1, gate) : 0.0f);
    }
  }

  result.backbone_hash_after = hash_tensors(backbone_tensors(model));
  if (result.backbone_hash_before != result.backbone_hash_after) {
    throw std::runtime_error("train_arm: frozen backbone was modified");
  }

  // Final report at the terminal gate strength.
  if (!corpus.val_docs.empty()) {
    const auto final_eval = evaluate_ppl(model, corpus, corpus.val_docs,
                                         gated ? gate.alpha_max : 0.0f, gate);
    result.final_val_loss = final_eval.val_token_loss;
    result.final_val_ppl = final_eval.val_ppl;
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    CheckpointMeta meta;
    meta.model = model.cfg;
    meta.gate = gate;
    meta.arm = arm_name(cfg.arm);
    meta.k = cfg.k;
    save_checkpoint((std::filesystem::path(out_dir) / "model.igt").string(), model, meta);
    write_file((std::filesystem::path(out_dir) / "train_log.csv").string(),
               result.log.steps_csv());
    write_file((std::filesystem::path(out_dir) / "eval_log.csv").string(),
               result.log.evals_csv());
  }
  result.model = std::move(model);
  return result;
}

}  // namespace igt
