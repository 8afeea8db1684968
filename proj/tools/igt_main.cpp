// igt: end-to-end driver for the idea-gated transformer experiments.
//
// Subcommands cover the full lifecycle: gen-corpus -> pretrain ->
// train (baseline|gated) -> eval / generate / bench-drift / xray.
// All randomness sits behind --seed; every artifact lands in one --out
// directory with a manifest written before any work starts.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "igt/checkpoint.hpp"
#include "igt/corpus.hpp"
#include "igt/decode.hpp"
#include "igt/gate.hpp"
#include "igt/manifest.hpp"
#include "igt/model.hpp"
#include "igt/objective.hpp"
#include "igt/train.hpp"
#include "igt/xray.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

// Optional config file with sections: corpus, model, gate, train, pretrain,
// decode. Command-line flags override file values.
json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(read_text_file(path));
}

igt::ModelConfig model_config_from(const json& cfg) {
  igt::ModelConfig m;
  if (cfg.contains("model")) {
    const auto& j = cfg.at("model");
    m.vocab_size = j.value("vocab_size", m.vocab_size);
    m.d_model = j.value("d_model", m.d_model);
    m.n_layers = j.value("n_layers", m.n_layers);
    m.n_heads = j.value("n_heads", m.n_heads);
    m.context_len = j.value("context_len", m.context_len);
    m.lora_rank = j.value("lora_rank", m.lora_rank);
    m.lora_alpha = j.value("lora_alpha", m.lora_alpha);
    m.idea_hidden = j.value("idea_hidden", m.idea_hidden);
  }
  return m;
}

igt::GateConfig gate_config_from(const json& cfg) {
  igt::GateConfig g;
  if (cfg.contains("gate")) {
    const auto& j = cfg.at("gate");
    g.alpha_max = j.value("alpha_max", g.alpha_max);
    g.ramp_steps = j.value("ramp_steps", g.ramp_steps);
    g.beta = j.value("beta", g.beta);
    g.epsilon = j.value("epsilon", g.epsilon);
    g.inference_alpha = j.value("inference_alpha", g.alpha_max);
  }
  return g;
}

igt::TrainConfig train_config_from(const json& cfg) {
  igt::TrainConfig t;
  if (cfg.contains("train")) {
    const auto& j = cfg.at("train");
    t.steps = j.value("steps", t.steps);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.seq_len = j.value("seq_len", t.seq_len);
    t.adamw.lr = j.value("lr", t.adamw.lr);
    t.adamw.beta1 = j.value("beta1", t.adamw.beta1);
    t.adamw.beta2 = j.value("beta2", t.adamw.beta2);
    t.adamw.eps = j.value("adam_eps", t.adamw.eps);
    t.adamw.weight_decay = j.value("weight_decay", t.adamw.weight_decay);
    t.clip_norm = j.value("clip_norm", t.clip_norm);
    t.detach_idea_from_lora = j.value("detach_idea_from_lora", t.detach_idea_from_lora);
    t.eval_every = j.value("eval_every", t.eval_every);
    t.k = j.value("k", t.k);
    t.lambda = j.value("lambda", t.lambda);
    t.stopword_n = j.value("stopword_n", t.stopword_n);
  }
  return t;
}

igt::PretrainConfig pretrain_config_from(const json& cfg) {
  igt::PretrainConfig p;
  if (cfg.contains("pretrain")) {
    const auto& j = cfg.at("pretrain");
    p.steps = j.value("steps", p.steps);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.seq_len = j.value("seq_len", p.seq_len);
    p.adamw.lr = j.value("lr", p.adamw.lr);
    p.adamw.weight_decay = j.value("weight_decay", p.adamw.weight_decay);
    p.clip_norm = j.value("clip_norm", p.clip_norm);
    p.eval_every = j.value("eval_every", p.eval_every);
  }
  return p;
}

igt::DecodeConfig decode_config_from(const json& cfg) {
  igt::DecodeConfig d;
  if (cfg.contains("decode")) {
    const auto& j = cfg.at("decode");
    const std::string mode = j.value("mode", std::string("greedy"));
    d.mode = mode == "greedy" ? igt::DecodeMode::greedy : igt::DecodeMode::temperature;
    d.temperature = j.value("temperature", d.temperature);
    d.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
    d.repetition_penalty = j.value("repetition_penalty", d.repetition_penalty);
    d.alpha = j.value("alpha", d.alpha);
  }
  return d;
}

json snapshot(std::initializer_list<std::pair<std::string, json>> sections) {
  json j = json::object();
  for (const auto& [k, v] : sections) j[k] = v;
  return j;
}

json model_config_json(const igt::ModelConfig& m) { return json::parse(m.to_json()); }

json gate_config_json(const igt::GateConfig& g) {
  return {{"alpha_max", g.alpha_max},
          {"ramp_steps", g.ramp_steps},
          {"beta", g.beta},
          {"epsilon", g.epsilon},
          {"inference_alpha", g.inference_alpha}};
}

json train_config_json(const igt::TrainConfig& t) {
  return {{"arm", igt::arm_name(t.arm)},
          {"steps", t.steps},
          {"batch_size", t.batch_size},
          {"seq_len", t.seq_len},
          {"lr", t.adamw.lr},
          {"beta1", t.adamw.beta1},
          {"beta2", t.adamw.beta2},
          {"adam_eps", t.adamw.eps},
          {"weight_decay", t.adamw.weight_decay},
          {"clip_norm", t.clip_norm},
          {"detach_idea_from_lora", t.detach_idea_from_lora},
          {"eval_every", t.eval_every},
          {"k", t.k},
          {"lambda", t.lambda},
          {"stopword_n", t.stopword_n},
          {"seed", t.seed}};
}

// ---- subcommand implementations -------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int cmd_gen_corpus(const CommonArgs& common, std::optional<int> stopword_n) {
  json cfg = load_config(common.config_path);
  igt::CorpusSpec spec =
      cfg.contains("corpus") ? igt::CorpusSpec::from_json(cfg.at("corpus").dump())
                             : igt::default_bridge_spec();
  if (common.seed) spec.seed = *common.seed;
  spec.validate();

  igt::RunManifest manifest;
  manifest.command = "gen-corpus";
  manifest.seed = spec.seed;
  manifest.config_json = snapshot({{"corpus", json::parse(spec.to_json())}}).dump();
  manifest.outputs = {"corpus_spec.json", "corpus_train.txt", "corpus_val.txt", "vocab.json",
                      "stopwords.json"};
  igt::init_run_dir(common.out_dir, manifest, common.force);

  const igt::Corpus corpus = igt::generate_corpus(spec);
  const int n = stopword_n.value_or(igt::default_stopword_n(corpus.vocab.size()));
  const igt::StopwordList sw = igt::build_stopwords(corpus, n);
  igt::save_corpus_dir(common.out_dir, corpus, sw);
  std::cout << "corpus: " << corpus.docs.size() << " docs (" << corpus.train_docs.size()
            << " train / " << corpus.val_docs.size() << " val), vocab " << corpus.vocab.size()
            << ", stopwords " << sw.ids.size() << " -> " << common.out_dir << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& common, const std::string& data_dir,
                 std::optional<int> steps) {
  json cfg = load_config(common.config_path);
  const igt::Corpus corpus = igt::load_corpus_dir(data_dir);
  igt::ModelConfig model_cfg = model_config_from(cfg);
  if (!cfg.contains("model")) model_cfg.vocab_size = corpus.vocab.size();
  if (model_cfg.vocab_size != corpus.vocab.size()) {
    throw std::invalid_argument("pretrain: model vocab_size " +
                                std::to_string(model_cfg.vocab_size) +
                                " does not match corpus vocab " +
                                std::to_string(corpus.vocab.size()));
  }
  igt::PretrainConfig pre_cfg = pretrain_config_from(cfg);
  if (steps) pre_cfg.steps = *steps;
  if (common.seed) pre_cfg.seed = *common.seed;

  igt::RunManifest manifest;
  manifest.command = "pretrain";
  manifest.seed = pre_cfg.seed;
  manifest.config_json =
      snapshot({{"model", model_config_json(model_cfg)},
                {"pretrain",
                 {{"steps", pre_cfg.steps},
                  {"batch_size", pre_cfg.batch_size},
                  {"seq_len", pre_cfg.seq_len},
                  {"lr", pre_cfg.adamw.lr},
                  {"weight_decay", pre_cfg.adamw.weight_decay},
                  {"clip_norm", pre_cfg.clip_norm},
                  {"eval_every", pre_cfg.eval_every},
                  {"seed", pre_cfg.seed}}}})
          .dump();
  manifest.outputs = {"backbone.igt", "pretrain_log.csv", "pretrain_eval.csv"};
  igt::init_run_dir(common.out_dir, manifest, common.force);

  igt::TrainLog log;
  const igt::Model model = igt::pretrain_backbone(corpus, model_cfg, pre_cfg, &log);

  igt::CheckpointMeta meta;
  meta.model = model_cfg;
  meta.arm = "backbone";
  igt::save_checkpoint((fs::path(common.out_dir) / "backbone.igt").string(), model, meta);
  write_text_file((fs::path(common.out_dir) / "pretrain_log.csv").string(), log.steps_csv());
  write_text_file((fs::path(common.out_dir) / "pretrain_eval.csv").string(), log.evals_csv());

  const double uni = igt::unigram_val_ppl(corpus);
  const double final_ppl = log.evals.empty() ? 0.0 : log.evals.back().val_ppl;
  std::cout << "pretrain: " << pre_cfg.steps << " steps, val ppl " << final_ppl
            << " (unigram bar " << uni << ") -> " << common.out_dir << "\n";
  if (final_ppl >= uni) {
    std::cerr << "warning: backbone did not beat the unigram perplexity bar\n";
  }
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_dir,
              const std::string& backbone_path, const std::string& arm,
              std::optional<int> steps, std::optional<float> alpha,
              std::optional<float> lambda, std::optional<bool> detach) {
  json cfg = load_config(common.config_path);
  const igt::Corpus corpus = igt::load_corpus_dir(data_dir);
  const igt::LoadedCheckpoint backbone = igt::load_checkpoint(backbone_path);
  if (backbone.meta.model.vocab_size != corpus.vocab.size()) {
    throw std::invalid_argument("train: backbone vocab does not match corpus");
  }
  igt::TrainConfig train_cfg = train_config_from(cfg);
  train_cfg.arm = igt::arm_from_name(arm);
  igt::GateConfig gate = gate_config_from(cfg);
  if (steps) train_cfg.steps = *steps;
  if (common.seed) train_cfg.seed = *common.seed;
  if (alpha) {
    gate.alpha_max = *alpha;
    gate.inference_alpha = *alpha;
  }
  if (lambda) train_cfg.lambda = *lambda;
  if (detach) train_cfg.detach_idea_from_lora = *detach;

  igt::RunManifest manifest;
  manifest.command = "train";
  manifest.seed = train_cfg.seed;
  manifest.config_json = snapshot({{"model", model_config_json(backbone.meta.model)},
                                   {"gate", gate_config_json(gate)},
                                   {"train", train_config_json(train_cfg)}})
                             .dump();
  manifest.outputs = {"model.igt", "train_log.csv", "eval_log.csv"};
  igt::init_run_dir(common.out_dir, manifest, common.force);

  const igt::TrainResult result =
      igt::train_arm(corpus, backbone.model, train_cfg, gate, common.out_dir);
  std::cout << "train[" << arm << "]: " << train_cfg.steps << " steps, final val loss "
            << result.final_val_loss << " (ppl " << result.final_val_ppl << ") -> "
            << common.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt_path,
             const std::string& data_dir, std::optional<float> alpha) {
  (void)common;
  const igt::LoadedCheckpoint ckpt = igt::load_checkpoint(ckpt_path);
  const igt::Corpus corpus = igt::load_corpus_dir(data_dir);
  const float a = alpha.value_or(ckpt.model.has_idea() ? ckpt.meta.gate.inference_alpha : 0.0f);
  const igt::EvalResult r =
      igt::evaluate_ppl(ckpt.model, corpus, corpus.val_docs, a, ckpt.meta.gate);
  json j{{"checkpoint", ckpt_path},
         {"arm", ckpt.meta.arm},
         {"alpha", a},
         {"val_token_loss", r.val_token_loss},
         {"val_ppl", r.val_ppl}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_generate(const CommonArgs& common, const std::string& ckpt_path,
                 const std::string& data_dir, const std::string& prompt,
                 std::optional<float> alpha, const std::string& mode,
                 std::optional<float> temperature, std::optional<float> rho,
                 std::optional<int> max_new) {
  json cfg = load_config(common.config_path);
  const igt::LoadedCheckpoint ckpt = igt::load_checkpoint(ckpt_path);
  const igt::Vocab vocab = igt::load_vocab_json((fs::path(data_dir) / "vocab.json").string());
  igt::DecodeConfig dec = decode_config_from(cfg);
  dec.alpha = alpha.value_or(ckpt.model.has_idea() ? ckpt.meta.gate.inference_alpha : 0.0f);
  if (!mode.empty()) {
    if (mode != "greedy" && mode != "sample") {
      throw std::invalid_argument("generate: mode must be greedy|sample");
    }
    dec.mode = mode == "greedy" ? igt::DecodeMode::greedy : igt::DecodeMode::temperature;
  }
  if (temperature) dec.temperature = *temperature;
  if (rho) dec.repetition_penalty = *rho;
  if (max_new) dec.max_new_tokens = *max_new;
  if (common.seed) dec.seed = *common.seed;

  std::vector<int> ids{igt::kBosId};
  for (int id : igt::tokenize(prompt, vocab)) ids.push_back(id);
  const igt::GenerationResult gen = igt::generate(ckpt.model, ids, dec, ckpt.meta.gate);
  std::cout << prompt << " | " << igt::detokenize(gen.ids, vocab) << "\n";
  if (gen.truncated) std::cerr << "warning: generation truncated at the context limit\n";
  return 0;
}

int cmd_bench_drift(const CommonArgs& common, const std::string& baseline_path,
                    const std::string& gated_path, const std::string& data_dir, int n_prompts,
                    std::optional<float> alpha, std::optional<float> rho,
                    std::optional<int> max_new) {
  json cfg = load_config(common.config_path);
  const igt::Corpus corpus = igt::load_corpus_dir(data_dir);
  const igt::LoadedCheckpoint baseline = igt::load_checkpoint(baseline_path);
  const igt::LoadedCheckpoint gated = igt::load_checkpoint(gated_path);
  if (!gated.model.has_idea()) {
    throw std::invalid_argument("bench-drift: --gated checkpoint has no idea head");
  }
  igt::DecodeConfig dec = decode_config_from(cfg);
  dec.alpha = alpha.value_or(gated.meta.gate.inference_alpha);
  if (rho) dec.repetition_penalty = *rho;
  if (max_new) dec.max_new_tokens = *max_new;
  if (common.seed) dec.seed = *common.seed;

  igt::RunManifest manifest;
  manifest.command = "bench-drift";
  manifest.seed = dec.seed;
  manifest.config_json = snapshot({{"decode",
                                    {{"alpha", dec.alpha},
                                     {"repetition_penalty", dec.repetition_penalty},
                                     {"max_new_tokens", dec.max_new_tokens},
                                     {"n_prompts", n_prompts},
                                     {"seed", dec.seed}}}})
                             .dump();
  manifest.outputs = {"drift_report.json", "drift_table.txt"};
  igt::init_run_dir(common.out_dir, manifest, common.force);

  const igt::DriftBenchResult result = igt::run_drift_bench(
      baseline.model, gated.model, corpus.spec, corpus.vocab, n_prompts, dec,
      gated.meta.gate);
  write_text_file((fs::path(common.out_dir) / "drift_report.json").string(), result.to_json());
  write_text_file((fs::path(common.out_dir) / "drift_table.txt").string(), result.table_text());
  std::cout << "bench-drift: baseline " << result.baseline.drift_rate << " vs gated "
            << result.gated.drift_rate << " over " << result.baseline.generation_count
            << " prompts -> " << common.out_dir << "\n";
  return 0;
}

int cmd_xray(const CommonArgs& common, const std::string& ckpt_path,
             const std::string& data_dir, const std::string& prompt,
             std::optional<float> alpha, int top_k) {
  const igt::LoadedCheckpoint ckpt = igt::load_checkpoint(ckpt_path);
  const igt::Vocab vocab = igt::load_vocab_json((fs::path(data_dir) / "vocab.json").string());
  const float a = alpha.value_or(ckpt.meta.gate.inference_alpha);

  igt::RunManifest manifest;
  manifest.command = "xray";
  manifest.seed = common.seed.value_or(0);
  manifest.config_json =
      snapshot({{"xray", {{"prompt", prompt}, {"alpha", a}, {"top_k", top_k}}}}).dump();
  manifest.outputs = {"xray.json", "xray.csv"};
  igt::init_run_dir(common.out_dir, manifest, common.force);

  std::vector<int> ids{igt::kBosId};
  for (int id : igt::tokenize(prompt, vocab)) ids.push_back(id);
  const igt::XrayReport report = igt::xray(ckpt.model, vocab, ids, a, top_k, ckpt.meta.gate);
  write_text_file((fs::path(common.out_dir) / "xray.json").string(), report.to_json());
  write_text_file((fs::path(common.out_dir) / "xray.csv").string(), report.to_csv());

  std::cout << "xray: prompt '" << prompt << "' alpha " << a << "\n";
  std::cout << "boosted:";
  for (const auto& r : report.boosted) {
    std::cout << " " << r.token << " (" << static_cast<int>(r.delta_pct) << "%)";
  }
  std::cout << "\nsuppressed:";
  for (const auto& r : report.suppressed) {
    std::cout << " " << r.token << " (" << static_cast<int>(r.delta_pct) << "%)";
  }
  std::cout << "\n-> " << common.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"idea-gated transformer experiment driver"};
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->add_option("--seed", seed_value, "RNG seed")->each([&](const std::string&) {
      common.seed = seed_value;
    });
    auto* out = sub->add_option("--out", common.out_dir, "output directory");
    if (needs_out) out->required();
    sub->add_flag("--force", common.force, "overwrite an existing run directory");
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic bridge corpus");
  std::optional<int> stopword_n;
  add_common(gen, true);
  gen->add_option("--stopword-n", stopword_n, "stopword count (default max(16, 2% of V))");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "pretrain and freeze the backbone");
  std::string data_dir;
  std::optional<int> steps;
  add_common(pre, true);
  pre->add_option("--data", data_dir, "corpus directory from gen-corpus")->required();
  pre->add_option("--steps", steps, "training steps");

  // train
  auto* tr = app.add_subcommand("train", "train one experiment arm");
  std::string backbone_path, arm = "gated";
  std::optional<float> alpha, lambda;
  std::optional<bool> detach;
  add_common(tr, true);
  tr->add_option("--data", data_dir, "corpus directory")->required();
  tr->add_option("--backbone", backbone_path, "pretrained backbone checkpoint")->required();
  tr->add_option("--arm", arm, "baseline|gated")->required();
  tr->add_option("--steps", steps, "training steps");
  tr->add_option("--alpha", alpha, "terminal gate strength (alpha_max)");
  tr->add_option("--lambda", lambda, "idea loss weight");
  tr->add_option("--detach-idea", detach, "detach idea head input from LoRA stream");

  // eval
  auto* ev = app.add_subcommand("eval", "validation loss and perplexity of a checkpoint");
  std::string ckpt_path;
  add_common(ev, false);
  ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ev->add_option("--data", data_dir, "corpus directory")->required();
  ev->add_option("--alpha", alpha, "gate strength (default: checkpoint inference alpha)");

  // generate
  auto* ge = app.add_subcommand("generate", "decode a continuation for a prompt");
  std::string prompt, mode;
  std::optional<float> temperature, rho;
  std::optional<int> max_new;
  add_common(ge, false);
  ge->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ge->add_option("--data", data_dir, "corpus directory (for the vocab)")->required();
  ge->add_option("--prompt", prompt, "prompt text")->required();
  ge->add_option("--alpha", alpha, "gate strength");
  ge->add_option("--mode", mode, "greedy|sample");
  ge->add_option("--temperature", temperature, "sampling temperature");
  ge->add_option("--rho", rho, "repetition penalty");
  ge->add_option("--max-new", max_new, "tokens to generate");

  // bench-drift
  auto* bd = app.add_subcommand("bench-drift", "adversarial drift benchmark, both arms");
  std::string baseline_path, gated_path;
  int n_prompts = 200;
  add_common(bd, true);
  bd->add_option("--baseline", baseline_path, "baseline checkpoint")->required();
  bd->add_option("--gated", gated_path, "gated checkpoint")->required();
  bd->add_option("--data", data_dir, "corpus directory")->required();
  bd->add_option("--n-prompts", n_prompts, "number of trap prompts");
  bd->add_option("--alpha", alpha, "gate strength for the gated arm");
  bd->add_option("--rho", rho, "repetition penalty");
  bd->add_option("--max-new", max_new, "tokens to generate");

  // xray
  auto* xr = app.add_subcommand("xray", "per-token gate adjustment report");
  int top_k = 5;
  add_common(xr, true);
  xr->add_option("--ckpt", ckpt_path, "gated checkpoint")->required();
  xr->add_option("--data", data_dir, "corpus directory (for the vocab)")->required();
  xr->add_option("--prompt", prompt, "prompt text")->required();
  xr->add_option("--alpha", alpha, "gate strength");
  xr->add_option("--k", top_k, "entries per boosted/suppressed list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(common, stopword_n);
    if (pre->parsed()) return cmd_pretrain(common, data_dir, steps);
    if (tr->parsed()) {
      return cmd_train(common, data_dir, backbone_path, arm, steps, alpha, lambda, detach);
    }
    if (ev->parsed()) return cmd_eval(common, ckpt_path, data_dir, alpha);
    if (ge->parsed()) {
      return cmd_generate(common, ckpt_path, data_dir, prompt, alpha, mode, temperature, rho,
                          max_new);
    }
    if (bd->parsed()) {
      return cmd_bench_drift(common, baseline_path, gated_path, data_dir, n_prompts, alpha,
                             rho, max_new);
    }
    if (xr->parsed()) return cmd_xray(common, ckpt_path, data_dir, prompt, alpha, top_k);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
