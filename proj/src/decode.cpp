#include "igt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "igt/rng.hpp"
#include "json.hpp"

namespace igt {

namespace {

using nlohmann::json;

// Last row of h as a standalone [1,d] tensor; decode never needs the tape.
Tensor last_row(const Tensor& h) {
  const int t = h.dim(0), d = h.dim(1);
  std::vector<float> row(static_cast<std::size_t>(d));
  std::memcpy(row.data(), h.data() + static_cast<std::size_t>(t - 1) * d,
              sizeof(float) * static_cast<std::size_t>(d));
  return Tensor::from_vector({1, d}, std::move(row));
}

int argmax_lowest_id(std::span<const float> logits) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(logits.size()); ++j) {
    if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

int sample_from(std::span<const float> logits, float temperature, Rng& rng) {
  std::vector<float> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  const auto p = softmax_f64(scaled);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

json report_to_json_obj(const DriftReport& r) {
  json j;
  j["arm"] = r.arm;
  j["alpha"] = r.alpha;
  j["seed"] = r.seed;
  j["prompt_domain"] = r.prompt_domain;
  j["prompt_domain_name"] = r.prompt_domain_name;
  j["generation_count"] = r.generation_count;
  j["drifted_count"] = r.drifted_count;
  j["drift_rate"] = r.drift_rate;
  j["generations"] = json::array();
  for (const auto& g : r.generations) {
    j["generations"].push_back({{"prompt", g.prompt},
                                {"generation", g.generation},
                                {"trajectory", g.trajectory},
                                {"drifted", g.drifted},
                                {"truncated", g.truncated}});
  }
  return j;
}

}  // namespace

void DecodeConfig::validate() const {
  if (max_new_tokens < 1) throw std::invalid_argument("decode: max_new_tokens < 1");
  if (repetition_penalty < 1.0f) {
    throw std::invalid_argument("decode: repetition_penalty must be >= 1");
  }
  if (mode == DecodeMode::temperature && !(temperature > 0.0f)) {
    throw std::invalid_argument("decode: temperature must be > 0 when sampling");
  }
  if (alpha < 0.0f) throw std::invalid_argument("decode: alpha must be >= 0");
}

void apply_repetition_penalty(std::span<float> logits, std::span<const int> generated,
                              float rho) {
  if (rho == 1.0f) return;
  for (int id : generated) {
    if (id < 0 || id >= static_cast<int>(logits.size())) continue;
    float& z = logits[static_cast<std::size_t>(id)];
    if (z > 0.0f) {
      z /= rho;
    } else if (z < 0.0f) {
      z *= rho;
    }
  }
}

GenerationResult generate(const Model& model, std::span<const int> prompt,
                          const DecodeConfig& cfg, const GateConfig& gate) {
  cfg.validate();
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (static_cast<int>(prompt.size()) >= model.cfg.context_len) {
    throw std::invalid_argument("generate: prompt length " + std::to_string(prompt.size()) +
                                " leaves no room in context " +
                                std::to_string(model.cfg.context_len));
  }
  const bool use_gate = cfg.alpha != 0.0f;
  if (use_gate && !model.has_idea()) {
    throw std::invalid_argument("generate: alpha != 0 requires an idea head");
  }
  Rng rng(cfg.seed);
  std::vector<int> seq(prompt.begin(), prompt.end());
  GenerationResult result;
  for (int n = 0; n < cfg.max_new_tokens; ++n) {
    if (static_cast<int>(seq.size()) >= model.cfg.context_len) {
      result.truncated = true;
      break;
    }
    const Tensor h = last_row(model.forward_hidden(seq));
    Tensor z = model.token_logits(h);
    if (use_gate) {
      z = fuse(z, compute_gate(model.idea_logits(h), cfg.alpha, gate));
    }
    std::vector<float> logits(z.data(), z.data() + z.numel());
    apply_repetition_penalty(logits, result.ids, cfg.repetition_penalty);
    const int next = cfg.mode == DecodeMode::greedy
                         ? argmax_lowest_id(logits)
                         : sample_from(logits, cfg.temperature, rng);
    result.ids.push_back(next);
    seq.push_back(next);
  }
  return result;
}

// ---- drift classification -------------------------------------------------

DriftClassifier DriftClassifier::build(const CorpusSpec& spec, const Vocab& vocab) {
  DriftClassifier c;
  for (const auto& d : spec.domains) {
    c.names_.push_back(d.name);
    std::set<int> ids;
    for (const auto& w : d.content_lexicon) {
      const int id = vocab.id_of(w);
      if (id != kUnkId) ids.insert(id);
    }
    c.lexicons_.push_back(std::move(ids));
  }
  for (std::size_t d = 0; d < c.lexicons_.size(); ++d) {
    std::set<int> excl;
    for (int id : c.lexicons_[d]) {
      bool unique = true;
      for (std::size_t o = 0; o < c.lexicons_.size(); ++o) {
        if (o != d && c.lexicons_[o].contains(id)) {
          unique = false;
          break;
        }
      }
      if (unique) excl.insert(id);
    }
    c.exclusive_.push_back(std::move(excl));
  }
  for (const auto& w : spec.glue_words) {
    const int id = vocab.id_of(w);
    if (id != kUnkId) c.glue_.insert(id);
  }
  return c;
}

DriftClassifier::Verdict DriftClassifier::classify(std::span<const int> generated,
                                                   int prompt_domain, int m) const {
  if (prompt_domain < 0 || prompt_domain >= domain_count()) {
    throw std::invalid_argument("classify: bad prompt domain");
  }
  Verdict v;
  int content_seen = 0;
  for (int id : generated) {
    int member_of = -1;
    int member_count = 0;
    for (int d = 0; d < domain_count(); ++d) {
      if (lexicons_[static_cast<std::size_t>(d)].contains(id)) {
        ++member_count;
        member_of = d;
      }
    }
    std::string label;
    if (member_count == 0) {
      label = glue_.contains(id) ? "glue" : "other";
    } else if (member_count > 1) {
      label = "bridge";
    } else {
      label = names_[static_cast<std::size_t>(member_of)];
    }
    v.trajectory.push_back(label);
    if (member_count == 0) continue;
    if (content_seen >= m) continue;
    ++content_seen;
    if (member_count == 1) {
      if (member_of == prompt_domain) {
        ++v.prompt_exclusive;
      } else {
        ++v.other_exclusive;
      }
    }
  }
  v.drifted = v.other_exclusive > v.prompt_exclusive;
  return v;
}

std::vector<std::vector<int>> make_trap_prompts(const CorpusSpec& spec, const Vocab& vocab,
                                                int domain, int n, std::uint64_t seed) {
  if (domain < 0 || domain >= static_cast<int>(spec.domains.size())) {
    throw std::invalid_argument("make_trap_prompts: bad domain index");
  }
  if (spec.bridge_words.empty()) {
    throw std::invalid_argument("make_trap_prompts: corpus spec declares no bridge words");
  }
  const DomainSpec& dom = spec.domains[static_cast<std::size_t>(domain)];
  std::vector<std::string> bridges;
  for (const auto& b : spec.bridge_words) {
    if (std::find(dom.content_lexicon.begin(), dom.content_lexicon.end(), b) !=
        dom.content_lexicon.end()) {
      bridges.push_back(b);
    }
  }
  if (bridges.empty()) {
    throw std::invalid_argument("make_trap_prompts: domain '" + dom.name +
                                "' has no bridge words");
  }
  // Non-bridge words give the prompt its unambiguous domain context.
  std::vector<std::string> context_words;
  for (const auto& w : dom.content_lexicon) {
    if (std::find(spec.bridge_words.begin(), spec.bridge_words.end(), w) ==
        spec.bridge_words.end()) {
      context_words.push_back(w);
    }
  }
  if (context_words.empty()) {
    throw std::invalid_argument("make_trap_prompts: domain '" + dom.name +
                                "' has only bridge words");
  }
  // Templates need two content slots: context then trap.
  std::vector<std::vector<std::string>> usable;
  for (const auto& t : dom.templates) {
    std::vector<std::string> words;
    std::istringstream is(t);
    std::string w;
    int slots = 0;
    while (is >> w) {
      if (w == "{w}") ++slots;
      words.push_back(w);
    }
    if (slots >= 2) usable.push_back(std::move(words));
  }
  if (usable.empty()) {
    throw std::invalid_argument("make_trap_prompts: domain '" + dom.name +
                                "' has no template with two content slots");
  }

  Rng rng(seed);
  std::vector<std::vector<int>> prompts;
  prompts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& tmpl = usable[static_cast<std::size_t>(rng.uniform_int(
        static_cast<int>(usable.size())))];
    int slots = 0;
    for (const auto& w : tmpl) slots += w == "{w}" ? 1 : 0;
    // Trap slot index within the template's slots, never the first.
    const int trap_slot = 1 + rng.uniform_int(slots - 1);
    std::vector<int> ids{kBosId};
    int seen = 0;
    for (const auto& w : tmpl) {
      if (w == "{w}") {
        if (seen == trap_slot) {
          ids.push_back(vocab.id_of(bridges[static_cast<std::size_t>(
              rng.uniform_int(static_cast<int>(bridges.size())))]));
          ++seen;
          break;
        }
        ids.push_back(vocab.id_of(context_words[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(context_words.size())))]));
        ++seen;
      } else {
        ids.push_back(vocab.id_of(w));
      }
    }
    prompts.push_back(std::move(ids));
  }
  return prompts;
}

// ---- benchmark --------------------------------------------------------------

std::string DriftReport::to_json() const { return report_to_json_obj(*this).dump(2); }

DriftReport run_drift_arm(const Model& model, const std::string& arm,
                          const std::vector<std::vector<int>>& prompts, int prompt_domain,
                          const CorpusSpec& spec, const Vocab& vocab,
                          const DecodeConfig& cfg, const GateConfig& gate) {
  const DriftClassifier classifier = DriftClassifier::build(spec, vocab);
  DriftReport report;
  report.arm = arm;
  report.alpha = cfg.alpha;
  report.seed = cfg.seed;
  report.prompt_domain = prompt_domain;
  report.prompt_domain_name = classifier.domain_name(prompt_domain);
  for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
    DecodeConfig gen_cfg = cfg;
    gen_cfg.seed = cfg.seed ^ (0x9e3779b97f4a7c15ULL * (pi + 1));
    const GenerationResult gen = generate(model, prompts[pi], gen_cfg, gate);
    const auto verdict = classifier.classify(gen.ids, prompt_domain, 20);
    GenerationReport gr;
    // Drop the BOS marker from the rendered prompt.
    gr.prompt = detokenize(std::span<const int>(prompts[pi].data() + 1,
                                                prompts[pi].size() - 1),
                           vocab);
    gr.generation = detokenize(gen.ids, vocab);
    gr.trajectory = verdict.trajectory;
    gr.drifted = verdict.drifted;
    gr.truncated = gen.truncated;
    report.drifted_count += verdict.drifted ? 1 : 0;
    report.generations.push_back(std::move(gr));
  }
  report.generation_count = static_cast<int>(report.generations.size());
  report.drift_rate = report.generation_count == 0
                          ? 0.0
                          : static_cast<double>(report.drifted_count) /
                                static_cast<double>(report.generation_count);
  return report;
}

DriftBenchResult run_drift_bench(const Model& baseline, const Model& gated,
                                 const CorpusSpec& spec, const Vocab& vocab, int n_prompts,
                                 const DecodeConfig& cfg, const GateConfig& gate) {
  if (spec.bridge_words.empty()) {
    throw std::invalid_argument("run_drift_bench: corpus spec declares no bridge words");
  }
  // Prompt domain: first domain containing a bridge word.
  int domain = -1;
  for (std::size_t d = 0; d < spec.domains.size() && domain < 0; ++d) {
    for (const auto& b : spec.bridge_words) {
      const auto& lex = spec.domains[d].content_lexicon;
      if (std::find(lex.begin(), lex.end(), b) != lex.end()) {
        domain = static_cast<int>(d);
        break;
      }
    }
  }
  const auto prompts = make_trap_prompts(spec, vocab, domain, n_prompts, cfg.seed);
  DecodeConfig baseline_cfg = cfg;
  baseline_cfg.alpha = 0.0f;
  DriftBenchResult result;
  result.baseline = run_drift_arm(baseline, "baseline", prompts, domain, spec, vocab,
                                  baseline_cfg, gate);
  result.gated = run_drift_arm(gated, "gated", prompts, domain, spec, vocab, cfg, gate);
  return result;
}

std::string DriftBenchResult::to_json() const {
  json j;
  j["baseline"] = report_to_json_obj(baseline);
  j["gated"] = report_to_json_obj(gated);
  j["comparison"] = {
      {"baseline_drift_rate", baseline.drift_rate},
      {"gated_drift_rate", gated.drift_rate},
      {"ratio", baseline.drift_rate > 0.0 ? gated.drift_rate / baseline.drift_rate : 0.0}};
  return j.dump(2);
}

std::string DriftBenchResult::table_text(int max_rows) const {
  std::ostringstream os;
  const int w = 58;
  auto cell = [&](std::string s) {
    if (static_cast<int>(s.size()) > w - 2) s = s.substr(0, static_cast<std::size_t>(w - 5)) + "...";
    s.resize(static_cast<std::size_t>(w - 2), ' ');
    return s;
  };
  os << std::string(2 * w + 3, '=') << '\n';
  os << "| " << cell("baseline (LoRA)") << "| " << cell("idea-gated") << "|\n";
  os << std::string(2 * w + 3, '-') << '\n';
  const int rows = std::min<int>({max_rows, static_cast<int>(baseline.generations.size()),
                                  static_cast<int>(gated.generations.size())});
  for (int i = 0; i < rows; ++i) {
    const auto& b = baseline.generations[static_cast<std::size_t>(i)];
    const auto& g = gated.generations[static_cast<std::size_t>(i)];
    os << "| " << cell("prompt: " + b.prompt) << "| " << cell("prompt: " + g.prompt) << "|\n";
    os << "| " << cell((b.drifted ? "[DRIFT] " : "[ok]    ") + b.generation) << "| "
       << cell((g.drifted ? "[DRIFT] " : "[ok]    ") + g.generation) << "|\n";
    os << std::string(2 * w + 3, '-') << '\n';
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "baseline drift_rate: %.4f (%d/%d)\n",
                baseline.drift_rate, baseline.drifted_count, baseline.generation_count);
  os << buf;
  std::snprintf(buf, sizeof(buf), "gated    drift_rate: %.4f (%d/%d)\n", gated.drift_rate,
                gated.drifted_count, gated.generation_count);
  os << buf;
  return os.str();
}

}  // namespace igt
