#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "igt/corpus.hpp"
#include "igt/gate.hpp"
#include "igt/model.hpp"

namespace igt {

enum class DecodeMode { greedy, temperature };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  float temperature = 0.8f;
  int max_new_tokens = 30;
  float repetition_penalty = 1.2f;  // rho; 1 disables
  float alpha = 0.5f;               // gate strength at inference
  std::uint64_t seed = 0;

  void validate() const;
};

struct GenerationResult {
  std::vector<int> ids;    // generated continuation, prompt excluded
  bool truncated = false;  // hit the context limit before max_new_tokens
};

// CTRL-style penalty over already-generated ids: positive logits are
// divided by rho, negative ones multiplied. Sign is preserved.
void apply_repetition_penalty(std::span<float> logits, std::span<const int> generated,
                              float rho);

// Autoregressive decoding with the gate fused at cfg.alpha (requires an
// idea head unless alpha is 0). Greedy mode and seeded sampling are both
// deterministic.
GenerationResult generate(const Model& model, std::span<const int> prompt,
                          const DecodeConfig& cfg, const GateConfig& gate);

// Lexicon-membership classifier for drift detection. A token is exclusive
// to a domain when it appears in that domain's lexicon only.
class DriftClassifier {
 public:
  static DriftClassifier build(const CorpusSpec& spec, const Vocab& vocab);

  struct Verdict {
    bool drifted = false;
    int prompt_exclusive = 0;
    int other_exclusive = 0;
    std::vector<std::string> trajectory;  // per generated token
  };

  // Counts exclusive-domain members among the first m content tokens;
  // drifted when strictly more belong to non-prompt domains.
  Verdict classify(std::span<const int> generated, int prompt_domain, int m) const;

  int domain_count() const { return static_cast<int>(names_.size()); }
  const std::string& domain_name(int d) const { return names_[static_cast<std::size_t>(d)]; }
  const std::set<int>& exclusive_ids(int d) const {
    return exclusive_[static_cast<std::size_t>(d)];
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::set<int>> lexicons_;   // all content ids per domain
  std::vector<std::set<int>> exclusive_;  // ids unique to the domain
  std::set<int> glue_;
};

// Adversarial trap prompts: domain-template instantiations truncated right
// after a content slot forced to a bridge word, with at least one
// domain-exclusive word before it. BOS-prefixed token ids.
std::vector<std::vector<int>> make_trap_prompts(const CorpusSpec& spec, const Vocab& vocab,
                                                int domain, int n, std::uint64_t seed);

struct GenerationReport {
  std::string prompt;
  std::string generation;
  std::vector<std::string> trajectory;
  bool drifted = false;
  bool truncated = false;
};

struct DriftReport {
  std::string arm;
  float alpha = 0.0f;
  std::uint64_t seed = 0;
  int prompt_domain = 0;
  std::string prompt_domain_name;
  int generation_count = 0;
  int drifted_count = 0;
  double drift_rate = 0.0;
  std::vector<GenerationReport> generations;

  std::string to_json() const;
};

// One arm of the benchmark over a fixed prompt list.
DriftReport run_drift_arm(const Model& model, const std::string& arm,
                          const std::vector<std::vector<int>>& prompts, int prompt_domain,
                          const CorpusSpec& spec, const Vocab& vocab,
                          const DecodeConfig& cfg, const GateConfig& gate);

struct DriftBenchResult {
  DriftReport baseline;
  DriftReport gated;

  std::string to_json() const;
  // Two-column text rendering of sample generations plus the rates.
  std::string table_text(int max_rows = 10) const;
};

// Runs both arms on identical trap prompts (domain 0 by default: the first
// domain containing a bridge word). The baseline arm decodes ungated.
DriftBenchResult run_drift_bench(const Model& baseline, const Model& gated,
                                 const CorpusSpec& spec, const Vocab& vocab, int n_prompts,
                                 const DecodeConfig& cfg, const GateConfig& gate);

}  // namespace igt
