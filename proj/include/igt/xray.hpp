#pragma once

#include <span>
#include <string>
#include <vector>

#include "igt/corpus.hpp"
#include "igt/gate.hpp"
#include "igt/model.hpp"

namespace igt {

struct XrayRow {
  int id = 0;
  std::string token;
  double p_base = 0.0;    // softmax prob with the gate off
  double p_gated = 0.0;   // softmax prob at alpha_star
  double delta_pct = 0.0; // (p_gated - p_base) / p_base * 100
  float gate_value = 0.0f;
};

// Per-token gate adjustment analysis at the final prompt position. Both
// distributions come from one forward pass; boosted is sorted by
// descending delta_pct, suppressed by ascending.
struct XrayReport {
  std::string prompt;
  float alpha = 0.0f;
  int top_k = 0;
  std::vector<XrayRow> rows;       // all vocabulary entries, by id
  std::vector<XrayRow> boosted;    // delta_pct > 0
  std::vector<XrayRow> suppressed; // delta_pct < 0

  std::string to_json() const;
  std::string to_csv() const;  // token,p_base,p_gated,delta_pct,gate_value
};

XrayReport xray(const Model& model, const Vocab& vocab, std::span<const int> prompt_ids,
                float alpha_star, int top_k, const GateConfig& gate);

}  // namespace igt
