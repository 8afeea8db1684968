#include "igt/xray.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "json.hpp"

namespace igt {

namespace {

using nlohmann::json;

json row_to_json(const XrayRow& r) {
  return {{"id", r.id},           {"token", r.token},
          {"p_base", r.p_base},   {"p_gated", r.p_gated},
          {"delta_pct", r.delta_pct}, {"gate_value", r.gate_value}};
}

}  // namespace

XrayReport xray(const Model& model, const Vocab& vocab, std::span<const int> prompt_ids,
                float alpha_star, int top_k, const GateConfig& gate_cfg) {
  if (prompt_ids.empty()) throw std::invalid_argument("xray: empty prompt");
  if (!model.has_idea()) throw std::invalid_argument("xray: model has no idea head");
  if (alpha_star < 0.0f) throw std::invalid_argument("xray: alpha must be >= 0");
  if (top_k < 1) throw std::invalid_argument("xray: top_k must be >= 1");

  const Tensor h_all = model.forward_hidden(prompt_ids);
  const int t = h_all.dim(0), d = h_all.dim(1);
  std::vector<float> row(static_cast<std::size_t>(d));
  std::memcpy(row.data(), h_all.data() + static_cast<std::size_t>(t - 1) * d,
              sizeof(float) * static_cast<std::size_t>(d));
  const Tensor h = Tensor::from_vector({1, d}, std::move(row));

  const Tensor z_token = model.token_logits(h);
  const Tensor gate = compute_gate(model.idea_logits(h), alpha_star, gate_cfg);
  const Tensor z_final = fuse(z_token, gate);

  const auto p_base = softmax_f64(z_token.values());
  const auto p_gated = softmax_f64(z_final.values());

  XrayReport report;
  report.prompt = detokenize(prompt_ids, vocab);
  report.alpha = alpha_star;
  report.top_k = top_k;
  const int v = model.cfg.vocab_size;
  report.rows.resize(static_cast<std::size_t>(v));
  for (int j = 0; j < v; ++j) {
    XrayRow& r = report.rows[static_cast<std::size_t>(j)];
    r.id = j;
    r.token = vocab.token_of(j);
    r.p_base = p_base[static_cast<std::size_t>(j)];
    r.p_gated = p_gated[static_cast<std::size_t>(j)];
    r.gate_value = gate.data()[j];
    r.delta_pct = r.p_base > 0.0 ? (r.p_gated - r.p_base) / r.p_base * 100.0 : 0.0;
  }

  std::vector<XrayRow> sorted = report.rows;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const XrayRow& a, const XrayRow& b) { return a.delta_pct > b.delta_pct; });
  for (const auto& r : sorted) {
    if (r.delta_pct > 0.0 && static_cast<int>(report.boosted.size()) < top_k) {
      report.boosted.push_back(r);
    }
  }
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    if (it->delta_pct < 0.0 && static_cast<int>(report.suppressed.size()) < top_k) {
      report.suppressed.push_back(*it);
    }
  }
  return report;
}

std::string XrayReport::to_json() const {
  json j;
  j["prompt"] = prompt;
  j["alpha"] = alpha;
  j["top_k"] = top_k;
  j["rows"] = json::array();
  for (const auto& r : rows) j["rows"].push_back(row_to_json(r));
  j["boosted"] = json::array();
  for (const auto& r : boosted) j["boosted"].push_back(row_to_json(r));
  j["suppressed"] = json::array();
  for (const auto& r : suppressed) j["suppressed"].push_back(row_to_json(r));
  return j.dump(2);
}

std::string XrayReport::to_csv() const {
  std::string out = "token,p_base,p_gated,delta_pct,gate_value\n";
  char buf[192];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", r.token.c_str(), r.p_base,
                  r.p_gated, r.delta_pct, static_cast<double>(r.gate_value));
    out += buf;
  }
  return out;
}

}  // namespace igt
