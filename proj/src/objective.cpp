#include "igt/objective.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

namespace igt {

std::vector<IdeaTarget> build_targets(std::span<const int> tokens, int k, int vocab_size) {
  if (k < 1) throw std::invalid_argument("build_targets: k must be >= 1");
  const int t_len = static_cast<int>(tokens.size());
  std::vector<IdeaTarget> out;
  if (t_len < 2) return out;  // no position has a next token
  out.resize(static_cast<std::size_t>(t_len - 1));
  for (int t = 0; t <= t_len - 2; ++t) {
    const int w_begin = t + 1;
    const int w_end = std::min(t + k, t_len - 1);  // inclusive
    auto& tgt = out[static_cast<std::size_t>(t)];
    if (w_end < w_begin) continue;  // empty window, stays invalid
    tgt.valid = true;
    tgt.ids.assign(tokens.begin() + w_begin, tokens.begin() + w_end + 1);
    std::sort(tgt.ids.begin(), tgt.ids.end());
    tgt.ids.erase(std::unique(tgt.ids.begin(), tgt.ids.end()), tgt.ids.end());
    for (int id : tgt.ids) {
      if (id < 0 || id >= vocab_size) {
        throw std::out_of_range("build_targets: token id " + std::to_string(id) +
                                " outside vocab " + std::to_string(vocab_size));
      }
    }
  }
  return out;
}

Tensor targets_to_tensor(const std::vector<IdeaTarget>& targets, int vocab_size) {
  const int rows = static_cast<int>(targets.size());
  Tensor y = Tensor::zeros({rows, vocab_size});
  float* yd = y.data();
  for (int i = 0; i < rows; ++i) {
    if (!targets[static_cast<std::size_t>(i)].valid) continue;
    for (int id : targets[static_cast<std::size_t>(i)].ids) {
      yd[static_cast<std::size_t>(i) * vocab_size + id] = 1.0f;
    }
  }
  return y;
}

std::vector<std::uint8_t> target_validity(const std::vector<IdeaTarget>& targets) {
  std::vector<std::uint8_t> valid(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) valid[i] = targets[i].valid ? 1 : 0;
  return valid;
}

Tensor stopword_mask(const StopwordList& stopwords, int vocab_size) {
  Tensor mask = Tensor::full({vocab_size}, 1.0f);
  float* md = mask.data();
  for (int id : stopwords.ids) {
    if (id >= 0 && id < vocab_size) md[id] = 0.0f;
  }
  return mask;
}

LossParts total_loss(const Tensor& z_final, const Tensor& z_idea,
                     std::span<const int> next_tokens,
                     const std::vector<IdeaTarget>& targets,
                     const StopwordList& stopwords, const LossWeights& weights) {
  if (weights.lambda < 0.0f) throw std::invalid_argument("total_loss: lambda must be >= 0");
  if (z_final.rank() != 2 || z_idea.rank() != 2 || z_final.shape() != z_idea.shape()) {
    throw std::invalid_argument("total_loss: z_final and z_idea must share shape [T,V]");
  }
  if (targets.size() != next_tokens.size()) {
    throw std::invalid_argument("total_loss: targets/next_tokens length mismatch");
  }
  const int v = z_final.dim(1);

  LossParts parts;
  parts.token = cross_entropy_rows(z_final, next_tokens);

  const auto valid = target_validity(targets);
  const bool any_valid = std::any_of(valid.begin(), valid.end(), [](auto f) { return f != 0; });
  if (!any_valid) {
    std::cerr << "warning: no valid idea positions, idea loss set to 0\n";
    parts.idea = Tensor::scalar(0.0f);
    parts.total = parts.token;
    return parts;
  }
  const Tensor y = targets_to_tensor(targets, v);
  const Tensor mask = stopword_mask(stopwords, v);
  parts.idea = bce_with_logits_rows(z_idea, y, mask, valid);
  if (weights.lambda == 0.0f) {
    parts.total = parts.token;  // exact equality, idea term detached
  } else {
    parts.total = add(parts.token, mul_scalar(parts.idea, weights.lambda));
  }
  return parts;
}

}  // namespace igt
