#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "igt/corpus.hpp"
#include "igt/tensor.hpp"

namespace igt {

// Multi-hot target for one position: the unique token ids occurring in the
// next-K window. Positions whose window is empty are flagged invalid and
// excluded from the idea loss.
struct IdeaTarget {
  std::vector<int> ids;  // sorted unique
  bool valid = false;
};

struct LossWeights {
  float lambda = 1.0f;
};

// Targets for positions 0..T-2 of the sequence; the window at position t is
// tokens[t+1 .. min(t+k, T-1)], clipped at the end of the sequence.
std::vector<IdeaTarget> build_targets(std::span<const int> tokens, int k, int vocab_size);

// Dense [rows, v] 0/1 tensor view of targets, plus per-row validity flags.
Tensor targets_to_tensor(const std::vector<IdeaTarget>& targets, int vocab_size);
std::vector<std::uint8_t> target_validity(const std::vector<IdeaTarget>& targets);

// Complement of the stopword set as a 0/1 tensor of width v.
Tensor stopword_mask(const StopwordList& stopwords, int vocab_size);

struct LossParts {
  Tensor total;
  Tensor token;
  Tensor idea;
};

// L_token = mean CE(z_final[t], next_tokens[t]) over positions,
// L_idea  = mean masked BCE(z_idea[t], y[t]) over valid positions,
// L_total = L_token + lambda * L_idea.
// z_final/z_idea are [T,V]; next_tokens and targets cover positions 0..T-2.
// With no valid idea positions L_idea is 0 and a warning is printed.
LossParts total_loss(const Tensor& z_final, const Tensor& z_idea,
                     std::span<const int> next_tokens,
                     const std::vector<IdeaTarget>& targets,
                     const StopwordList& stopwords, const LossWeights& weights);

}  // namespace igt
