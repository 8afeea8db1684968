#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "igt/gate.hpp"
#include "igt/model.hpp"

namespace igt {

// Checkpoint metadata stored in the header JSON. "arm" is one of
// "backbone", "baseline", "gated".
struct CheckpointMeta {
  ModelConfig model;
  GateConfig gate;
  std::string arm = "backbone";
  int k = 20;

  std::string to_json() const;
  static CheckpointMeta from_json(const std::string& text);
};

// IGT1 container: magic "IGT1", u32 json length + json, then named tensors
// as (u32 name length, name, u32 rank, u32 extents, little-endian f32
// payload) until end of file. Save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;  // backbone frozen; lora/idea trainable when present
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// FNV-1a over the raw f32 bytes of the named tensors, in order. Used to
// verify frozen weights are untouched by training.
std::uint64_t hash_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace igt
