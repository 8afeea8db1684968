#include "igt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "igt/rng.hpp"
#include "json.hpp"

namespace igt {

namespace {

constexpr char kMagic[4] = {'I', 'G', 'T', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32_payload(std::ostream& os, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    write_u32(os, bits);
  }
}

void read_f32_payload(std::istream& is, float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = read_u32(is);
    std::memcpy(&data[i], &bits, 4);
  }
}

}  // namespace

std::string CheckpointMeta::to_json() const {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model.to_json());
  j["gate"] = {{"alpha_max", gate.alpha_max},
               {"ramp_steps", gate.ramp_steps},
               {"beta", gate.beta},
               {"epsilon", gate.epsilon},
               {"inference_alpha", gate.inference_alpha}};
  j["arm"] = arm;
  j["k"] = k;
  return j.dump();
}

CheckpointMeta CheckpointMeta::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CheckpointMeta meta;
  meta.model = ModelConfig::from_json(j.at("model").dump());
  const auto& g = j.at("gate");
  meta.gate.alpha_max = g.at("alpha_max").get<float>();
  meta.gate.ramp_steps = g.at("ramp_steps").get<int>();
  meta.gate.beta = g.at("beta").get<float>();
  meta.gate.epsilon = g.at("epsilon").get<float>();
  meta.gate.inference_alpha = g.at("inference_alpha").get<float>();
  meta.arm = j.at("arm").get<std::string>();
  meta.k = j.at("k").get<int>();
  if (meta.arm != "backbone" && meta.arm != "baseline" && meta.arm != "gated") {
    throw std::runtime_error("checkpoint: unknown arm '" + meta.arm + "'");
  }
  return meta;
}

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, 4);
  const std::string header = meta.to_json();
  write_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : model.named_tensors()) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    write_f32_payload(os, t.data(), t.numel());
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t header_len = read_u32(is);
  std::string header(header_len, '\0');
  is.read(header.data(), header_len);
  if (!is) throw std::runtime_error("checkpoint: truncated header in " + path);
  LoadedCheckpoint loaded;
  loaded.meta = CheckpointMeta::from_json(header);

  std::map<std::string, Tensor> tensors;
  for (;;) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t e = read_u32(is);
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    Tensor t(shape);
    read_f32_payload(is, t.data(), numel);
    if (!tensors.emplace(name, t).second) {
      throw std::runtime_error("checkpoint: duplicate tensor '" + name + "' in " + path);
    }
  }

  // Assemble a model shell with the checkpoint's structure, then fill it.
  Rng dummy(0);
  Model m = Model::init_backbone(loaded.meta.model, dummy);
  if (tensors.contains("lora.0.q.a")) m.attach_lora(dummy);
  if (tensors.contains("idea.proj.w")) m.attach_idea_head(dummy, loaded.meta.k);
  for (auto& [name, t] : m.named_tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw std::runtime_error("checkpoint: missing tensor '" + name + "' in " + path);
    }
    if (it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(it->second.shape()) + " vs model " +
                               shape_str(t.shape()));
    }
    std::memcpy(t.data(), it->second.data(), sizeof(float) * t.numel());
    tensors.erase(it);
  }
  if (!tensors.empty()) {
    throw std::runtime_error("checkpoint: unexpected tensor '" + tensors.begin()->first +
                             "' in " + path);
  }
  m.freeze_backbone();
  loaded.model = std::move(m);
  return loaded;
}

std::uint64_t hash_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV offset basis
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    mix_bytes(name.data(), name.size());
    mix_bytes(t.data(), sizeof(float) * t.numel());
  }
  return h;
}

}  // namespace igt
