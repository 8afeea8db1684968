#include "igt/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace igt {

const char* version_string() { return "igt-0.1.0"; }

void init_run_dir(const std::string& out_dir, const RunManifest& manifest, bool force) {
  namespace fs = std::filesystem;
  if (out_dir.empty()) throw std::invalid_argument("output directory not set");
  const fs::path dir(out_dir);
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    throw std::invalid_argument("output directory '" + out_dir +
                                "' already holds a run (use --force to overwrite)");
  }
  fs::create_directories(dir);
  nlohmann::json j;
  j["version"] = version_string();
  j["command"] = manifest.command;
  j["seed"] = manifest.seed;
  j["config"] = nlohmann::json::parse(manifest.config_json);
  j["outputs"] = manifest.outputs;
  std::ofstream f(manifest_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + manifest_path.string());
  f << j.dump(2) << '\n';
}

}  // namespace igt
