#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace igt {

const char* version_string();

// Snapshot written to <out>/manifest.json before a command does any work.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_json = "{}";     // merged config of the run
  std::vector<std::string> outputs;   // artifact files the command will write
};

// Creates out_dir and writes the manifest. Refuses to reuse a directory
// that already contains a manifest unless force is set.
void init_run_dir(const std::string& out_dir, const RunManifest& manifest, bool force);

}  // namespace igt
