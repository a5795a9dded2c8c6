#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace crowdmf::cli {

std::string sha256_file(const std::filesystem::path& path);

struct FileRecord {
  std::string path;  // outputs: relative to the output directory
  std::string sha256;
};

struct RunManifest {
  std::string subcommand;
  std::string config_file;  // empty when none was given
  // Every option of the subcommand after config and flag resolution, each as
  // the list of raw values it was parsed from.
  std::map<std::string, std::vector<std::string>> parameters;
  std::string seed;  // empty for subcommands without randomness
  std::string output_dir;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
};

nlohmann::ordered_json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace crowdmf::cli
