#include "manifest.hpp"

#include <array>
#include <fstream>
#include <memory>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "crowdmf/error.hpp"

namespace crowdmf::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}' for hashing", path.string()));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest initialisation failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex;
  for (unsigned int k = 0; k < len; ++k) hex += fmt::format("{:02x}", md[k]);
  return hex;
}

namespace {

nlohmann::ordered_json records_json(const std::vector<FileRecord>& records) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : records) arr.push_back({{"path", r.path}, {"sha256", r.sha256}});
  return arr;
}

std::vector<FileRecord> records_from(const nlohmann::json& j) {
  std::vector<FileRecord> out;
  for (const auto& r : j) out.push_back({r.at("path").get<std::string>(), r.at("sha256").get<std::string>()});
  return out;
}

}  // namespace

nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.parameters) params[k] = v;
  return {{"format", "crowdmf-manifest-v1"},
          {"subcommand", m.subcommand},
          {"config_file", m.config_file},
          {"seed", m.seed},
          {"parameters", params},
          {"output_dir", m.output_dir},
          {"inputs", records_json(m.inputs)},
          {"outputs", records_json(m.outputs)}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "crowdmf-manifest-v1")
    throw DataError("manifest: unrecognised or missing 'format'");
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.config_file = j.value("config_file", "");
  m.seed = j.value("seed", "");
  for (const auto& [k, v] : j.at("parameters").items())
    m.parameters[k] = v.get<std::vector<std::string>>();
  m.output_dir = j.value("output_dir", "");
  m.inputs = records_from(j.at("inputs"));
  m.outputs = records_from(j.at("outputs"));
  return m;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write manifest '{}'", path.string()));
  out << to_json(m).dump(2) << '\n';
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open manifest '{}'", path.string()));
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: malformed manifest: {}", path.string(), e.what()));
  }
}

}  // namespace crowdmf::cli
