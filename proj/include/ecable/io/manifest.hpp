#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ecable/error.hpp"

namespace ecable::io {

#ifdef ECABLE_VERSION
inline constexpr const char* kToolVersion = ECABLE_VERSION;
#else
inline constexpr const char* kToolVersion = "unknown";
#endif

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

struct ManifestEntry {
  std::string file;  // relative to the output directory
  std::string hash;
};

/// Everything needed to rerun a subcommand: the normalized config (which already holds
/// the seed), the directory relative paths resolve against, and hashes of inputs/outputs.
struct Manifest {
  std::string tool = "ecable";
  std::string version = kToolVersion;
  std::string command;
  std::string config;  // normalized YAML
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string base_dir;
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tool"] = tool;
    j["version"] = version;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["base_dir"] = base_dir;
    j["config"] = config;
    auto entries = [](const std::vector<ManifestEntry>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& e : v) a.push_back({{"file", e.file}, {"fnv1a", e.hash}});
      return a;
    };
    j["inputs"] = entries(inputs);
    j["outputs"] = entries(outputs);
    return j;
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    try {
      m.tool = j.at("tool").get<std::string>();
      m.version = j.at("version").get<std::string>();
      m.command = j.at("command").get<std::string>();
      m.config_hash = j.at("config_hash").get<std::string>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.base_dir = j.at("base_dir").get<std::string>();
      m.config = j.at("config").get<std::string>();
      for (const auto& e : j.at("inputs")) m.inputs.push_back({e.at("file"), e.at("fnv1a")});
      for (const auto& e : j.at("outputs")) m.outputs.push_back({e.at("file"), e.at("fnv1a")});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data, std::string("malformed manifest: ") + e.what());
    }
    return m;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }

  static Manifest read(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
      return from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::data, path.string() + ": " + e.what());
    }
  }
};

}  // namespace ecable::io
