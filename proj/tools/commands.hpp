// SPDX-License-Identifier: Apache-2.0
// Subcommands of the latcert command line tool.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace latcert::cli {

inline constexpr const char* kVersion = "latcert 0.1.0";

/// Bad or missing configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  nlohmann::json doc = nlohmann::json::object();
  /// Directory that relative paths in the config resolve against.
  std::filesystem::path base_dir;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = ".";
  unsigned jobs = 1;
  /// Include wall-clock columns; off by default so reruns are byte-identical.
  bool timing = false;
};

/// Reads the JSON config (empty path gives an empty object).
RunConfig load_run_config(const std::string& config_path);

/// FNV-1a 64 over the canonical config text and the effective seed.
std::uint64_t config_hash(const nlohmann::json& doc, std::optional<std::uint64_t> seed);

nlohmann::json provenance(const RunConfig& cfg);

/// Each returns the process exit code.
int cmd_gen_synthetic(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_directions(const RunConfig& cfg);
int cmd_certify(const RunConfig& cfg);
int cmd_protocols(const RunConfig& cfg);
int cmd_report(const RunConfig& cfg);

}  // namespace latcert::cli
