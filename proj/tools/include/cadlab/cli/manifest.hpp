#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cadlab::cli {

inline constexpr const char* kManifestFormat = "cadlab-manifest/1";
inline constexpr const char* kManifestFile = "manifest.json";

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

/// The run's manifest.json: config snapshot, file inventory with digests and an
/// append-only list of command entries.
class Manifest {
 public:
  static Manifest create(const std::filesystem::path& run_dir, const std::string& run_name, std::uint64_t seed,
                         const nlohmann::json& config_snapshot);
  static Manifest load(const std::filesystem::path& run_dir);

  /// Hashes each output (paths relative to the run directory), records them in the
  /// inventory and appends one entry. Files already in the inventory are rejected.
  void add_entry(const std::string& command, const nlohmann::json& parameters,
                 const std::vector<std::string>& outputs);
  void set_field(const std::string& key, const nlohmann::json& value);
  void save() const;

  const nlohmann::json& json() const { return doc_; }
  const std::filesystem::path& run_dir() const { return dir_; }
  std::optional<std::string> digest_of(const std::string& relative) const;

  /// Files whose current digest differs from the inventory, or that are missing.
  std::vector<std::string> verify() const;

 private:
  std::filesystem::path dir_;
  nlohmann::json doc_;
};

}  // namespace cadlab::cli
