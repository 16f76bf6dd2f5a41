#include "cadlab/cli/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

#include "cadlab/cli/csv_io.hpp"
#include "cadlab/version.hpp"

namespace cadlab::cli {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < length; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Manifest Manifest::create(const std::filesystem::path& run_dir, const std::string& run_name, std::uint64_t seed,
                          const nlohmann::json& config_snapshot) {
  Manifest m;
  m.dir_ = run_dir;
  m.doc_ = {
      {"format", kManifestFormat},
      {"run", run_name},
      {"code_version", kVersion},
      {"seed", seed},
      {"created", utc_timestamp()},
      {"config", config_snapshot},
      {"files", nlohmann::json::object()},
      {"entries", nlohmann::json::array()},
  };
  return m;
}

Manifest Manifest::load(const std::filesystem::path& run_dir) {
  const auto path = run_dir / kManifestFile;
  if (!std::filesystem::exists(path)) throw std::runtime_error("no manifest at " + path.string());
  Manifest m;
  m.dir_ = run_dir;
  try {
    m.doc_ = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest " + path.string() + ": " + e.what());
  }
  if (m.doc_.value("format", "") != kManifestFormat) {
    throw std::runtime_error("manifest " + path.string() + ": unsupported format");
  }
  return m;
}

void Manifest::add_entry(const std::string& command, const nlohmann::json& parameters,
                         const std::vector<std::string>& outputs) {
  auto& files = doc_["files"];
  nlohmann::json listed = nlohmann::json::array();
  for (const auto& rel : outputs) {
    if (files.contains(rel)) throw std::runtime_error("manifest: " + rel + " is already recorded");
    const auto path = dir_ / rel;
    files[rel] = {{"sha256", sha256_file(path)},
                  {"bytes", std::filesystem::file_size(path)},
                  {"command", command}};
    listed.push_back(rel);
  }
  doc_["entries"].push_back({{"command", command},
                             {"timestamp", utc_timestamp()},
                             {"parameters", parameters},
                             {"outputs", listed}});
}

void Manifest::set_field(const std::string& key, const nlohmann::json& value) { doc_[key] = value; }

void Manifest::save() const {
  const auto path = dir_ / kManifestFile;
  const auto tmp = dir_ / (std::string(kManifestFile) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << doc_.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::optional<std::string> Manifest::digest_of(const std::string& relative) const {
  const auto& files = doc_.at("files");
  if (!files.contains(relative)) return std::nullopt;
  return files.at(relative).at("sha256").get<std::string>();
}

std::vector<std::string> Manifest::verify() const {
  std::vector<std::string> bad;
  for (const auto& [rel, info] : doc_.at("files").items()) {
    const auto path = dir_ / rel;
    if (!std::filesystem::exists(path) || sha256_file(path) != info.at("sha256").get<std::string>()) {
      bad.push_back(rel);
    }
  }
  return bad;
}

}  // namespace cadlab::cli
