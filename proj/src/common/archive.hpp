#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace e2eve {

struct NamedTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

/// Self-describing checkpoint container:
///   "E2EVEAR1" | u64 header length | JSON header | float32 payload | blob payload.
/// The header carries free-form metadata plus a table of (name, shape, offset).
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, NamedTensor> tensors;
  std::map<std::string, std::vector<std::uint8_t>> blobs;

  std::vector<std::uint8_t> serialize() const;
  static Archive deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::string sha256_hex(const void* data, size_t n);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// git-describe-style version baked in at configure time.
const char* version_string();

}  // namespace e2eve
