#include "common/archive.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "common/error.hpp"

#ifndef E2EVE_VERSION
#define E2EVE_VERSION "unknown"
#endif

namespace e2eve {

static_assert(std::endian::native == std::endian::little, "archive format assumes little-endian hosts");

namespace {
constexpr char kMagic[8] = {'E', '2', 'E', 'V', 'E', 'A', 'R', '1'};
}

std::vector<std::uint8_t> Archive::serialize() const {
  nlohmann::json header;
  header["meta"] = meta;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    std::int64_t n = 1;
    for (auto d : t.shape) n *= d;
    require(n == static_cast<std::int64_t>(t.data.size()), ErrorCode::ShapeError,
            "tensor " + name + " shape does not match its data");
    table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size();
  }
  header["tensors"] = table;
  nlohmann::json blob_table = nlohmann::json::array();
  std::uint64_t blob_offset = 0;
  for (const auto& [name, b] : blobs) {
    blob_table.push_back({{"name", name}, {"bytes", b.size()}, {"offset", blob_offset}});
    blob_offset += b.size();
  }
  header["blobs"] = blob_table;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset * 4);
  out.insert(out.end(), kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  const auto* lp = reinterpret_cast<const std::uint8_t*>(&len);
  out.insert(out.end(), lp, lp + 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  for (const auto& [name, b] : blobs) out.insert(out.end(), b.begin(), b.end());
  return out;
}

Archive Archive::deserialize(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 8) == 0, ErrorCode::FormatError,
          "not an e2eve archive");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  require(16 + len <= bytes.size(), ErrorCode::FormatError, "truncated archive header");
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  Archive a;
  a.meta = header.at("meta");
  const size_t base = 16 + len;
  size_t float_count = 0;
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t n = 1;
    for (auto d : t.shape) n *= d;
    const auto off = entry.at("offset").get<std::uint64_t>();
    require(base + (off + n) * sizeof(float) <= bytes.size(), ErrorCode::FormatError, "truncated archive payload");
    float_count = std::max<size_t>(float_count, off + static_cast<size_t>(n));
    t.data.resize(static_cast<size_t>(n));
    std::memcpy(t.data.data(), bytes.data() + base + off * sizeof(float), static_cast<size_t>(n) * sizeof(float));
    a.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  const size_t blob_base = base + float_count * sizeof(float);
  if (header.contains("blobs")) {
    for (const auto& entry : header["blobs"]) {
      const auto off = entry.at("offset").get<std::uint64_t>();
      const auto n = entry.at("bytes").get<std::uint64_t>();
      require(blob_base + off + n <= bytes.size(), ErrorCode::FormatError, "truncated archive blob");
      a.blobs.emplace(entry.at("name").get<std::string>(),
                      std::vector<std::uint8_t>(bytes.begin() + static_cast<long>(blob_base + off),
                                                bytes.begin() + static_cast<long>(blob_base + off + n)));
    }
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

Archive Archive::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IOFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IOFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IOFailure, "short write to " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string sha256_hex(const void* data, size_t n) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1) fail(ErrorCode::Internal, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  s.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    s.push_back(hex[digest[i] >> 4]);
    s.push_back(hex[digest[i] & 15]);
  }
  return s;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

const char* version_string() { return E2EVE_VERSION; }

}  // namespace e2eve
