#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

namespace testutil {

inline std::filesystem::path scratch(const std::string& name) {
  const char* base = std::getenv("E2EVE_TEST_TMP");
  std::filesystem::path p = std::filesystem::path(base ? base : "/tmp/e2eve_test") / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
