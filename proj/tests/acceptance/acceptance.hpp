#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace acceptance {

struct Context {
  std::filesystem::path workdir;
  int g_seeds = 3;
};

struct Outcome {
  bool pass = false;
  std::string summary;
  nlohmann::json detail = nlohmann::json::object();
};

Outcome check_synthesis(const Context& ctx);      // A
Outcome check_quantizer(const Context& ctx);      // B
Outcome check_artist(const Context& ctx);         // C
Outcome check_overfit(const Context& ctx);        // D
Outcome check_sampling(const Context& ctx);       // E
Outcome check_metrics(const Context& ctx);        // F
Outcome check_trends(const Context& ctx);         // G
Outcome check_service(const Context& ctx);        // H

/// Trained toy checkpoint directory shared by D and H (trained on first use).
std::filesystem::path toy_checkpoint(const Context& ctx);

}  // namespace acceptance
