#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "artist/artist.hpp"

namespace e2eve::service {

struct ServiceConfig {
  std::filesystem::path ckpt_dir;     // holds artist.ckpt and the quantizers it references
  std::filesystem::path samples_dir;  // content-addressed PNGs; defaults to <tmp>/e2eve-samples
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int max_jobs = 2;
  int session_ttl_seconds = 3600;
};

/// HTTP editing service. Routes live under /v1; see README for the contract.
class Server {
 public:
  explicit Server(ServiceConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Serve an already loaded model (weights are shared read-only).
  void set_model(std::shared_ptr<const artist::ArtistModel> model);
  /// Loads <ckpt_dir>/artist.ckpt on a background thread; generate answers 503 until it is ready.
  void load_model_async();
  bool model_loaded() const;
  /// Empty while loading or loaded; the failure message otherwise.
  std::string model_error() const;

  /// Binds the socket and returns the actual port.
  int bind();
  /// Serves until stop(). bind() must have succeeded.
  void run();
  /// bind() + run() on a background thread; returns the port.
  int start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace e2eve::service
