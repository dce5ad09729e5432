#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "medco/error.hpp"
#include "medco/service.hpp"

namespace medco {

struct HttpServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string token;  // shared bearer token; empty disables the check
  std::chrono::milliseconds stream_idle{15000};  // event streams end after this long without news
};

int http_status_for(ErrorCode code);

/// The /v1 HTTP API over a SessionService.
///
///   GET    /v1/health
///   GET    /v1/cases
///   POST   /v1/sessions                      {"patient_id", "mode", "learn"}
///   GET    /v1/sessions/{id}
///   DELETE /v1/sessions/{id}
///   POST   /v1/sessions/{id}/message         {"text"}
///   POST   /v1/sessions/{id}/step
///   GET    /v1/sessions/{id}/events          server-sent events, id = turn
///   POST   /v1/sessions/{id}/recall
///   POST   /v1/sessions/{id}/assess
///   GET    /v1/sessions/{id}/transcript
///
/// Errors are {"error": {"code", "message"}}.
class HttpServer {
 public:
  HttpServer(SessionService& service, HttpServerOptions options);
  ~HttpServer();

  /// Binds and serves on a background thread. Returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace medco
