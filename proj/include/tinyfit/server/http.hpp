#pragma once

#include <memory>
#include <string>
#include <thread>

#include "tinyfit/server/service.hpp"

namespace httplib {
class Server;
}

namespace tinyfit::server {

/// JSON-over-HTTP binding of Service. Device-scoped routes require
/// "Authorization: Bearer <device token>"; errors are {code, message, details}.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port;
  /// the bound port is returned.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

  int port() const noexcept { return port_; }

 private:
  void routes();

  Service& service_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  int port_ = 0;
};

/// HTTP status used for each error code.
int http_status(Errc code) noexcept;

}  // namespace tinyfit::server
