#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tinyfit/api.hpp"
#include "tinyfit/error.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::device {

struct HttpRequest {
  std::string method;  // GET or POST
  std::string path;    // including the query string
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Request/response channel to the server. Connection-level failures raise
/// Errc::ServerUnreachable; any HTTP status is returned as a response.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// Thread-safe: every request opens its own client.
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string host, int port, double timeout_s = 10.0);
  HttpResponse send(const HttpRequest& request) override;

 private:
  std::string host_;
  int port_;
  double timeout_s_;
};

/// Pass-through that keeps a copy of every request and response status.
class TrafficRecorder final : public Transport {
 public:
  struct Entry {
    HttpRequest request;
    int status = 0;  // 0 when the inner transport threw
  };

  explicit TrafficRecorder(Transport& inner) : inner_(inner) {}
  HttpResponse send(const HttpRequest& request) override;

  std::vector<Entry> entries() const;
  std::size_t size() const;
  void clear();

 private:
  Transport& inner_;
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
};

/// Pass-through whose responses can be rewritten, e.g. to corrupt bundle
/// bytes or simulate an outage.
class FaultInjector final : public Transport {
 public:
  using Rewrite = std::function<void(const HttpRequest&, HttpResponse&)>;

  explicit FaultInjector(Transport& inner) : inner_(inner) {}
  HttpResponse send(const HttpRequest& request) override;

  void set_rewrite(Rewrite r);
  void set_offline(bool offline);

 private:
  Transport& inner_;
  std::mutex mu_;
  Rewrite rewrite_;
  bool offline_ = false;
};

/// Typed wrapper over the server's HTTP API. Non-2xx responses raise Error
/// with the server's code, message and details.
class ApiClient {
 public:
  explicit ApiClient(Transport& transport, std::string token = {})
      : transport_(transport), token_(std::move(token)) {}

  void set_token(std::string token) { token_ = std::move(token); }
  const std::string& token() const noexcept { return token_; }

  std::string create_user(const std::string& name);
  /// Returns (device_id, token) and adopts the token.
  std::pair<std::string, std::string> register_device(const std::string& name,
                                                      const std::optional<std::string>& idempotency_key = {});
  nlohmann::json get_device(const std::string& device_id);
  nlohmann::json link(const std::string& device_id, const std::string& user_id);
  nlohmann::json add_class(const std::string& device_id, const std::string& class_name);
  UploadResult upload_recording(const std::string& device_id, const std::string& class_name, double rate_hz,
                                const std::vector<ImuSample>& samples,
                                const std::optional<std::string>& idempotency_key = {});
  std::string personalize(const std::string& device_id);
  nlohmann::json job(const std::string& job_id);
  std::optional<Bundle> firmware(const std::string& device_id, std::uint32_t have_version);
  std::size_t post_inferences(const std::string& device_id, const std::vector<InferenceEvent>& events);
  std::vector<InferenceEvent> history(const std::string& device_id, std::optional<double> from = {},
                                      std::optional<double> to = {});

 private:
  HttpResponse call(const std::string& method, const std::string& path, const nlohmann::json* body = nullptr);

  Transport& transport_;
  std::string token_;
};

}  // namespace tinyfit::device
