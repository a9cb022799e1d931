#include "tinyfit/device/transport.hpp"

#include <httplib.h>

#include <cmath>

namespace tinyfit::device {

using nlohmann::json;

HttpTransport::HttpTransport(std::string host, int port, double timeout_s)
    : host_(std::move(host)), port_(port), timeout_s_(timeout_s) {}

HttpResponse HttpTransport::send(const HttpRequest& request) {
  httplib::Client cli(host_, port_);
  const auto secs = static_cast<time_t>(timeout_s_);
  const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers(request.headers.begin(), request.headers.end());

  httplib::Result res = request.method == "GET"
                            ? cli.Get(request.path, headers)
                            : cli.Post(request.path, headers, request.body, request.content_type);
  if (!res)
    throw Error(Errc::ServerUnreachable, "cannot reach " + host_ + ":" + std::to_string(port_),
                {{"error", httplib::to_string(res.error())}});
  HttpResponse out;
  out.status = res->status;
  out.body = res->body;
  for (const auto& [k, v] : res->headers) out.headers.emplace(k, v);
  return out;
}

HttpResponse TrafficRecorder::send(const HttpRequest& request) {
  Entry e{request, 0};
  try {
    HttpResponse r = inner_.send(request);
    e.status = r.status;
    std::lock_guard lock(mu_);
    entries_.push_back(std::move(e));
    return r;
  } catch (...) {
    std::lock_guard lock(mu_);
    entries_.push_back(std::move(e));
    throw;
  }
}

std::vector<TrafficRecorder::Entry> TrafficRecorder::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t TrafficRecorder::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void TrafficRecorder::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

HttpResponse FaultInjector::send(const HttpRequest& request) {
  Rewrite rewrite;
  {
    std::lock_guard lock(mu_);
    if (offline_) throw Error(Errc::ServerUnreachable, "injected outage");
    rewrite = rewrite_;
  }
  HttpResponse r = inner_.send(request);
  if (rewrite) rewrite(request, r);
  return r;
}

void FaultInjector::set_rewrite(Rewrite r) {
  std::lock_guard lock(mu_);
  rewrite_ = std::move(r);
}

void FaultInjector::set_offline(bool offline) {
  std::lock_guard lock(mu_);
  offline_ = offline;
}

HttpResponse ApiClient::call(const std::string& method, const std::string& path, const json* body) {
  HttpRequest req;
  req.method = method;
  req.path = path;
  if (body) req.body = body->dump();
  if (!token_.empty()) req.headers["Authorization"] = "Bearer " + token_;
  HttpResponse res = transport_.send(req);
  if (res.status >= 200 && res.status < 300) return res;

  Errc code = res.status >= 500 ? Errc::Io : Errc::BadRequest;
  std::string message = "HTTP " + std::to_string(res.status);
  Error::Details details{{"status", std::to_string(res.status)}};
  try {
    const json err = json::parse(res.body);
    if (auto c = errc_from_string(err.value("code", ""))) code = *c;
    message = err.value("message", message);
    if (err.contains("details") && err["details"].is_object())
      for (const auto& [k, v] : err["details"].items()) details[k] = v.is_string() ? v.get<std::string>() : v.dump();
  } catch (const json::exception&) {
  }
  throw Error(code, message, std::move(details));
}

std::string ApiClient::create_user(const std::string& name) {
  const json body = {{"name", name}};
  return json::parse(call("POST", "/api/users", &body).body).at("id").get<std::string>();
}

std::pair<std::string, std::string> ApiClient::register_device(const std::string& name,
                                                               const std::optional<std::string>& key) {
  json body = {{"name", name}};
  if (key) body["idempotency_key"] = *key;
  const json r = json::parse(call("POST", "/api/devices", &body).body);
  token_ = r.at("token").get<std::string>();
  return {r.at("device_id").get<std::string>(), token_};
}

json ApiClient::get_device(const std::string& device_id) {
  return json::parse(call("GET", "/api/devices/" + device_id).body);
}

json ApiClient::link(const std::string& device_id, const std::string& user_id) {
  const json body = {{"user_id", user_id}};
  return json::parse(call("POST", "/api/devices/" + device_id + "/link", &body).body);
}

json ApiClient::add_class(const std::string& device_id, const std::string& class_name) {
  const json body = {{"name", class_name}};
  return json::parse(call("POST", "/api/devices/" + device_id + "/classes", &body).body);
}

UploadResult ApiClient::upload_recording(const std::string& device_id, const std::string& class_name, double rate_hz,
                                         const std::vector<ImuSample>& samples,
                                         const std::optional<std::string>& key) {
  json rows = json::array();
  for (const auto& s : samples) {
    json row = json::array({s.t});
    for (double v : s.channels) row.push_back(v);
    rows.push_back(std::move(row));
  }
  json body = {{"class_name", class_name}, {"rate_hz", rate_hz}, {"samples", std::move(rows)}};
  if (key) body["idempotency_key"] = *key;
  const json r = json::parse(call("POST", "/api/devices/" + device_id + "/recordings", &body).body);
  return {r.at("recording_id").get<std::int64_t>(), r.at("window_count").get<std::size_t>(),
          r.at("sample_count").get<std::size_t>()};
}

std::string ApiClient::personalize(const std::string& device_id) {
  const json body = json::object();
  return json::parse(call("POST", "/api/devices/" + device_id + "/personalize", &body).body)
      .at("id")
      .get<std::string>();
}

json ApiClient::job(const std::string& job_id) { return json::parse(call("GET", "/api/jobs/" + job_id).body); }

std::optional<Bundle> ApiClient::firmware(const std::string& device_id, std::uint32_t have_version) {
  const auto r = call("GET", "/api/devices/" + device_id + "/firmware?have_version=" + std::to_string(have_version));
  if (r.status == 204) return std::nullopt;
  Bundle b;
  auto it = r.headers.find("X-Bundle-Version");
  if (it == r.headers.end()) throw Error(Errc::Malformed, "firmware response lacks X-Bundle-Version");
  b.version = static_cast<std::uint32_t>(std::stoul(it->second));
  b.bytes.assign(r.body.begin(), r.body.end());
  return b;
}

std::size_t ApiClient::post_inferences(const std::string& device_id, const std::vector<InferenceEvent>& events) {
  json arr = json::array();
  for (const auto& e : events) {
    json j = {{"timestamp", e.timestamp},
              {"class_name", e.class_name},
              {"confidence", e.confidence},
              {"model_version", e.model_version}};
    if (e.event_id) j["event_id"] = *e.event_id;
    arr.push_back(std::move(j));
  }
  const json body = {{"events", std::move(arr)}};
  return json::parse(call("POST", "/api/devices/" + device_id + "/inferences", &body).body)
      .at("stored")
      .get<std::size_t>();
}

std::vector<InferenceEvent> ApiClient::history(const std::string& device_id, std::optional<double> from,
                                               std::optional<double> to) {
  std::string path = "/api/devices/" + device_id + "/history";
  char sep = '?';
  auto add = [&](const char* k, std::optional<double> v) {
    if (!v) return;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    path += sep;
    path += k;
    path += '=';
    path += buf;
    sep = '&';
  };
  add("from", from);
  add("to", to);
  const json r = json::parse(call("GET", path).body);
  std::vector<InferenceEvent> out;
  for (const auto& e : r.at("events")) {
    InferenceEvent ev;
    ev.timestamp = e.at("timestamp").get<double>();
    ev.class_name = e.at("class_name").get<std::string>();
    ev.confidence = e.at("confidence").get<double>();
    ev.model_version = e.at("model_version").get<std::uint32_t>();
    if (!e.at("event_id").is_null()) ev.event_id = e.at("event_id").get<std::string>();
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace tinyfit::device
