#include "tinyfit/server/http.hpp"

#include <httplib.h>

#include <chrono>
#include <functional>

namespace tinyfit::server {

using nlohmann::json;

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::NotFound: return 404;
    case Errc::Unauthorized: return 401;
    case Errc::NotLinked:
    case Errc::JobAlreadyActive: return 409;
    case Errc::TooShort:
    case Errc::InsufficientExamples:
    case Errc::BadClassCount:
    case Errc::EmptyRecording:
    case Errc::BadTimestamps:
    case Errc::BadInput:
    case Errc::BadLabel: return 422;
    case Errc::BadRequest:
    case Errc::BadConfig: return 400;
    default: return 500;
  }
}

namespace {

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message,
                const Error::Details& details = {}) {
  res.status = status;
  res.set_content(json{{"code", code}, {"message", message}, {"details", details}}.dump(), "application/json");
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what(), e.details());
    } catch (const json::exception& e) {
      send_error(res, 400, to_string(Errc::BadRequest), std::string("invalid JSON body: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw Error(Errc::BadRequest, "request body must be a JSON object");
  return j;
}

template <class T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(Errc::BadRequest, std::string("missing field ") + key, {{"field", key}});
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::BadRequest, std::string("wrong type for field ") + key, {{"field", key}});
  }
}

template <class T>
std::optional<T> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return field<T>(j, key);
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.compare(0, prefix.size(), prefix) != 0) throw Error(Errc::Unauthorized, "missing bearer token");
  return h.substr(prefix.size());
}

json device_json(const Service& s, const Device& d) {
  json classes = json::array();
  for (const auto& c : s.class_counts(d.id)) classes.push_back({{"name", c.name}, {"windows", c.windows}});
  return {{"id", d.id},
          {"name", d.name},
          {"owner", d.owner ? json(*d.owner) : json(nullptr)},
          {"linked", d.owner.has_value()},
          {"version", d.version},
          {"classes", classes},
          {"examples_per_class", s.config().examples_per_class}};
}

json job_json(const Job& j) {
  return {{"id", j.id},
          {"device_id", j.device_id},
          {"status", to_string(j.status)},
          {"examples_per_class", j.examples_per_class},
          {"metrics", j.metrics},
          {"bundle_version", j.bundle_version ? json(*j.bundle_version) : json(nullptr)},
          {"failure", j.failure ? json(*j.failure) : json(nullptr)},
          {"created_at", j.created_at},
          {"finished_at", j.finished_at ? json(*j.finished_at) : json(nullptr)}};
}

json event_json(const InferenceEvent& e) {
  return {{"timestamp", e.timestamp},
          {"class_name", e.class_name},
          {"confidence", e.confidence},
          {"model_version", e.model_version},
          {"event_id", e.event_id ? json(*e.event_id) : json(nullptr)}};
}

InferenceEvent parse_event(const json& j) {
  if (!j.is_object()) throw Error(Errc::BadRequest, "event must be an object");
  InferenceEvent e;
  e.timestamp = field<double>(j, "timestamp");
  e.class_name = field<std::string>(j, "class_name");
  e.confidence = field<double>(j, "confidence");
  e.model_version = field<std::uint32_t>(j, "model_version");
  e.event_id = optional_field<std::string>(j, "event_id");
  return e;
}

std::vector<ImuSample> parse_samples(const json& j) {
  auto it = j.find("samples");
  if (it == j.end() || !it->is_array()) throw Error(Errc::BadRequest, "samples must be an array", {{"field", "samples"}});
  std::vector<ImuSample> out;
  out.reserve(it->size());
  for (const auto& row : *it) {
    if (!row.is_array() || row.size() != 1 + kChannels || !std::all_of(row.begin(), row.end(), [](const json& v) {
          return v.is_number();
        }))
      throw Error(Errc::BadRequest, "each sample must be [t, ax, ay, az, gx, gy, gz]",
                  {{"index", std::to_string(out.size())}});
    ImuSample s;
    s.t = row[0].get<double>();
    for (int c = 0; c < kChannels; ++c) s.channels[static_cast<std::size_t>(c)] = row[static_cast<std::size_t>(c) + 1].get<double>();
    out.push_back(s);
  }
  return out;
}

std::optional<double> query_double(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(key);
    return d;
  } catch (const std::exception&) {
    throw Error(Errc::BadRequest, std::string("query parameter ") + key + " must be a number", {{"param", key}});
  }
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), http_(std::make_unique<httplib::Server>()) { routes(); }

HttpServer::~HttpServer() { stop(); }

void HttpServer::routes() {
  auto& h = *http_;
  h.set_payload_max_length(64u << 20);
  h.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, Idempotency-Key");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Expose-Headers", "X-Bundle-Version");
  });
  h.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  auto device_id = [this](const httplib::Request& req) {
    std::string id = req.matches[1];
    service_.authorize(id, bearer(req));
    return id;
  };

  h.Post("/api/users", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto body = parse_body(req);
           const User u = service_.create_user(field<std::string>(body, "name"));
           send_json(res, 201, {{"id", u.id}, {"name", u.name}});
         }));

  h.Get(R"(/api/users/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const User u = service_.get_user(req.matches[1]);
          send_json(res, 200, {{"id", u.id}, {"name", u.name}});
        }));

  h.Post("/api/devices", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto body = parse_body(req);
           auto key = optional_field<std::string>(body, "idempotency_key");
           if (!key && req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
           const std::string name = optional_field<std::string>(body, "name").value_or("wristband");
           const auto r = service_.register_device(name, key);
           json j = device_json(service_, r.device);
           j["device_id"] = r.device.id;
           j["token"] = r.token;
           send_json(res, r.created ? 201 : 200, j);
         }));

  h.Get(R"(/api/devices/([^/]+))", guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, device_json(service_, service_.get_device(device_id(req))));
        }));

  h.Post(R"(/api/devices/([^/]+)/link)",
         guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
           const auto id = device_id(req);
           const auto body = parse_body(req);
           send_json(res, 200, device_json(service_, service_.link_device(id, field<std::string>(body, "user_id"))));
         }));

  h.Get(R"(/api/devices/([^/]+)/classes)",
        guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
          const auto d = service_.get_device(device_id(req));
          send_json(res, 200, device_json(service_, d)["classes"]);
        }));

  h.Post(R"(/api/devices/([^/]+)/classes)",
         guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
           const auto id = device_id(req);
           const auto body = parse_body(req);
           service_.add_class(id, field<std::string>(body, "name"));
           send_json(res, 200, device_json(service_, service_.get_device(id))["classes"]);
         }));

  h.Post(R"(/api/devices/([^/]+)/recordings)",
         guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
           const auto id = device_id(req);
           const auto body = parse_body(req);
           auto key = optional_field<std::string>(body, "idempotency_key");
           if (!key && req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
           const auto r = service_.upload_recording(id, field<std::string>(body, "class_name"),
                                                    field<double>(body, "rate_hz"), parse_samples(body), key);
           send_json(res, 201,
                     {{"recording_id", r.recording_id}, {"window_count", r.window_count},
                      {"sample_count", r.sample_count}});
         }));

  h.Post(R"(/api/devices/([^/]+)/personalize)",
         guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
           const auto job = service_.start_personalization(device_id(req));
           send_json(res, 202, job_json(service_.get_job(job)));
         }));

  h.Get(R"(/api/devices/([^/]+)/jobs)", guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
          json out = json::array();
          for (const auto& j : service_.device_jobs(device_id(req))) out.push_back(job_json(j));
          send_json(res, 200, out);
        }));

  h.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const Job job = service_.get_job(req.matches[1]);
          service_.authorize(job.device_id, bearer(req));
          send_json(res, 200, job_json(job));
        }));

  h.Get(R"(/api/devices/([^/]+)/firmware)",
        guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
          const auto id = device_id(req);
          const auto have = query_double(req, "have_version").value_or(0.0);
          if (have < 0 || have != std::floor(have) || have > 4294967295.0)
            throw Error(Errc::BadRequest, "have_version must be a non-negative integer");
          const auto bundle = service_.poll_firmware(id, static_cast<std::uint32_t>(have));
          if (!bundle) {
            res.status = 204;
            return;
          }
          res.status = 200;
          res.set_header("X-Bundle-Version", std::to_string(bundle->version));
          res.set_content(std::string(bundle->bytes.begin(), bundle->bytes.end()), "application/octet-stream");
        }));

  h.Post(R"(/api/devices/([^/]+)/inferences)",
         guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
           const auto id = device_id(req);
           const auto body = parse_body(req);
           std::vector<InferenceEvent> events;
           if (body.contains("events")) {
             if (!body["events"].is_array()) throw Error(Errc::BadRequest, "events must be an array");
             for (const auto& e : body["events"]) events.push_back(parse_event(e));
           } else {
             events.push_back(parse_event(body));
           }
           const auto stored = service_.record_inferences(id, events);
           send_json(res, 201, {{"received", events.size()}, {"stored", stored}});
         }));

  h.Get(R"(/api/devices/([^/]+)/history)",
        guarded([this, device_id](const httplib::Request& req, httplib::Response& res) {
          const auto id = device_id(req);
          json events = json::array();
          for (const auto& e : service_.history(id, query_double(req, "from"), query_double(req, "to")))
            events.push_back(event_json(e));
          send_json(res, 200, {{"device_id", id}, {"events", events}});
        }));
}

int HttpServer::start(const std::string& host, int port) {
  port_ = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port_;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!http_->bind_to_port(host, port)) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  http_->listen_after_bind();
}

void HttpServer::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace tinyfit::server
